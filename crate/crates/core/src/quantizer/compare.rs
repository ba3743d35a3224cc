use rayon::prelude::*;

use crate::error::{contract, Result};
use crate::graph::{Executor, ModelGraph};
use crate::tensor::Tensor;

/// An input image with its ground-truth class index.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledImage {
    pub image: Tensor<f32>,
    pub label: usize,
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(v: &[f32]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Output probability vectors for every image, in input order.
pub fn predict(g: &ModelGraph, images: &[&Tensor<f32>]) -> Result<Vec<Vec<f32>>> {
    Executor::new(g)?;
    images
        .par_iter()
        .map_init(
            || Executor::new(g).expect("graph validated"),
            |ex, img| ex.run(img),
        )
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct AgreementReport {
    pub samples: usize,
    /// Fraction of images where both models pick the same class.
    pub agreement: f64,
    pub accuracy_a: f64,
    pub accuracy_b: f64,
    /// Per-class recall of each model; classes absent from the labels report 0.
    pub per_class_accuracy_a: Vec<f64>,
    pub per_class_accuracy_b: Vec<f64>,
    pub class_counts: Vec<usize>,
    pub max_prob_deviation: f64,
}

/// Runs two graphs of the same architecture over a labeled dataset.
pub fn compare_models(
    a: &ModelGraph,
    b: &ModelGraph,
    data: &[LabeledImage],
) -> Result<AgreementReport> {
    if !a.same_architecture(b) {
        return Err(contract(
            "compare_models: graphs have different architectures",
        ));
    }
    if data.is_empty() {
        return Err(contract("compare_models: empty dataset"));
    }
    let images: Vec<&Tensor<f32>> = data.iter().map(|d| &d.image).collect();
    let pa = predict(a, &images)?;
    let pb = predict(b, &images)?;
    let classes = pa[0].len();
    if let Some(d) = data.iter().find(|d| d.label >= classes) {
        return Err(contract(format!(
            "label {} outside {classes} model outputs",
            d.label
        )));
    }

    let mut counts = vec![0usize; classes];
    let mut hits_a = vec![0usize; classes];
    let mut hits_b = vec![0usize; classes];
    let mut agree = 0usize;
    let mut max_dev = 0.0f64;
    for ((d, ya), yb) in data.iter().zip(&pa).zip(&pb) {
        let (ca, cb) = (argmax(ya), argmax(yb));
        counts[d.label] += 1;
        hits_a[d.label] += usize::from(ca == d.label);
        hits_b[d.label] += usize::from(cb == d.label);
        agree += usize::from(ca == cb);
        for (x, y) in ya.iter().zip(yb) {
            max_dev = max_dev.max((*x as f64 - *y as f64).abs());
        }
    }
    let n = data.len() as f64;
    let rate = |hits: &[usize]| -> Vec<f64> {
        hits.iter()
            .zip(&counts)
            .map(|(&h, &c)| if c == 0 { 0.0 } else { h as f64 / c as f64 })
            .collect()
    };
    Ok(AgreementReport {
        samples: data.len(),
        agreement: agree as f64 / n,
        accuracy_a: hits_a.iter().sum::<usize>() as f64 / n,
        accuracy_b: hits_b.iter().sum::<usize>() as f64 / n,
        per_class_accuracy_a: rate(&hits_a),
        per_class_accuracy_b: rate(&hits_b),
        class_counts: counts,
        max_prob_deviation: max_dev,
    })
}
