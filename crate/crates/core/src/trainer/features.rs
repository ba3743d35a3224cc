use rayon::prelude::*;

use crate::error::{contract, Result};
use crate::graph::{Executor, LayerKind, ModelGraph, NumericMode, Weight};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

use super::head::TrainReport;

/// Row-major matrix of per-image feature vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix<T> {
    rows: usize,
    dim: usize,
    data: Vec<T>,
}

impl<T: Scalar> FeatureMatrix<T> {
    pub fn new(rows: usize, dim: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * dim {
            return Err(contract(format!(
                "feature matrix {rows}x{dim} needs {} values, got {}",
                rows * dim,
                data.len()
            )));
        }
        Ok(Self { rows, dim, data })
    }

    pub fn from_rows(rows: Vec<Vec<T>>) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if let Some(r) = rows.iter().find(|r| r.len() != dim) {
            return Err(contract(format!(
                "ragged feature rows: {} vs {dim}",
                r.len()
            )));
        }
        let n = rows.len();
        Self::new(n, dim, rows.into_iter().flatten().collect())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[T]> {
        self.data.chunks_exact(self.dim.max(1)).take(self.rows)
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn cast<U: Scalar>(&self) -> FeatureMatrix<U> {
        FeatureMatrix {
            rows: self.rows,
            dim: self.dim,
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }

    /// Rows picked by index, in the given order.
    pub fn select(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.dim);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self {
            rows: idx.len(),
            dim: self.dim,
            data,
        }
    }
}

/// Affine normalization `(x - mean) * scale` fitted on training features:
/// each feature is centred, and all share one scale, the inverse of the
/// pooled standard deviation. A shared scale keeps the folded first-layer
/// weights within one order of magnitude of each other, which per-tensor
/// int8 weights need; per-feature scaling would blow up near-constant
/// features by orders of magnitude.
#[derive(Clone, Debug, PartialEq)]
pub struct Standardizer<T> {
    pub mean: Vec<T>,
    pub scale: Vec<T>,
}

impl<T: Scalar> Standardizer<T> {
    pub fn fit(x: &FeatureMatrix<T>) -> Self {
        let n = x.rows().max(1) as f64;
        let mut mean = vec![0.0f64; x.dim()];
        for r in x.iter() {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v.as_f64();
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut ss = 0.0f64;
        for r in x.iter() {
            for (v, m) in r.iter().zip(&mean) {
                ss += (v.as_f64() - m).powi(2);
            }
        }
        let sd = (ss / (n * x.dim().max(1) as f64)).sqrt();
        // constant features pass through unscaled
        let s = if sd > 1e-12 { 1.0 / sd } else { 1.0 };
        Self {
            mean: mean.into_iter().map(T::of).collect(),
            scale: vec![T::of(s); x.dim()],
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![T::zero(); dim],
            scale: vec![T::one(); dim],
        }
    }

    pub fn apply(&self, x: &FeatureMatrix<T>) -> FeatureMatrix<T> {
        let data = x
            .iter()
            .flat_map(|r| {
                r.iter()
                    .zip(&self.mean)
                    .zip(&self.scale)
                    .map(|((&v, &m), &s)| (v - m) * s)
            })
            .collect();
        FeatureMatrix {
            rows: x.rows(),
            dim: x.dim(),
            data,
        }
    }
}

/// Global-average-pool features of each image, in input order.
pub fn extract_features(g: &ModelGraph, images: &[Tensor<f32>]) -> Result<FeatureMatrix<f32>> {
    Executor::new(g)?;
    let rows: Vec<Vec<f32>> = images
        .par_iter()
        .map_init(
            || Executor::new(g).expect("graph validated"),
            |ex, img| ex.features(img),
        )
        .collect::<Result<_>>()?;
    if rows.is_empty() {
        let dim = Executor::new(g)?.feature_dim()?;
        return FeatureMatrix::new(0, dim, Vec::new());
    }
    FeatureMatrix::from_rows(rows)
}

/// Writes a trained head into the two dense layers of a float graph,
/// folding the feature standardization into the first one.
pub fn install_head<T: Scalar>(g: &mut ModelGraph, report: &TrainReport<T>) -> Result<()> {
    if g.mode != NumericMode::Float32 {
        return Err(contract(
            "a trained head can only be installed into a float32 graph",
        ));
    }
    let dense: Vec<(String, usize)> = g
        .layers
        .iter()
        .filter_map(|l| match l.kind {
            LayerKind::Dense { units, .. } => Some((l.name.clone(), units)),
            _ => None,
        })
        .collect();
    let [(hidden_name, hidden), (logits_name, classes)] = dense.as_slice() else {
        return Err(contract(format!(
            "expected two dense layers in the head, found {}",
            dense.len()
        )));
    };
    let head = &report.head;
    let std = &report.standardizer;
    if (*hidden, *classes) != (head.hidden, head.classes) {
        return Err(contract(format!(
            "graph head is {hidden}->{classes}, trained head is {}->{}",
            head.hidden, head.classes
        )));
    }
    let dim = head.dim;
    let expect = g.weight(&format!("{hidden_name}.weight"))?.shape.clone();
    if expect.dims() != [dim, *hidden] {
        return Err(contract(format!(
            "graph feature width {expect} does not match trained dim {dim}"
        )));
    }

    let (w1, b1, w2, b2) = head.parts();
    let mut fw1 = vec![0f32; dim * hidden];
    let mut fb1: Vec<f64> = b1.iter().map(|b| b.as_f64()).collect();
    for i in 0..dim {
        let (m, s) = (std.mean[i].as_f64(), std.scale[i].as_f64());
        for j in 0..*hidden {
            let w = w1[i * hidden + j].as_f64();
            fw1[i * hidden + j] = (w * s) as f32;
            fb1[j] -= m * s * w;
        }
    }
    let to32 = |v: &[T]| v.iter().map(|x| x.as_f64() as f32).collect::<Vec<_>>();
    let shape = |d: &[usize]| Shape::new(d.to_vec());
    let updates = [
        (
            format!("{hidden_name}.weight"),
            Weight::f32(shape(&[dim, *hidden])?, fw1)?,
        ),
        (
            format!("{hidden_name}.bias"),
            Weight::f32(shape(&[*hidden])?, fb1.iter().map(|&b| b as f32).collect())?,
        ),
        (
            format!("{logits_name}.weight"),
            Weight::f32(shape(&[*hidden, *classes])?, to32(w2))?,
        ),
        (
            format!("{logits_name}.bias"),
            Weight::f32(shape(&[*classes])?, to32(b2))?,
        ),
    ];
    for (name, w) in updates {
        g.weights.insert(name, w);
    }
    g.meta.insert("head_trained".into(), "true".into());
    Ok(())
}
