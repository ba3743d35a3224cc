//! Central finite differences against the head's analytic gradient.

use cashew_core::trainer::{FeatureMatrix, HeadParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-6;
pub const TOLERANCE: f64 = 1e-4;

/// Random head with non-zero biases, so every parameter carries gradient,
/// plus a random labelled batch.
pub fn random_instance(
    seed: u64,
    rows: usize,
    dim: usize,
    classes: usize,
) -> (HeadParams<f64>, FeatureMatrix<f64>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut head = HeadParams::<f64>::init(dim, 4, classes, seed);
    for i in 0..head.params.len() {
        if !head.is_weight(i) {
            head.params[i] = rng.random_range(-0.5..0.5);
        }
    }
    let data = (0..rows * dim)
        .map(|_| rng.random_range(-1.5..1.5))
        .collect();
    let labels = (0..rows).map(|_| rng.random_range(0..classes)).collect();
    (head, FeatureMatrix::new(rows, dim, data).unwrap(), labels)
}

pub fn finite_difference(
    head: &HeadParams<f64>,
    x: &FeatureMatrix<f64>,
    y: &[usize],
    i: usize,
) -> f64 {
    let mut p = head.clone();
    p.params[i] = head.params[i] + STEP;
    let up = p.loss_and_grad(x, y).unwrap().0;
    p.params[i] = head.params[i] - STEP;
    let down = p.loss_and_grad(x, y).unwrap().0;
    (up - down) / (2.0 * STEP)
}

/// Checks every parameter of `instances` random 5-feature, 3-class heads.
/// Returns the worst relative error seen.
pub fn gradient_check(instances: u64) -> Result<f64, String> {
    let mut worst = 0.0f64;
    for seed in 0..instances {
        let (head, x, y) = random_instance(seed, 6, 5, 3);
        let (_, grad) = head.loss_and_grad(&x, &y).map_err(|e| e.to_string())?;
        for (i, &g) in grad.iter().enumerate() {
            let fd = finite_difference(&head, &x, &y, i);
            let rel = (g - fd).abs() / (g.abs() + 1e-8);
            if rel >= TOLERANCE {
                return Err(format!(
                    "seed {seed} param {i}: analytic {g} numeric {fd} (rel {rel:.2e})"
                ));
            }
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}
