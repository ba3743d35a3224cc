//! Classifier-head training on frozen backbone features.

mod features;
mod head;

pub use features::{extract_features, install_head, FeatureMatrix, Standardizer};
pub use head::{train_head, HeadParams, TrainReport};

use std::f64::consts::PI;

use crate::error::{contract, Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub total_steps: usize,
    pub lr_max: f64,
    pub div_factor: f64,
    pub final_div_factor: f64,
    pub pct_start: f64,
    pub weight_decay: f64,
    pub clip_norm: Option<f64>,
    pub dropout_rate: f64,
    pub batch_size: usize,
    pub hidden_units: usize,
    pub seed: u64,
    /// Seed of the dropout-mask stream; derived from `seed` when unset.
    pub dropout_seed: Option<u64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            total_steps: 300,
            lr_max: 0.05,
            div_factor: 25.0,
            final_div_factor: 1e4,
            pct_start: 0.3,
            weight_decay: 1e-4,
            clip_norm: Some(5.0),
            dropout_rate: 0.1,
            batch_size: 32,
            hidden_units: 16,
            seed: 0,
            dropout_seed: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(contract(format!("{name} must be positive, got {v}")))
            }
        };
        if self.total_steps < 2 {
            return Err(contract(format!(
                "total_steps must be at least 2, got {}",
                self.total_steps
            )));
        }
        positive("lr_max", self.lr_max)?;
        positive("div_factor", self.div_factor)?;
        positive("final_div_factor", self.final_div_factor)?;
        if !(self.pct_start > 0.0 && self.pct_start < 1.0) {
            return Err(contract(format!(
                "pct_start must lie in (0, 1), got {}",
                self.pct_start
            )));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(contract(format!(
                "weight_decay must be >= 0, got {}",
                self.weight_decay
            )));
        }
        if let Some(c) = self.clip_norm {
            positive("clip_norm", c)?;
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(contract(format!(
                "dropout_rate must lie in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        if self.batch_size == 0 || self.hidden_units == 0 {
            return Err(contract("batch_size and hidden_units must be positive"));
        }
        Ok(())
    }

    /// Step at which the schedule reaches `lr_max`.
    pub fn peak_step(&self) -> usize {
        ((self.pct_start * self.total_steps as f64).round() as usize).clamp(1, self.total_steps - 1)
    }
}

/// Interpolates from `a` (t = 0) to `b` (t = 1) along half a cosine.
fn cos_interp(a: f64, b: f64, t: f64) -> f64 {
    if a == b {
        return a;
    }
    let w = (1.0 - (PI * t).cos()) / 2.0;
    a * (1.0 - w) + b * w
}

/// One-cycle learning rate: cosine warmup from `lr_max / div_factor` to
/// `lr_max` at the peak step, then cosine annealing down to
/// `lr_max / (div_factor * final_div_factor)` at `total_steps`.
pub fn one_cycle_lr(step: usize, cfg: &TrainConfig) -> Result<f64> {
    cfg.validate()?;
    if step > cfg.total_steps {
        return Err(contract(format!(
            "step {step} beyond total_steps {}",
            cfg.total_steps
        )));
    }
    let start = cfg.lr_max / cfg.div_factor;
    let end = cfg.lr_max / (cfg.div_factor * cfg.final_div_factor);
    let peak = cfg.peak_step();
    Ok(if step <= peak {
        cos_interp(start, cfg.lr_max, step as f64 / peak as f64)
    } else {
        cos_interp(
            cfg.lr_max,
            end,
            (step - peak) as f64 / (cfg.total_steps - peak) as f64,
        )
    })
}

/// Rescales `grads` so their L2 norm is at most `max_norm`. Returns the
/// clipped vector and the norm before clipping.
pub fn clip_gradients<T: Scalar>(grads: &[T], max_norm: f64) -> Result<(Vec<T>, f64)> {
    if !(max_norm.is_finite() && max_norm > 0.0) {
        return Err(contract(format!(
            "max_norm must be positive, got {max_norm}"
        )));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::Training(format!("non-finite gradient at index {i}")));
    }
    let norm = grads
        .iter()
        .map(|g| g.as_f64() * g.as_f64())
        .sum::<f64>()
        .sqrt();
    if norm <= max_norm {
        return Ok((grads.to_vec(), norm));
    }
    let s = T::of(max_norm / norm);
    Ok((grads.iter().map(|&g| g * s).collect(), norm))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(total: usize) -> TrainConfig {
        TrainConfig {
            total_steps: total,
            lr_max: 0.1,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn schedule_endpoints_are_exact() {
        let c = cfg(100);
        assert_eq!(one_cycle_lr(0, &c).unwrap(), 0.1 / 25.0);
        assert_eq!(one_cycle_lr(30, &c).unwrap(), 0.1);
        assert_eq!(one_cycle_lr(100, &c).unwrap(), 0.1 / (25.0 * 1e4));
        assert!(one_cycle_lr(101, &c).is_err());
    }

    #[test]
    fn schedule_rises_then_falls() {
        let c = cfg(50);
        let lrs: Vec<f64> = (0..=50).map(|s| one_cycle_lr(s, &c).unwrap()).collect();
        let peak = c.peak_step();
        assert!(lrs[..=peak].windows(2).all(|w| w[0] < w[1]));
        assert!(lrs[peak..].windows(2).all(|w| w[0] > w[1]));
    }

    #[test]
    fn flat_schedule_is_constant() {
        let c = TrainConfig {
            div_factor: 1.0,
            final_div_factor: 1.0,
            ..cfg(17)
        };
        assert!((0..=17).all(|s| one_cycle_lr(s, &c).unwrap() == 0.1));
    }

    #[test]
    fn short_schedules_keep_a_peak() {
        let c = cfg(2);
        assert_eq!(c.peak_step(), 1);
        assert_eq!(one_cycle_lr(1, &c).unwrap(), 0.1);
        assert!(TrainConfig {
            total_steps: 1,
            ..c
        }
        .validate()
        .is_err());
    }

    #[test]
    fn clipping_examples() {
        let (g, n) = clip_gradients(&[6.0f64, 8.0], 5.0).unwrap();
        assert_eq!(n, 10.0);
        assert_eq!(g, vec![3.0, 4.0]);
        let (g, n) = clip_gradients(&[0.0f32, 3.0], 5.0).unwrap();
        assert_eq!((g, n), (vec![0.0, 3.0], 3.0));
        assert!(clip_gradients(&[f64::NAN], 1.0).is_err());
    }
}
