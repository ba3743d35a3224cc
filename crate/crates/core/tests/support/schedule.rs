//! One-cycle schedule endpoints and gradient-clipping bounds.

use cashew_core::trainer::{clip_gradients, one_cycle_lr, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Check;

pub fn schedule_configs() -> Vec<TrainConfig> {
    let mut out = Vec::new();
    for (total, lr_max, pct) in [
        (300, 0.05, 0.3),
        (100, 0.1, 0.3),
        (7, 1.0, 0.5),
        (1000, 3e-3, 0.25),
        (2, 0.2, 0.3),
    ] {
        for (div, final_div) in [(25.0, 1e4), (10.0, 100.0), (1.0, 1.0)] {
            out.push(TrainConfig {
                total_steps: total,
                lr_max,
                pct_start: pct,
                div_factor: div,
                final_div_factor: final_div,
                ..TrainConfig::default()
            });
        }
    }
    out
}

/// Start, peak and terminal learning rates equal their closed forms exactly.
pub fn endpoints_exact() -> Check {
    for cfg in schedule_configs() {
        let lr = |s: usize| one_cycle_lr(s, &cfg).map_err(|e| e.to_string());
        let peak = ((cfg.pct_start * cfg.total_steps as f64).round() as usize)
            .clamp(1, cfg.total_steps - 1);
        let checks = [
            (0, cfg.lr_max / cfg.div_factor),
            (peak, cfg.lr_max),
            (
                cfg.total_steps,
                cfg.lr_max / (cfg.div_factor * cfg.final_div_factor),
            ),
        ];
        for (step, want) in checks {
            let got = lr(step)?;
            if got != want {
                return Err(format!("{cfg:?}: lr({step}) = {got}, expected {want}"));
            }
        }
        if one_cycle_lr(cfg.total_steps + 1, &cfg).is_ok() {
            return Err(format!("step beyond {} accepted", cfg.total_steps));
        }
    }
    Ok(())
}

/// Random vectors across many magnitudes never exceed the clip norm after
/// clipping, and vectors already inside it pass through untouched.
pub fn clipping_bound(cases: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for case in 0..cases {
        let n = rng.random_range(1..300);
        let mag = 10f64.powf(rng.random_range(-4.0..4.0));
        let g: Vec<f64> = (0..n).map(|_| rng.random_range(-mag..mag)).collect();
        let max_norm = 10f64.powf(rng.random_range(-2.0..2.0));
        let (c, norm) = clip_gradients(&g, max_norm).map_err(|e| e.to_string())?;
        let after = c.iter().map(|v| v * v).sum::<f64>().sqrt();
        if after > max_norm + 1e-9 {
            return Err(format!(
                "case {case}: clipped norm {after} above {max_norm}"
            ));
        }
        let before = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - before).abs() > 1e-12 * before.max(1.0) {
            return Err(format!("case {case}: reported norm {norm} vs {before}"));
        }
        if before <= max_norm && c != g {
            return Err(format!("case {case}: vector inside the bound was changed"));
        }
    }
    Ok(())
}
