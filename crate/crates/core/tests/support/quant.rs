//! Exhaustive round-trip sweeps of affine quantization and fixed-point
//! multiplier fidelity.

use cashew_core::fixed_point::rounding_shift_right;
use cashew_core::{compute_quant_params, requantize, to_fixed_point, QuantMode, QuantParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Check;

/// Grid points per unit of scale in the sweep.
pub const SUBSTEPS: usize = 64;

/// Parameter sets covering both modes, skewed and centred zero points, and
/// very small and very large scales.
pub fn sweep_params() -> Vec<QuantParams> {
    let mut out = vec![
        QuantParams::new(0.01, -128).unwrap(),
        QuantParams::new(0.05, 0).unwrap(),
        QuantParams::new(1.0, 0).unwrap(),
        QuantParams::new(3.7e-5, 17).unwrap(),
        QuantParams::new(123.25, 127).unwrap(),
        QuantParams::new(0.1, -1).unwrap(),
    ];
    for (lo, hi) in [
        (0.0, 2.55),
        (-1.0, 1.0),
        (-6.35, 6.35),
        (-0.3, 5.9),
        (1.5, 2.0),
        (-8.0, -0.25),
    ] {
        out.push(compute_quant_params(lo, hi, QuantMode::Asymmetric).unwrap());
        out.push(compute_quant_params(lo, hi, QuantMode::Symmetric).unwrap());
    }
    out
}

/// Sweeps a uniform grid across each representable range checking the
/// half-step bound and that codes never decrease along the grid.
pub fn round_trip_sweep() -> Result<usize, String> {
    let mut points = 0;
    for p in sweep_params() {
        let (lo, hi) = p.representable_range();
        if !(lo <= 0.0 && 0.0 <= hi) {
            return Err(format!("{p:?}: range [{lo}, {hi}] excludes zero"));
        }
        let s = p.scale() as f64;
        let slack = f64::EPSILON * lo.abs().max(hi.abs()).max(s);
        let n = 255 * SUBSTEPS;
        let mut prev = i8::MIN;
        for i in 0..=n {
            let x = lo + (hi - lo) * i as f64 / n as f64;
            let q = p
                .quantize_value(x)
                .ok_or_else(|| format!("{p:?}: no code for {x}"))?;
            let err = (x - p.dequantize_value(q)).abs();
            if err > s / 2.0 + slack {
                return Err(format!(
                    "{p:?}: x={x} q={q} error {err} exceeds {}",
                    s / 2.0
                ));
            }
            if q < prev {
                return Err(format!("{p:?}: code drops from {prev} to {q} at x={x}"));
            }
            prev = q;
            points += 1;
        }
        for x in [lo - 10.0 * s, hi + 10.0 * s, f64::MAX, f64::MIN] {
            let q = p.quantize_value(x).unwrap();
            let want = if x < 0.0 { i8::MIN } else { i8::MAX };
            if q != want {
                return Err(format!("{p:?}: {x} quantized to {q}, expected saturation"));
            }
        }
    }
    Ok(points)
}

/// Relative representation error of random multipliers, log-uniform over
/// twelve decades. Returns the worst error seen.
pub fn fixed_point_fidelity(count: usize, seed: u64) -> Result<f64, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bound = 2f64.powi(-30);
    let mut worst = 0.0f64;
    for _ in 0..count {
        let m = 10f64.powf(rng.random_range(-8.0..4.0));
        let fp = to_fixed_point(m).map_err(|e| e.to_string())?;
        let mant = fp.mantissa() as i64;
        if !((1 << 30)..(1i64 << 31)).contains(&mant) {
            return Err(format!("{m}: mantissa {mant} outside [2^30, 2^31)"));
        }
        let rel = (fp.to_real() - m).abs() / m;
        if rel > bound {
            return Err(format!("{m}: relative error {rel:e} exceeds 2^-30"));
        }
        worst = worst.max(rel);
    }
    Ok(worst)
}

/// Requantized accumulators land within one output step of the exact real
/// product, and the integer path agrees with an i128 evaluation.
pub fn requantize_fidelity(count: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..count {
        let m = 10f64.powf(rng.random_range(-6.0..0.0));
        let fp = to_fixed_point(m).map_err(|e| e.to_string())?;
        let acc: i32 = rng.random_range(-2_000_000..2_000_000);
        let zp: i32 = rng.random_range(-128..=127);
        let got = requantize(acc, fp, zp) as i32;
        let exact = (acc as f64 * m + zp as f64).clamp(-128.0, 127.0);
        if (got as f64 - exact).abs() > 1.0 {
            return Err(format!("acc {acc} m {m} zp {zp}: {got} vs exact {exact}"));
        }
        let shift = 31 - fp.exponent();
        let prod = acc as i128 * fp.mantissa() as i128;
        let half = 1i128 << (shift - 1);
        let mag = (prod.abs() + half) >> shift;
        let want = (prod.signum() * mag + zp as i128).clamp(-128, 127) as i32;
        if got != want {
            return Err(format!("acc {acc} m {m} zp {zp}: {got} vs i128 {want}"));
        }
        let shifted = rounding_shift_right(prod as i64, shift as u32) as i128;
        if shifted != prod.signum() * mag {
            return Err(format!("rounding shift of {prod} by {shift}"));
        }
    }
    Ok(())
}
