//! Fixed-point representation of requantization multipliers.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::quant::{QMAX, QMIN};

/// A positive real multiplier stored as `mantissa * 2^(exponent - 31)`
/// with `mantissa` in `[2^30, 2^31)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixedPointMultiplier {
    mantissa: i32,
    exponent: i32,
}

const HALF: i64 = 1 << 30;

impl FixedPointMultiplier {
    pub fn from_parts(mantissa: i32, exponent: i32) -> Result<Self> {
        if (mantissa as i64) < HALF {
            return Err(domain(format!("mantissa {mantissa} below 2^30")));
        }
        if !(-200..=200).contains(&exponent) {
            return Err(domain(format!("exponent {exponent} out of range")));
        }
        Ok(Self { mantissa, exponent })
    }

    pub fn mantissa(&self) -> i32 {
        self.mantissa
    }

    pub fn exponent(&self) -> i32 {
        self.exponent
    }

    /// The real number this multiplier stands for.
    pub fn to_real(&self) -> f64 {
        self.mantissa as f64 * 2f64.powi(self.exponent - 31)
    }

    /// `acc * multiplier`, rounded to nearest with ties away from zero.
    #[inline]
    pub fn apply(&self, acc: i32) -> i64 {
        let prod = acc as i64 * self.mantissa as i64;
        let shift = 31 - self.exponent;
        if shift >= 0 {
            rounding_shift_right(prod, shift as u32)
        } else {
            let wide = (prod as i128) << (-shift).min(64) as u32;
            wide.clamp(i64::MIN as i128, i64::MAX as i128) as i64
        }
    }
}

/// Converts a positive real multiplier to fixed point.
pub fn to_fixed_point(real_multiplier: f64) -> Result<FixedPointMultiplier> {
    if !(real_multiplier.is_finite() && real_multiplier > 0.0) {
        return Err(domain(format!(
            "multiplier must be positive and finite, got {real_multiplier}"
        )));
    }
    let (frac, mut exponent) = frexp(real_multiplier);
    let mut mantissa = (frac * (1u64 << 31) as f64).round() as i64;
    if mantissa == 1 << 31 {
        mantissa = HALF;
        exponent += 1;
    }
    FixedPointMultiplier::from_parts(mantissa as i32, exponent)
}

/// Splits `x > 0` into `frac * 2^exp` with `frac` in `[0.5, 1)`.
fn frexp(x: f64) -> (f64, i32) {
    let mut exp = x.log2().floor() as i32 + 1;
    let mut frac = x / 2f64.powi(exp);
    // log2 can be off by one near powers of two
    while frac >= 1.0 {
        frac /= 2.0;
        exp += 1;
    }
    while frac < 0.5 {
        frac *= 2.0;
        exp -= 1;
    }
    (frac, exp)
}

/// Divides by `2^shift`, rounding to nearest with ties away from zero.
#[inline]
pub fn rounding_shift_right(x: i64, shift: u32) -> i64 {
    if shift == 0 {
        return x;
    }
    if shift >= 63 {
        // |x| < 2^62 for every product formed here, so the quotient rounds to 0
        return 0;
    }
    let half = 1i64 << (shift - 1);
    let mag = (x.unsigned_abs() + half as u64) >> shift;
    if x < 0 {
        -(mag as i64)
    } else {
        mag as i64
    }
}

/// Scales a 32-bit accumulator into the int8 output domain.
#[inline]
pub fn requantize(acc: i32, m: FixedPointMultiplier, out_zero_point: i32) -> i8 {
    let v = m.apply(acc).saturating_add(out_zero_point as i64);
    v.clamp(QMIN as i64, QMAX as i64) as i8
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn powers_of_two() {
        let m = to_fixed_point(0.5).unwrap();
        assert_eq!((m.mantissa(), m.exponent()), (1 << 30, 0));
        let m = to_fixed_point(1.0).unwrap();
        assert_eq!((m.mantissa(), m.exponent()), (1 << 30, 1));
    }

    #[test]
    fn rejects_non_positive() {
        assert!(to_fixed_point(0.0).is_err());
        assert!(to_fixed_point(-1.0).is_err());
        assert!(to_fixed_point(f64::NAN).is_err());
        assert!(to_fixed_point(f64::INFINITY).is_err());
    }

    #[test]
    fn mantissa_rounding_overflow_bumps_exponent() {
        let just_below_one = 1.0 - 1e-12;
        let m = to_fixed_point(just_below_one).unwrap();
        assert_eq!((m.mantissa(), m.exponent()), (1 << 30, 1));
    }

    #[test]
    fn requantize_examples() {
        let half = to_fixed_point(0.5).unwrap();
        assert_eq!(requantize(0, half, 7), 7);
        assert_eq!(requantize(200, half, 0), 100);
        assert_eq!(requantize(1_000_000, half, 0), 127);
        assert_eq!(requantize(-1_000_000, half, 0), -128);
        // 3 * 0.5 = 1.5 rounds away from zero
        assert_eq!(requantize(3, half, 0), 2);
        assert_eq!(requantize(-3, half, 0), -2);
    }

    #[test]
    fn large_multipliers_shift_left() {
        let m = to_fixed_point(4.0).unwrap();
        assert_eq!(m.exponent(), 3);
        assert_eq!(m.apply(5), 20);
        assert_eq!(requantize(40, m, 0), 127);
    }

    #[test]
    fn shift_rounding() {
        assert_eq!(rounding_shift_right(5, 1), 3);
        assert_eq!(rounding_shift_right(-5, 1), -3);
        assert_eq!(rounding_shift_right(4, 2), 1);
        assert_eq!(rounding_shift_right(6, 2), 2);
        assert_eq!(rounding_shift_right(-6, 2), -2);
        assert_eq!(rounding_shift_right(1 << 40, 70), 0);
    }
}
