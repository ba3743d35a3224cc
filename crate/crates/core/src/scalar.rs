//! Scalar abstraction shared by the float kernels and the head trainer.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating-point element type usable by the float kernels and the trainer.
///
/// Implemented for `f32` (the on-disk and executor precision) and `f64`
/// (used where double precision matters, e.g. finite-difference checks).
pub trait Scalar:
    Float
    + NumAssign
    + FromPrimitive
    + ToPrimitive
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from `f64`.
    fn of(v: f64) -> Self;

    /// Widening conversion to `f64`.
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    #[inline]
    fn of(v: f64) -> Self {
        v as f32
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    #[inline]
    fn of(v: f64) -> Self {
        v
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

/// Rounds to the nearest integer, ties away from zero.
///
/// `f64::round` already has these semantics; the helper exists so every
/// quantization path names the rule it relies on.
#[inline]
pub fn round_half_away(v: f64) -> f64 {
    v.round()
}
