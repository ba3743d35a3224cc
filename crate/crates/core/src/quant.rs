//! Per-tensor affine int8 quantization.
//!
//! A real value `x` is stored as `q = clamp(round(x / scale) + zero_point)`
//! and recovered as `scale * (q - zero_point)`. Rounding is half away from
//! zero throughout so int8 results are reproducible bit for bit.

use serde::{Deserialize, Serialize};

use crate::error::{contract, domain, Result};
use crate::scalar::{round_half_away, Scalar};
use crate::tensor::{QTensor, Tensor};

pub const QMIN: i32 = i8::MIN as i32;
pub const QMAX: i32 = i8::MAX as i32;

/// Scale and zero point of one int8 tensor.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantParams {
    scale: f32,
    zero_point: i32,
}

/// How a real range is mapped onto int8.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QuantMode {
    /// Full `[-128, 127]` range over `[min, max]` widened to include zero.
    Asymmetric,
    /// Zero point fixed at 0, scale from the larger magnitude.
    Symmetric,
}

impl QuantParams {
    pub fn new(scale: f32, zero_point: i32) -> Result<Self> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(domain(format!(
                "scale must be positive and finite, got {scale}"
            )));
        }
        if !(QMIN..=QMAX).contains(&zero_point) {
            return Err(domain(format!(
                "zero point {zero_point} outside int8 range"
            )));
        }
        Ok(Self { scale, zero_point })
    }

    pub fn scale(&self) -> f32 {
        self.scale
    }

    pub fn zero_point(&self) -> i32 {
        self.zero_point
    }

    /// Real interval covered by the int8 codes.
    pub fn representable_range(&self) -> (f64, f64) {
        let s = self.scale as f64;
        (
            s * (QMIN - self.zero_point) as f64,
            s * (QMAX - self.zero_point) as f64,
        )
    }

    /// Quantizes one value. Returns `None` for non-finite input.
    #[inline]
    pub fn quantize_value(&self, x: f64) -> Option<i8> {
        if !x.is_finite() {
            return None;
        }
        let q = round_half_away(x / self.scale as f64) + self.zero_point as f64;
        Some(q.clamp(QMIN as f64, QMAX as f64) as i8)
    }

    #[inline]
    pub fn dequantize_value(&self, q: i8) -> f64 {
        self.scale as f64 * (q as i32 - self.zero_point) as f64
    }
}

/// Derives quantization parameters from an observed range.
pub fn compute_quant_params(
    observed_min: f64,
    observed_max: f64,
    mode: QuantMode,
) -> Result<QuantParams> {
    if !(observed_min.is_finite() && observed_max.is_finite()) {
        return Err(domain(format!(
            "non-finite range [{observed_min}, {observed_max}]"
        )));
    }
    if observed_min > observed_max {
        return Err(domain(format!(
            "range minimum {observed_min} exceeds maximum {observed_max}"
        )));
    }
    match mode {
        QuantMode::Asymmetric => {
            let lo = observed_min.min(0.0);
            let hi = observed_max.max(0.0);
            let scale = ((hi - lo) / 255.0) as f32;
            if !(scale > 0.0 && scale.is_normal()) {
                return QuantParams::new(1.0, 0);
            }
            let zp = round_half_away(-128.0 - lo / scale as f64).clamp(QMIN as f64, QMAX as f64);
            QuantParams::new(scale, zp as i32)
        }
        QuantMode::Symmetric => {
            let scale = (observed_min.abs().max(observed_max.abs()) / 127.0) as f32;
            if !(scale > 0.0 && scale.is_normal()) {
                return QuantParams::new(1.0, 0);
            }
            QuantParams::new(scale, 0)
        }
    }
}

/// Quantizes a float tensor elementwise.
pub fn quantize<T: Scalar>(x: &Tensor<T>, p: QuantParams) -> Result<QTensor> {
    let mut out = Vec::with_capacity(x.data().len());
    for (i, v) in x.data().iter().enumerate() {
        match p.quantize_value(v.as_f64()) {
            Some(q) => out.push(q),
            None => return Err(domain(format!("non-finite value {v} at index {i}"))),
        }
    }
    QTensor::new(x.shape().clone(), out, p)
}

/// Quantizes a raw slice into `out`; used by the executor on arena buffers.
pub(crate) fn quantize_slice<T: Scalar>(x: &[T], p: QuantParams, out: &mut [i8]) -> Result<()> {
    for (i, (v, o)) in x.iter().zip(out.iter_mut()).enumerate() {
        *o = p
            .quantize_value(v.as_f64())
            .ok_or_else(|| domain(format!("non-finite value {v} at index {i}")))?;
    }
    Ok(())
}

/// Recovers real values from an int8 tensor.
pub fn dequantize(q: &QTensor) -> Tensor<f32> {
    dequantize_as(q)
}

pub fn dequantize_as<T: Scalar>(q: &QTensor) -> Tensor<T> {
    let p = q.params();
    let data = q
        .data()
        .iter()
        .map(|&v| T::of(p.dequantize_value(v)))
        .collect();
    Tensor::new(q.shape().clone(), data).expect("shape preserved")
}

/// Ensures the two parameter sets are identical; used by ops that pass
/// int8 codes through unchanged.
pub(crate) fn same_params(a: QuantParams, b: QuantParams, what: &str) -> Result<()> {
    if a != b {
        return Err(contract(format!(
            "{what}: quantization parameters differ ({a:?} vs {b:?})"
        )));
    }
    Ok(())
}
