//! Layer primitives in float and int8 arithmetic.
//!
//! Each kernel has a slice-level `*_into` form that writes into a caller
//! buffer (the executor points these at arena ranges) and a tensor-level
//! wrapper that validates shapes and allocates its output.

mod conv;
mod dense;
mod depthwise;
mod elementwise;
mod packed;
mod pool;

pub use conv::{conv2d, conv2d_into, conv2d_q, conv2d_q_into};
pub use dense::{fully_connected, fully_connected_into, fully_connected_q, fully_connected_q_into};
pub use depthwise::{
    depthwise_conv2d, depthwise_conv2d_into, depthwise_conv2d_q, depthwise_conv2d_q_into,
};
pub use elementwise::{
    add, add_into, add_q, add_q_into, dropout_inference, relu6, relu6_scalar, softmax,
    softmax_in_place, AddStage,
};
pub use packed::{PackedConv, PackedDepthwise};
pub use pool::{global_avg_pool, global_avg_pool_into, global_avg_pool_q, global_avg_pool_q_into};

use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::fixed_point::{to_fixed_point, FixedPointMultiplier};
use crate::quant::{QuantParams, QMAX, QMIN};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    Same,
    Valid,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    None,
    Relu6,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ConvAttrs {
    pub stride: usize,
    pub padding: Padding,
    pub activation: Activation,
}

impl ConvAttrs {
    pub fn new(stride: usize, padding: Padding, activation: Activation) -> Result<Self> {
        if !(stride == 1 || stride == 2) {
            return Err(contract(format!("stride must be 1 or 2, got {stride}")));
        }
        Ok(Self {
            stride,
            padding,
            activation,
        })
    }
}

/// Output extent and leading pad along one spatial axis.
///
/// "same" pads `max((ceil(in/s) - 1) * s + k - in, 0)` in total, with the
/// odd cell on the bottom/right.
pub fn output_extent(
    input: usize,
    kernel: usize,
    stride: usize,
    padding: Padding,
) -> Result<(usize, usize)> {
    match padding {
        Padding::Same => {
            let out = input.div_ceil(stride);
            let total = ((out - 1) * stride + kernel).saturating_sub(input);
            Ok((out, total / 2))
        }
        Padding::Valid => {
            if input < kernel {
                return Err(contract(format!(
                    "valid padding needs input extent {input} >= kernel {kernel}"
                )));
            }
            Ok(((input - kernel) / stride + 1, 0))
        }
    }
}

/// Resolved loop bounds for a 2-D convolution-like op.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub in_c: usize,
    pub k_h: usize,
    pub k_w: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub stride: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

impl ConvGeometry {
    pub fn new(
        input: [usize; 4],
        k_h: usize,
        k_w: usize,
        stride: usize,
        padding: Padding,
    ) -> Result<Self> {
        let [batch, in_h, in_w, in_c] = input;
        let (out_h, pad_top) = output_extent(in_h, k_h, stride, padding)?;
        let (out_w, pad_left) = output_extent(in_w, k_w, stride, padding)?;
        Ok(Self {
            batch,
            in_h,
            in_w,
            in_c,
            k_h,
            k_w,
            out_h,
            out_w,
            stride,
            pad_top,
            pad_left,
        })
    }

    /// Input row for output row `oy` and kernel row `ky`, if inside the image.
    #[inline]
    pub(crate) fn in_row(&self, oy: usize, ky: usize) -> Option<usize> {
        (oy * self.stride + ky)
            .checked_sub(self.pad_top)
            .filter(|&y| y < self.in_h)
    }

    #[inline]
    pub(crate) fn in_col(&self, ox: usize, kx: usize) -> Option<usize> {
        (ox * self.stride + kx)
            .checked_sub(self.pad_left)
            .filter(|&x| x < self.in_w)
    }
}

/// Requantization and activation clamp applied to each int32 accumulator.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OutputStage {
    pub multiplier: FixedPointMultiplier,
    pub zero_point: i32,
    pub act_min: i32,
    pub act_max: i32,
}

impl OutputStage {
    /// Builds the stage for an op whose accumulator scale is `acc_scale`
    /// (`in_scale * w_scale`).
    pub fn new(acc_scale: f64, out: QuantParams, activation: Activation) -> Result<Self> {
        let multiplier = to_fixed_point(acc_scale / out.scale() as f64)?;
        Ok(Self::with_multiplier(multiplier, out, activation))
    }

    pub fn with_multiplier(
        multiplier: FixedPointMultiplier,
        out: QuantParams,
        activation: Activation,
    ) -> Self {
        let (act_min, act_max) = activation_bounds(out, activation);
        Self {
            multiplier,
            zero_point: out.zero_point(),
            act_min,
            act_max,
        }
    }

    #[inline]
    pub fn apply(&self, acc: i32) -> i8 {
        let v = self
            .multiplier
            .apply(acc)
            .saturating_add(self.zero_point as i64);
        v.clamp(self.act_min as i64, self.act_max as i64) as i8
    }

    /// `apply` over a slice, with identical results.
    pub fn apply_slice(&self, acc: &[i32], out: &mut [i8]) {
        let shift = 31 - self.multiplier.exponent();
        if !(1..=62).contains(&shift) {
            for (o, &a) in out.iter_mut().zip(acc) {
                *o = self.apply(a);
            }
            return;
        }
        let m = self.multiplier.mantissa() as u64;
        let half = 1u64 << (shift - 1);
        let start = packed::requantize_blocks(acc, out, self);
        let (zp, lo, hi) = (
            self.zero_point as i64,
            self.act_min as i64,
            self.act_max as i64,
        );
        for (o, &a) in out[start..].iter_mut().zip(&acc[start..]) {
            let mag = ((a.unsigned_abs() as u64 * m + half) >> shift) as i64;
            let v = if a < 0 { -mag } else { mag };
            *o = (v + zp).clamp(lo, hi) as i8;
        }
    }
}

/// Int8 codes bounding an activation's output: relu6 clamps to the codes
/// of 0.0 and 6.0.
pub fn activation_bounds(out: QuantParams, activation: Activation) -> (i32, i32) {
    match activation {
        Activation::None => (QMIN, QMAX),
        Activation::Relu6 => {
            let lo = out.quantize_value(0.0).expect("finite") as i32;
            let hi = out.quantize_value(6.0).expect("finite") as i32;
            (lo, hi)
        }
    }
}

pub(crate) fn check_len(what: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(contract(format!(
            "{what}: expected {want} elements, got {got}"
        )));
    }
    Ok(())
}
