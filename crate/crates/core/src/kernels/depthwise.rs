use crate::error::{contract, Result};
use crate::quant::QuantParams;
use crate::scalar::Scalar;
use crate::tensor::{QTensor, Shape, Tensor};

use super::packed::{depthwise_pixel, widen_pixel, PackedDepthwise};
use super::{check_len, relu6_scalar, Activation, ConvAttrs, ConvGeometry, OutputStage};

fn dw_geometry(input: &Shape, weights: &Shape, attrs: &ConvAttrs) -> Result<ConvGeometry> {
    let in_dims = input.nhwc()?;
    let [k_h, k_w, one, c] = weights.nhwc().map_err(|_| {
        contract(format!(
            "depthwise weights must be [kh, kw, 1, c], got {weights:?}"
        ))
    })?;
    if one != 1 || c != in_dims[3] {
        return Err(contract(format!(
            "depthwise weights {weights:?} do not match {} input channels",
            in_dims[3]
        )));
    }
    ConvGeometry::new(in_dims, k_h, k_w, attrs.stride, attrs.padding)
}

/// Per-channel spatial filtering with `[kh, kw, 1, c]` weights.
pub fn depthwise_conv2d<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &[T],
    attrs: ConvAttrs,
) -> Result<Tensor<T>> {
    let g = dw_geometry(input.shape(), weights.shape(), &attrs)?;
    check_len("depthwise bias", bias.len(), g.in_c)?;
    let shape = Shape::new(vec![g.batch, g.out_h, g.out_w, g.in_c])?;
    let mut out = vec![T::zero(); shape.numel()];
    depthwise_conv2d_into(
        input.data(),
        &g,
        weights.data(),
        bias,
        attrs.activation,
        &mut out,
    );
    Tensor::new(shape, out)
}

pub fn depthwise_conv2d_into<T: Scalar>(
    input: &[T],
    g: &ConvGeometry,
    weights: &[T],
    bias: &[T],
    activation: Activation,
    out: &mut [T],
) {
    let c = g.in_c;
    for n in 0..g.batch {
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let o = ((n * g.out_h + oy) * g.out_w + ox) * c;
                let acc = &mut out[o..o + c];
                acc.copy_from_slice(bias);
                for ky in 0..g.k_h {
                    let Some(iy) = g.in_row(oy, ky) else { continue };
                    for kx in 0..g.k_w {
                        let Some(ix) = g.in_col(ox, kx) else { continue };
                        let px = ((n * g.in_h + iy) * g.in_w + ix) * c;
                        let w = &weights[(ky * g.k_w + kx) * c..(ky * g.k_w + kx + 1) * c];
                        for ((a, &x), &w) in acc.iter_mut().zip(&input[px..px + c]).zip(w) {
                            *a += x * w;
                        }
                    }
                }
                if activation == Activation::Relu6 {
                    acc.iter_mut().for_each(|a| *a = relu6_scalar(*a));
                }
            }
        }
    }
}

pub fn depthwise_conv2d_q(
    input: &QTensor,
    weights: &QTensor,
    bias: &[i32],
    out_params: QuantParams,
    attrs: ConvAttrs,
) -> Result<QTensor> {
    let g = dw_geometry(input.shape(), weights.shape(), &attrs)?;
    check_len("depthwise bias", bias.len(), g.in_c)?;
    let acc_scale = input.params().scale() as f64 * weights.params().scale() as f64;
    let stage = OutputStage::new(acc_scale, out_params, attrs.activation)?;
    let shape = Shape::new(vec![g.batch, g.out_h, g.out_w, g.in_c])?;
    let mut out = vec![0i8; shape.numel()];
    depthwise_conv2d_q_into(
        input.data(),
        input.params().zero_point(),
        &g,
        &PackedDepthwise::new(
            weights.data(),
            weights.params().zero_point(),
            g.k_h * g.k_w,
            g.in_c,
        ),
        bias,
        &stage,
        &mut out,
    );
    QTensor::new(shape, out, out_params)
}

pub fn depthwise_conv2d_q_into(
    input: &[i8],
    in_zp: i32,
    g: &ConvGeometry,
    filter: &PackedDepthwise,
    bias: &[i32],
    stage: &OutputStage,
    out: &mut [i8],
) {
    let c = g.in_c;
    let row_len = g.in_w * c;
    // widened copies of the k_h most recent input rows (slot = row % k_h),
    // followed by one zero pixel that padding taps read
    let mut rows = vec![0i16; g.k_h * row_len + c];
    let zero = g.k_h * row_len;
    let mut cached = vec![None; g.k_h];
    let mut widened = Vec::with_capacity(row_len);
    let mut taps = Vec::with_capacity(g.k_h * g.k_w);
    for n in 0..g.batch {
        cached.fill(None);
        for oy in 0..g.out_h {
            for ky in 0..g.k_h {
                let Some(iy) = g.in_row(oy, ky) else { continue };
                let slot = iy % g.k_h;
                if cached[slot] != Some(iy) {
                    let src = (n * g.in_h + iy) * row_len;
                    widened.clear();
                    widen_pixel(&mut widened, &input[src..src + row_len], in_zp);
                    rows[slot * row_len..(slot + 1) * row_len].copy_from_slice(&widened[..row_len]);
                    cached[slot] = Some(iy);
                }
            }
            for ox in 0..g.out_w {
                taps.clear();
                for ky in 0..g.k_h {
                    let iy = g.in_row(oy, ky);
                    for kx in 0..g.k_w {
                        taps.push(match (iy, g.in_col(ox, kx)) {
                            (Some(iy), Some(ix)) => (iy % g.k_h) * row_len + ix * c,
                            _ => zero,
                        });
                    }
                }
                let o = ((n * g.out_h + oy) * g.out_w + ox) * c;
                depthwise_pixel(&mut out[o..o + c], bias, filter, &rows, &taps, stage);
            }
        }
    }
}
