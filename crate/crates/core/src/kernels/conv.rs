use crate::error::{contract, Result};
use crate::quant::QuantParams;
use crate::scalar::Scalar;
use crate::tensor::{QTensor, Shape, Tensor};

use super::packed::{conv_pixel, widen_pixel, PackedConv};
use super::{check_len, relu6_scalar, Activation, ConvAttrs, ConvGeometry, OutputStage};

fn conv_geometry(
    input: &Shape,
    weights: &Shape,
    attrs: &ConvAttrs,
) -> Result<(ConvGeometry, usize)> {
    let in_dims = input.nhwc()?;
    let [k_h, k_w, w_in, out_c] = weights.nhwc().map_err(|_| {
        contract(format!(
            "conv weights must be [kh, kw, cin, cout], got {weights:?}"
        ))
    })?;
    if w_in != in_dims[3] {
        return Err(contract(format!(
            "conv weights expect {w_in} input channels, input has {}",
            in_dims[3]
        )));
    }
    let geom = ConvGeometry::new(in_dims, k_h, k_w, attrs.stride, attrs.padding)?;
    Ok((geom, out_c))
}

/// Float cross-correlation, NHWC input with `[kh, kw, cin, cout]` weights.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &[T],
    attrs: ConvAttrs,
) -> Result<Tensor<T>> {
    let (g, out_c) = conv_geometry(input.shape(), weights.shape(), &attrs)?;
    check_len("conv bias", bias.len(), out_c)?;
    let shape = Shape::new(vec![g.batch, g.out_h, g.out_w, out_c])?;
    let mut out = vec![T::zero(); shape.numel()];
    conv2d_into(
        input.data(),
        &g,
        weights.data(),
        out_c,
        bias,
        attrs.activation,
        &mut out,
    );
    Tensor::new(shape, out)
}

pub fn conv2d_into<T: Scalar>(
    input: &[T],
    g: &ConvGeometry,
    weights: &[T],
    out_c: usize,
    bias: &[T],
    activation: Activation,
    out: &mut [T],
) {
    let in_c = g.in_c;
    for n in 0..g.batch {
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let o = ((n * g.out_h + oy) * g.out_w + ox) * out_c;
                let acc = &mut out[o..o + out_c];
                acc.copy_from_slice(bias);
                for ky in 0..g.k_h {
                    let Some(iy) = g.in_row(oy, ky) else { continue };
                    for kx in 0..g.k_w {
                        let Some(ix) = g.in_col(ox, kx) else { continue };
                        let px = ((n * g.in_h + iy) * g.in_w + ix) * in_c;
                        let pixel = &input[px..px + in_c];
                        let wbase = (ky * g.k_w + kx) * in_c * out_c;
                        for (ci, &x) in pixel.iter().enumerate() {
                            let wrow = &weights[wbase + ci * out_c..wbase + (ci + 1) * out_c];
                            for (a, &w) in acc.iter_mut().zip(wrow) {
                                *a += x * w;
                            }
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

/// Int8 convolution: accumulates `(q_in - zp_in) * (q_w - zp_w)` in 32 bits,
/// adds the int32 bias and requantizes into `out_params`.
pub fn conv2d_q(
    input: &QTensor,
    weights: &QTensor,
    bias: &[i32],
    out_params: QuantParams,
    attrs: ConvAttrs,
) -> Result<QTensor> {
    let (g, out_c) = conv_geometry(input.shape(), weights.shape(), &attrs)?;
    check_len("conv bias", bias.len(), out_c)?;
    let acc_scale = input.params().scale() as f64 * weights.params().scale() as f64;
    let stage = OutputStage::new(acc_scale, out_params, attrs.activation)?;
    let shape = Shape::new(vec![g.batch, g.out_h, g.out_w, out_c])?;
    let mut out = vec![0i8; shape.numel()];
    conv2d_q_into(
        input.data(),
        input.params().zero_point(),
        &g,
        &PackedConv::new(
            weights.data(),
            weights.params().zero_point(),
            g.k_h * g.k_w,
            g.in_c,
            out_c,
        ),
        bias,
        &stage,
        &mut out,
    );
    QTensor::new(shape, out, out_params)
}

pub fn conv2d_q_into(
    input: &[i8],
    in_zp: i32,
    g: &ConvGeometry,
    filter: &PackedConv,
    bias: &[i32],
    stage: &OutputStage,
    out: &mut [i8],
) {
    let (in_c, out_c) = (g.in_c, filter.out_c);
    let mut rows = Vec::with_capacity(g.k_h * g.k_w);
    let mut x = Vec::with_capacity(g.k_h * g.k_w * filter.in_pairs * 2);
    for n in 0..g.batch {
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                rows.clear();
                x.clear();
                for ky in 0..g.k_h {
                    let Some(iy) = g.in_row(oy, ky) else { continue };
                    for kx in 0..g.k_w {
                        let Some(ix) = g.in_col(ox, kx) else { continue };
                        let px = ((n * g.in_h + iy) * g.in_w + ix) * in_c;
                        rows.push(filter.row(ky * g.k_w + kx, 0));
                        widen_pixel(&mut x, &input[px..px + in_c], in_zp);
                    }
                }
                let o = ((n * g.out_h + oy) * g.out_w + ox) * out_c;
                conv_pixel(&mut out[o..o + out_c], bias, filter, &rows, &x, stage);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::Padding;

    fn shape(d: &[usize]) -> Shape {
        Shape::new(d.to_vec()).unwrap()
    }

    #[test]
    fn degenerate_one_by_one() {
        let x = Tensor::new(shape(&[1, 1, 1, 1]), vec![3.0f32]).unwrap();
        let w = Tensor::new(shape(&[1, 1, 1, 1]), vec![-2.5f32]).unwrap();
        let attrs = ConvAttrs::new(1, Padding::Valid, Activation::None).unwrap();
        let y = conv2d(&x, &w, &[0.0], attrs).unwrap();
        assert_eq!(y.data(), &[-7.5]);
    }

    #[test]
    fn sum_of_ones() {
        let x = Tensor::filled(shape(&[1, 3, 3, 1]), 1.0f64);
        let w = Tensor::filled(shape(&[3, 3, 1, 1]), 1.0f64);
        let attrs = ConvAttrs::new(1, Padding::Valid, Activation::None).unwrap();
        let y = conv2d(&x, &w, &[0.0], attrs).unwrap();
        assert_eq!(y.shape().dims(), &[1, 1, 1, 1]);
        assert_eq!(y.data(), &[9.0]);
    }

    #[test]
    fn relu6_is_fused() {
        let x = Tensor::filled(shape(&[1, 3, 3, 1]), 1.0f32);
        let w = Tensor::filled(shape(&[3, 3, 1, 2]), 1.0f32);
        let attrs = ConvAttrs::new(1, Padding::Valid, Activation::Relu6).unwrap();
        let y = conv2d(&x, &w, &[0.0, -20.0], attrs).unwrap();
        assert_eq!(y.data(), &[6.0, 0.0]);
    }

    #[test]
    fn channel_mismatch_is_contract_error() {
        let x = Tensor::filled(shape(&[1, 4, 4, 3]), 1.0f32);
        let w = Tensor::filled(shape(&[3, 3, 2, 4]), 1.0f32);
        let attrs = ConvAttrs::new(1, Padding::Same, Activation::None).unwrap();
        assert!(matches!(
            conv2d(&x, &w, &[0.0; 4], attrs),
            Err(crate::Error::Contract(_))
        ));
        let w = Tensor::filled(shape(&[3, 3, 3, 4]), 1.0f32);
        assert!(conv2d(&x, &w, &[0.0; 3], attrs).is_err());
    }

    #[test]
    fn int8_matches_float_on_exact_grid() {
        // integer-valued inputs and weights with unit scales are exact in both paths
        let p = QuantParams::new(1.0, 0).unwrap();
        let xs: Vec<i8> = (0..16).map(|i| (i % 5) as i8 - 2).collect();
        let ws: Vec<i8> = (0..18).map(|i| (i % 3) as i8 - 1).collect();
        let x = QTensor::new(shape(&[1, 4, 4, 1]), xs.clone(), p).unwrap();
        let w = QTensor::new(shape(&[3, 3, 1, 2]), ws.clone(), p).unwrap();
        let attrs = ConvAttrs::new(2, Padding::Same, Activation::None).unwrap();
        let q = conv2d_q(&x, &w, &[1, -1], p, attrs).unwrap();

        let xf = Tensor::new(shape(&[1, 4, 4, 1]), xs.iter().map(|&v| v as f32).collect()).unwrap();
        let wf = Tensor::new(shape(&[3, 3, 1, 2]), ws.iter().map(|&v| v as f32).collect()).unwrap();
        let f = conv2d(&xf, &wf, &[1.0, -1.0], attrs).unwrap();
        let qf: Vec<f32> = q.data().iter().map(|&v| v as f32).collect();
        assert_eq!(qf, f.data());
    }
}
