use crate::error::{contract, Result};
use crate::quant::QuantParams;
use crate::scalar::Scalar;
use crate::tensor::{QTensor, Shape, Tensor};

use super::packed::{conv_pixel, widen_pixel, PackedConv};
use super::{check_len, relu6_scalar, Activation, OutputStage};

/// Splits an input shape into (batch, features); trailing dims are flattened.
fn dense_dims(input: &Shape, weights: &Shape) -> Result<(usize, usize, usize)> {
    let batch = input.dims()[0];
    let features = input.numel() / batch;
    let &[w_in, w_out] = weights.dims() else {
        return Err(contract(format!(
            "dense weights must be [in, out], got {weights:?}"
        )));
    };
    if w_in != features {
        return Err(contract(format!(
            "dense weights expect {w_in} inputs, input provides {features}"
        )));
    }
    Ok((batch, features, w_out))
}

/// Affine map `x W + b` with `[in, out]` weights, then the activation.
pub fn fully_connected<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &[T],
    activation: Activation,
) -> Result<Tensor<T>> {
    let (batch, fin, fout) = dense_dims(input.shape(), weights.shape())?;
    check_len("dense bias", bias.len(), fout)?;
    let mut out = vec![T::zero(); batch * fout];
    fully_connected_into(
        input.data(),
        batch,
        fin,
        weights.data(),
        fout,
        bias,
        activation,
        &mut out,
    );
    Tensor::new(Shape::new(vec![batch, fout])?, out)
}

#[allow(clippy::too_many_arguments)]
pub fn fully_connected_into<T: Scalar>(
    input: &[T],
    batch: usize,
    fin: usize,
    weights: &[T],
    fout: usize,
    bias: &[T],
    activation: Activation,
    out: &mut [T],
) {
    for n in 0..batch {
        let acc = &mut out[n * fout..(n + 1) * fout];
        acc.copy_from_slice(bias);
        for (i, &x) in input[n * fin..(n + 1) * fin].iter().enumerate() {
            for (a, &w) in acc.iter_mut().zip(&weights[i * fout..(i + 1) * fout]) {
                *a += x * w;
            }
        }
        if activation == Activation::Relu6 {
            acc.iter_mut().for_each(|a| *a = relu6_scalar(*a));
        }
    }
}

pub fn fully_connected_q(
    input: &QTensor,
    weights: &QTensor,
    bias: &[i32],
    out_params: QuantParams,
    activation: Activation,
) -> Result<QTensor> {
    let (batch, fin, fout) = dense_dims(input.shape(), weights.shape())?;
    check_len("dense bias", bias.len(), fout)?;
    let acc_scale = input.params().scale() as f64 * weights.params().scale() as f64;
    let stage = OutputStage::new(acc_scale, out_params, activation)?;
    let mut out = vec![0i8; batch * fout];
    fully_connected_q_into(
        input.data(),
        input.params().zero_point(),
        batch,
        &PackedConv::new(weights.data(), weights.params().zero_point(), 1, fin, fout),
        bias,
        &stage,
        &mut out,
    );
    QTensor::new(Shape::new(vec![batch, fout])?, out, out_params)
}

/// Int8 dense layer over `batch` rows of `fin` values, using a filter
/// packed as a one-tap convolution (`PackedConv::new(w, zp, 1, fin, fout)`).
pub fn fully_connected_q_into(
    input: &[i8],
    in_zp: i32,
    batch: usize,
    filter: &PackedConv,
    bias: &[i32],
    stage: &OutputStage,
    out: &mut [i8],
) {
    let (fin, fout) = (filter.in_c, filter.out_c);
    let mut x = Vec::with_capacity(fin + 1);
    for n in 0..batch {
        x.clear();
        widen_pixel(&mut x, &input[n * fin..(n + 1) * fin], in_zp);
        conv_pixel(
            &mut out[n * fout..(n + 1) * fout],
            bias,
            filter,
            &[0],
            &x,
            stage,
        );
    }
}
