use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::{QTensor, Shape, Tensor};

/// Per-channel spatial mean, `[n, h, w, c] -> [n, 1, 1, c]`.
pub fn global_avg_pool<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let dims = input.shape().nhwc()?;
    let mut out = vec![T::zero(); dims[0] * dims[3]];
    global_avg_pool_into(input.data(), dims, &mut out);
    Tensor::new(Shape::new(vec![dims[0], 1, 1, dims[3]])?, out)
}

pub fn global_avg_pool_into<T: Scalar>(input: &[T], [n, h, w, c]: [usize; 4], out: &mut [T]) {
    let count = T::of((h * w) as f64);
    for b in 0..n {
        let acc = &mut out[b * c..(b + 1) * c];
        acc.iter_mut().for_each(|a| *a = T::zero());
        for px in input[b * h * w * c..(b + 1) * h * w * c].chunks_exact(c) {
            for (a, &x) in acc.iter_mut().zip(px) {
                *a += x;
            }
        }
        acc.iter_mut().for_each(|a| *a /= count);
    }
}

/// Int8 mean: 32-bit sums divided with rounding; output keeps the input's parameters.
pub fn global_avg_pool_q(input: &QTensor) -> Result<QTensor> {
    let dims = input.shape().nhwc()?;
    let mut out = vec![0i8; dims[0] * dims[3]];
    global_avg_pool_q_into(input.data(), dims, &mut out);
    QTensor::new(
        Shape::new(vec![dims[0], 1, 1, dims[3]])?,
        out,
        input.params(),
    )
}

pub fn global_avg_pool_q_into(input: &[i8], [n, h, w, c]: [usize; 4], out: &mut [i8]) {
    let count = (h * w) as i64;
    let mut acc = vec![0i32; c];
    for b in 0..n {
        acc.iter_mut().for_each(|a| *a = 0);
        for px in input[b * h * w * c..(b + 1) * h * w * c].chunks_exact(c) {
            for (a, &q) in acc.iter_mut().zip(px) {
                *a += q as i32;
            }
        }
        for (dst, &s) in out[b * c..(b + 1) * c].iter_mut().zip(&acc) {
            *dst = div_round(s as i64, count).clamp(i8::MIN as i64, i8::MAX as i64) as i8;
        }
    }
}

/// Integer division rounding half away from zero.
fn div_round(num: i64, den: i64) -> i64 {
    let q = (2 * num.abs() + den) / (2 * den);
    if num < 0 {
        -q
    } else {
        q
    }
}
