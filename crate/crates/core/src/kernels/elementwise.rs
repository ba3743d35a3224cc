use crate::error::{contract, domain, Result};
use crate::fixed_point::{to_fixed_point, FixedPointMultiplier};
use crate::quant::{QuantParams, QMAX, QMIN};
use crate::scalar::Scalar;
use crate::tensor::{QTensor, Tensor};

#[inline]
pub fn relu6_scalar<T: Scalar>(x: T) -> T {
    let six = T::of(6.0);
    if x < T::zero() {
        T::zero()
    } else if x > six {
        six
    } else {
        x
    }
}

/// Elementwise `min(max(x, 0), 6)`.
pub fn relu6<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(relu6_scalar)
}

/// Max-shifted softmax over a flat vector.
pub fn softmax<T: Scalar>(logits: &[T]) -> Result<Vec<T>> {
    let mut out = logits.to_vec();
    softmax_in_place(&mut out)?;
    Ok(out)
}

pub fn softmax_in_place<T: Scalar>(v: &mut [T]) -> Result<()> {
    if let Some(i) = v.iter().position(|x| !x.is_finite()) {
        return Err(domain(format!("non-finite logit at index {i}")));
    }
    let max = v.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    v.iter_mut().for_each(|x| *x /= sum);
    Ok(())
}

/// Dropout at inference time is the identity; only the rate is validated.
pub fn dropout_inference<T: Clone>(x: &T, rate: f64) -> Result<T> {
    if !(0.0..1.0).contains(&rate) {
        return Err(contract(format!(
            "dropout rate must be in [0, 1), got {rate}"
        )));
    }
    Ok(x.clone())
}

/// Elementwise sum used by residual connections.
pub fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.shape() != b.shape() {
        return Err(contract(format!(
            "add shapes differ: {} vs {}",
            a.shape(),
            b.shape()
        )));
    }
    let mut out = vec![T::zero(); a.data().len()];
    add_into(a.data(), b.data(), &mut out);
    Tensor::new(a.shape().clone(), out)
}

pub fn add_into<T: Scalar>(a: &[T], b: &[T], out: &mut [T]) {
    for ((o, &x), &y) in out.iter_mut().zip(a).zip(b) {
        *o = x + y;
    }
}

/// Rescaling for an int8 sum of two differently quantized operands.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AddStage {
    pub lhs: FixedPointMultiplier,
    pub rhs: FixedPointMultiplier,
    pub lhs_zero_point: i32,
    pub rhs_zero_point: i32,
    pub zero_point: i32,
}

impl AddStage {
    pub fn new(a: QuantParams, b: QuantParams, out: QuantParams) -> Result<Self> {
        let so = out.scale() as f64;
        Ok(Self::with_multipliers(
            to_fixed_point(a.scale() as f64 / so)?,
            to_fixed_point(b.scale() as f64 / so)?,
            a,
            b,
            out,
        ))
    }

    pub fn with_multipliers(
        lhs: FixedPointMultiplier,
        rhs: FixedPointMultiplier,
        a: QuantParams,
        b: QuantParams,
        out: QuantParams,
    ) -> Self {
        Self {
            lhs,
            rhs,
            lhs_zero_point: a.zero_point(),
            rhs_zero_point: b.zero_point(),
            zero_point: out.zero_point(),
        }
    }

    /// Exact `round((qa - za) * ma + (qb - zb) * mb) + zo`, clamped to int8.
    #[inline]
    pub fn apply(&self, qa: i8, qb: i8) -> i8 {
        let xa = (qa as i32 - self.lhs_zero_point) as i128 * self.lhs.mantissa() as i128;
        let xb = (qb as i32 - self.rhs_zero_point) as i128 * self.rhs.mantissa() as i128;
        let (ea, eb) = (self.lhs.exponent(), self.rhs.exponent());
        let e_min = ea.min(eb);
        let total = shl_sat(xa, (ea - e_min) as u32) + shl_sat(xb, (eb - e_min) as u32);
        let shift = 31 - e_min;
        let v = if shift >= 0 {
            round_shift_i128(total, shift as u32)
        } else {
            shl_sat(total, (-shift) as u32)
        };
        (v + self.zero_point as i128).clamp(QMIN as i128, QMAX as i128) as i8
    }
}

fn shl_sat(x: i128, s: u32) -> i128 {
    if x == 0 {
        0
    } else if s >= 80 {
        // |x| >= 1 so the result is far outside int8 anyway
        x.signum() << 80
    } else {
        x << s
    }
}

fn round_shift_i128(x: i128, s: u32) -> i128 {
    if s == 0 {
        return x;
    }
    if s >= 126 {
        return 0;
    }
    let half = 1i128 << (s - 1);
    let mag = (x.abs() + half) >> s;
    if x < 0 {
        -mag
    } else {
        mag
    }
}

pub fn add_q(a: &QTensor, b: &QTensor, out_params: QuantParams) -> Result<QTensor> {
    if a.shape() != b.shape() {
        return Err(contract(format!(
            "add shapes differ: {} vs {}",
            a.shape(),
            b.shape()
        )));
    }
    let stage = AddStage::new(a.params(), b.params(), out_params)?;
    let mut out = vec![0i8; a.data().len()];
    add_q_into(a.data(), b.data(), &stage, &mut out);
    QTensor::new(a.shape().clone(), out, out_params)
}

pub fn add_q_into(a: &[i8], b: &[i8], stage: &AddStage, out: &mut [i8]) {
    let (ea, eb) = (stage.lhs.exponent(), stage.rhs.exponent());
    let e_min = ea.min(eb);
    let shift = 31 - e_min;
    // Table path: each term is below 2^40 before alignment, so a gap of up
    // to 20 bits keeps the sum inside i64.
    if (ea - eb).abs() > 20 || !(1..=62).contains(&shift) {
        for ((o, &x), &y) in out.iter_mut().zip(a).zip(b) {
            *o = stage.apply(x, y);
        }
        return;
    }
    let table = |m: &FixedPointMultiplier, zp: i32| -> [i64; 256] {
        let mut t = [0i64; 256];
        for (q, slot) in (i8::MIN..=i8::MAX).zip(t.iter_mut()) {
            *slot = ((q as i32 - zp) as i64 * m.mantissa() as i64) << (m.exponent() - e_min);
        }
        t
    };
    let ta = table(&stage.lhs, stage.lhs_zero_point);
    let tb = table(&stage.rhs, stage.rhs_zero_point);
    let half = 1u64 << (shift - 1);
    let zp = stage.zero_point as i64;
    for ((o, &x), &y) in out.iter_mut().zip(a).zip(b) {
        let t = ta[(x as u8 ^ 0x80) as usize] + tb[(y as u8 ^ 0x80) as usize];
        let mag = ((t.unsigned_abs() + half) >> shift) as i64;
        let v = if t < 0 { -mag } else { mag };
        *o = (v + zp).clamp(QMIN as i64, QMAX as i64) as i8;
    }
}
