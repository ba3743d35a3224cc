//! Int8 filters widened to i16 with the weight zero point removed.
//!
//! Products of two such values (|x|, |w| <= 255) and sums of two products
//! fit in i32, so pairs of inputs can share a 32-bit lane and be combined
//! with one multiply-add (`pmaddwd` on x86-64).

use super::OutputStage;

/// Regular convolution filter, `[kh, kw, cin, cout]` regrouped as
/// `[tap][cin / 2][cout][2]` (odd `cin` is padded with a zero channel).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PackedConv {
    pub(crate) data: Vec<i16>,
    pub(crate) in_c: usize,
    pub(crate) in_pairs: usize,
    pub(crate) out_c: usize,
}

impl PackedConv {
    pub fn new(weights: &[i8], w_zp: i32, taps: usize, in_c: usize, out_c: usize) -> Self {
        assert_eq!(weights.len(), taps * in_c * out_c, "filter length");
        let in_pairs = in_c.div_ceil(2);
        let mut data = vec![0i16; taps * in_pairs * out_c * 2];
        for t in 0..taps {
            for ci in 0..in_c {
                for co in 0..out_c {
                    let w = weights[(t * in_c + ci) * out_c + co] as i32 - w_zp;
                    data[((t * in_pairs + ci / 2) * out_c + co) * 2 + ci % 2] = w as i16;
                }
            }
        }
        Self {
            data,
            in_c,
            in_pairs,
            out_c,
        }
    }

    /// Offset of the `[cout][2]` row for tap `t` and channel pair `p`.
    #[inline]
    pub(crate) fn row(&self, t: usize, p: usize) -> usize {
        (t * self.in_pairs + p) * self.out_c * 2
    }
}

/// Depthwise filter, `[kh, kw, 1, c]` with taps grouped in pairs as
/// `[tap / 2][c][2]` (an odd final tap is paired with zeros).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PackedDepthwise {
    pub(crate) data: Vec<i16>,
    pub(crate) taps: usize,
    pub(crate) channels: usize,
}

impl PackedDepthwise {
    pub fn new(weights: &[i8], w_zp: i32, taps: usize, channels: usize) -> Self {
        assert_eq!(weights.len(), taps * channels, "filter length");
        let mut data = vec![0i16; taps.div_ceil(2) * channels * 2];
        for t in 0..taps {
            for c in 0..channels {
                let w = weights[t * channels + c] as i32 - w_zp;
                data[((t / 2) * channels + c) * 2 + t % 2] = w as i16;
            }
        }
        Self {
            data,
            taps,
            channels,
        }
    }

    #[inline]
    fn weight(&self, t: usize, ch: usize) -> i32 {
        self.data[((t / 2) * self.channels + ch) * 2 + t % 2] as i32
    }
}

/// Appends `src - zp` widened to i16, zero-padded to an even length.
pub(crate) fn widen_pixel(dst: &mut Vec<i16>, src: &[i8], zp: i32) {
    let start = dst.len();
    dst.resize(start + src.len().next_multiple_of(2), 0);
    let out = &mut dst[start..];
    #[cfg(all(target_arch = "x86_64", target_feature = "sse2"))]
    let done = sse2::widen(out, src, zp);
    #[cfg(not(all(target_arch = "x86_64", target_feature = "sse2")))]
    let done = 0;
    for (o, &q) in out[done..src.len()].iter_mut().zip(&src[done..]) {
        *o = (q as i32 - zp) as i16;
    }
}

/// One output pixel of a regular convolution. `x` holds, for each tap in
/// `rows`, the widened input pixel as `in_pairs` pairs; `rows` gives that
/// tap's first filter row. Computes
/// `out[co] = stage(bias[co] + sum (x[2p] * w[.., 2co] + x[2p + 1] * w[.., 2co + 1]))`.
pub(crate) fn conv_pixel(
    out: &mut [i8],
    bias: &[i32],
    f: &PackedConv,
    rows: &[usize],
    x: &[i16],
    stage: &OutputStage,
) {
    assert_eq!(x.len(), rows.len() * f.in_pairs * 2, "widened input length");
    #[cfg(all(target_arch = "x86_64", target_feature = "sse2"))]
    let start = sse2::conv_blocks(out, bias, f, rows, x, stage);
    #[cfg(not(all(target_arch = "x86_64", target_feature = "sse2")))]
    let start = 0;
    let stride = f.out_c * 2;
    for c in start..out.len() {
        let mut a = bias[c];
        for (t, &row) in rows.iter().enumerate() {
            for p in 0..f.in_pairs {
                let (x0, x1) = (
                    x[(t * f.in_pairs + p) * 2] as i32,
                    x[(t * f.in_pairs + p) * 2 + 1] as i32,
                );
                let w = &f.data[row + p * stride + 2 * c..];
                a = a.wrapping_add(x0 * w[0] as i32 + x1 * w[1] as i32);
            }
        }
        out[c] = stage.apply(a);
    }
}

/// One output pixel of a depthwise convolution over widened input.
/// `taps[t]` is the offset in `x` of the pixel read by tap `t` (padding taps
/// point at zeros).
pub(crate) fn depthwise_pixel(
    out: &mut [i8],
    bias: &[i32],
    f: &PackedDepthwise,
    x: &[i16],
    taps: &[usize],
    stage: &OutputStage,
) {
    #[cfg(all(target_arch = "x86_64", target_feature = "sse2"))]
    let start = sse2::depthwise_blocks(out, bias, f, x, taps, stage);
    #[cfg(not(all(target_arch = "x86_64", target_feature = "sse2")))]
    let start = 0;
    for ch in start..f.channels {
        let mut a = bias[ch];
        for (t, &o) in taps.iter().enumerate() {
            a = a.wrapping_add(x[o + ch] as i32 * f.weight(t, ch));
        }
        out[ch] = stage.apply(a);
    }
}

/// Vectorized leading part of `OutputStage::apply_slice`; returns how many
/// elements were written.
#[allow(unused_variables)]
pub(crate) fn requantize_blocks(acc: &[i32], out: &mut [i8], stage: &OutputStage) -> usize {
    #[cfg(all(target_arch = "x86_64", target_feature = "sse2"))]
    return sse2::requantize_blocks(acc, out, stage);
    #[cfg(not(all(target_arch = "x86_64", target_feature = "sse2")))]
    0
}

#[cfg(all(target_arch = "x86_64", target_feature = "sse2"))]
mod sse2 {
    use std::arch::x86_64::*;

    use super::{OutputStage, PackedConv, PackedDepthwise};

    /// `OutputStage` in vector registers, for right shifts of 32 to 62 bits
    /// (the scaled magnitude then fits in 32 bits).
    #[derive(Clone, Copy)]
    struct Requant {
        m: __m128i,
        half: __m128i,
        count: __m128i,
        zp: __m128i,
        lo: __m128i,
        hi: __m128i,
    }

    impl Requant {
        fn new(stage: &OutputStage) -> Option<Self> {
            let shift = 31 - stage.multiplier.exponent();
            if !(32..=62).contains(&shift) {
                return None;
            }
            // SAFETY: SSE2 is statically enabled for this module.
            unsafe {
                Some(Self {
                    m: _mm_set1_epi32(stage.multiplier.mantissa()),
                    half: _mm_set1_epi64x(1i64 << (shift - 1)),
                    count: _mm_cvtsi32_si128(shift),
                    zp: _mm_set1_epi16(stage.zero_point as i16),
                    lo: _mm_set1_epi16(stage.act_min as i16),
                    hi: _mm_set1_epi16(stage.act_max as i16),
                })
            }
        }

        /// Rounded `|a| * m >> shift` with the sign of `a`, four lanes.
        #[inline(always)]
        unsafe fn scale4(&self, a: __m128i) -> __m128i {
            let sign = _mm_srai_epi32(a, 31);
            let mag = _mm_sub_epi32(_mm_xor_si128(a, sign), sign);
            let even = _mm_srl_epi64(
                _mm_add_epi64(_mm_mul_epu32(mag, self.m), self.half),
                self.count,
            );
            let odd = _mm_mul_epu32(_mm_srli_epi64(mag, 32), self.m);
            let odd = _mm_srl_epi64(_mm_add_epi64(odd, self.half), self.count);
            let r = _mm_or_si128(even, _mm_slli_epi64(odd, 32));
            _mm_sub_epi32(_mm_xor_si128(r, sign), sign)
        }

        /// Eight accumulators to eight clamped int8 values held as i16.
        /// Saturating to i16 first cannot change the clamped result.
        #[inline(always)]
        unsafe fn narrow8(&self, a: __m128i, b: __m128i) -> __m128i {
            let v = _mm_adds_epi16(_mm_packs_epi32(self.scale4(a), self.scale4(b)), self.zp);
            _mm_min_epi16(_mm_max_epi16(v, self.lo), self.hi)
        }
    }

    /// Writes `accs` (4 lanes each) to `out`, requantized.
    #[inline(always)]
    unsafe fn emit<const N: usize>(
        out: *mut i8,
        accs: [__m128i; N],
        rq: Option<Requant>,
        stage: &OutputStage,
    ) {
        match (rq, N) {
            (Some(rq), 4) => {
                let v = _mm_packs_epi16(rq.narrow8(accs[0], accs[1]), rq.narrow8(accs[2], accs[3]));
                _mm_storeu_si128(out as *mut __m128i, v);
            }
            (Some(rq), 2) => {
                let v = rq.narrow8(accs[0], accs[1]);
                _mm_storel_epi64(out as *mut __m128i, _mm_packs_epi16(v, v));
            }
            _ => {
                let mut tmp = [0i32; 16];
                for (k, a) in accs.iter().enumerate() {
                    _mm_storeu_si128(tmp.as_mut_ptr().add(4 * k) as *mut __m128i, *a);
                }
                for (k, &a) in tmp[..4 * N].iter().enumerate() {
                    *out.add(k) = stage.apply(a);
                }
            }
        }
    }

    /// Whole blocks of output channels; returns the first channel left for
    /// the scalar tail.
    pub(super) fn conv_blocks(
        out: &mut [i8],
        bias: &[i32],
        f: &PackedConv,
        rows: &[usize],
        x: &[i16],
        stage: &OutputStage,
    ) -> usize {
        let n = out.len();
        let stride = f.out_c * 2;
        assert!(bias.len() >= n && n <= f.out_c);
        assert!(x.len() >= rows.len() * f.in_pairs * 2);
        for &row in rows {
            assert!(row + f.in_pairs * stride <= f.data.len());
        }
        let rq = Requant::new(stage);
        let pairs = x.as_ptr() as *const i32;
        let mut co = 0;
        // SAFETY: every load/store below stays inside `out`, `bias`, `x` and
        // the filter rows `row..row + in_pairs * stride`, all bounds-checked
        // by the asserts above.
        unsafe {
            macro_rules! block {
                ($k:literal) => {{
                    let b = bias.as_ptr().add(co) as *const __m128i;
                    let mut a: [__m128i; $k] = std::array::from_fn(|k| _mm_loadu_si128(b.add(k)));
                    for (t, &row) in rows.iter().enumerate() {
                        let mut wp = f.data.as_ptr().add(row + 2 * co) as *const __m128i;
                        let xt = pairs.add(t * f.in_pairs);
                        for p in 0..f.in_pairs {
                            let xv = _mm_set1_epi32(xt.add(p).read_unaligned());
                            for (k, acc) in a.iter_mut().enumerate() {
                                *acc = _mm_add_epi32(
                                    *acc,
                                    _mm_madd_epi16(_mm_loadu_si128(wp.add(k)), xv),
                                );
                            }
                            wp = (wp as *const i16).add(stride) as *const __m128i;
                        }
                    }
                    emit(out.as_mut_ptr().add(co), a, rq, stage);
                }};
            }
            while co + 16 <= n {
                block!(4);
                co += 16;
            }
            while co + 8 <= n {
                block!(2);
                co += 8;
            }
        }
        co
    }

    pub(super) fn widen(out: &mut [i16], src: &[i8], zp: i32) -> usize {
        let n = src.len().min(out.len());
        let mut i = 0;
        // SAFETY: blocks of 8 end at or before `n`, the shorter of both slices.
        unsafe {
            let zpv = _mm_set1_epi16(zp as i16);
            while i + 8 <= n {
                _mm_storeu_si128(
                    out.as_mut_ptr().add(i) as *mut __m128i,
                    widen8(src.as_ptr().add(i), zpv),
                );
                i += 8;
            }
        }
        i
    }

    const MAX_TAP_PAIRS: usize = 25;

    /// Sign-extends 8 int8 values to i16 and subtracts `zp`.
    #[inline(always)]
    unsafe fn widen8(p: *const i8, zp: __m128i) -> __m128i {
        let v = _mm_loadl_epi64(p as *const __m128i);
        _mm_sub_epi16(_mm_srai_epi16(_mm_unpacklo_epi8(v, v), 8), zp)
    }

    #[allow(clippy::too_many_arguments)]
    pub(super) fn depthwise_blocks(
        out: &mut [i8],
        bias: &[i32],
        f: &PackedDepthwise,
        x: &[i16],
        taps: &[usize],
        stage: &OutputStage,
    ) -> usize {
        let c = f.channels;
        let pairs = f.taps.div_ceil(2);
        assert!(out.len() >= c && bias.len() >= c && taps.len() == f.taps);
        assert!(taps.iter().all(|&o| o + c <= x.len()));
        assert!(f.data.len() >= pairs * c * 2);
        if c < 8 || pairs > MAX_TAP_PAIRS {
            return 0;
        }
        let rq = Requant::new(stage);
        let mut ch = 0;
        // SAFETY: channel blocks end at or before `c`; every pointer is a
        // checked offset into `x` with at least `c` values left, and filter
        // rows are bounded by the assert above.
        unsafe {
            // an odd final tap pairs with a zero weight, so any pixel will do
            let mut ptrs = [x.as_ptr().add(taps[0]); 2 * MAX_TAP_PAIRS];
            for (p, &t) in ptrs.iter_mut().zip(taps) {
                *p = x.as_ptr().add(t);
            }
            while ch + 8 <= c {
                let b = bias.as_ptr().add(ch) as *const __m128i;
                let (mut lo, mut hi) = (_mm_loadu_si128(b), _mm_loadu_si128(b.add(1)));
                for (k, pair) in ptrs[..2 * pairs].chunks_exact(2).enumerate() {
                    let xa = _mm_loadu_si128(pair[0].add(ch) as *const __m128i);
                    let xb = _mm_loadu_si128(pair[1].add(ch) as *const __m128i);
                    let wp = f.data.as_ptr().add((k * c + ch) * 2) as *const __m128i;
                    lo = _mm_add_epi32(
                        lo,
                        _mm_madd_epi16(_mm_unpacklo_epi16(xa, xb), _mm_loadu_si128(wp)),
                    );
                    hi = _mm_add_epi32(
                        hi,
                        _mm_madd_epi16(_mm_unpackhi_epi16(xa, xb), _mm_loadu_si128(wp.add(1))),
                    );
                }
                emit(out.as_mut_ptr().add(ch), [lo, hi], rq, stage);
                ch += 8;
            }
        }
        ch
    }

    pub(super) fn requantize_blocks(acc: &[i32], out: &mut [i8], stage: &OutputStage) -> usize {
        let Some(rq) = Requant::new(stage) else {
            return 0;
        };
        let n = acc.len().min(out.len());
        let mut i = 0;
        // SAFETY: blocks of 8 end at or before `n`, the shorter of both slices.
        unsafe {
            while i + 8 <= n {
                let a = _mm_loadu_si128(acc.as_ptr().add(i) as *const __m128i);
                let b = _mm_loadu_si128(acc.as_ptr().add(i + 4) as *const __m128i);
                let v = rq.narrow8(a, b);
                _mm_storel_epi64(
                    out.as_mut_ptr().add(i) as *mut __m128i,
                    _mm_packs_epi16(v, v),
                );
                i += 8;
            }
        }
        i
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::Activation;
    use crate::quant::QuantParams;

    // accumulator scales giving right shifts below and above 32 bits
    fn stages() -> Vec<OutputStage> {
        let out = QuantParams::new(0.05, -9).unwrap();
        [0.2, 1e-4, 3e-6]
            .into_iter()
            .map(|s| OutputStage::new(s, out, Activation::Relu6).unwrap())
            .collect()
    }

    #[test]
    fn conv_pixel_matches_direct_sum() {
        let (taps, in_c, out_c) = (2, 3, 29);
        let w: Vec<i8> = (0..taps * in_c * out_c)
            .map(|i| (i as i32 * 37 % 255 - 127) as i8)
            .collect();
        let f = PackedConv::new(&w, 5, taps, in_c, out_c);
        let q: Vec<i8> = vec![-128, 7, 100, 127, 0, -1];
        let bias: Vec<i32> = (0..out_c as i32).map(|c| c * 1000 - 9000).collect();
        let mut x = Vec::new();
        for t in 0..taps {
            widen_pixel(&mut x, &q[t * in_c..(t + 1) * in_c], 3);
        }
        let rows: Vec<usize> = (0..taps).map(|t| f.row(t, 0)).collect();
        for stage in stages() {
            let mut out = vec![0i8; out_c];
            conv_pixel(&mut out, &bias, &f, &rows, &x, &stage);
            for co in 0..out_c {
                let mut want = bias[co];
                for t in 0..taps {
                    for ci in 0..in_c {
                        want += (q[t * in_c + ci] as i32 - 3)
                            * (w[(t * in_c + ci) * out_c + co] as i32 - 5);
                    }
                }
                assert_eq!(out[co], stage.apply(want), "channel {co}");
            }
        }
    }

    #[test]
    fn widen_pads_to_pairs() {
        let src: Vec<i8> = (0..19).map(|i| (i * 13) as i8).collect();
        let mut x = vec![7i16];
        widen_pixel(&mut x, &src, -128);
        assert_eq!(x.len(), 21);
        assert_eq!(x[20], 0);
        for (i, &q) in src.iter().enumerate() {
            assert_eq!(x[i + 1], q as i16 + 128);
        }
    }

    #[test]
    fn depthwise_pixel_matches_direct_sum() {
        let (taps, c) = (9, 19);
        let w: Vec<i8> = (0..taps * c)
            .map(|i| (i as i32 * 53 % 256 - 128) as i8)
            .collect();
        let f = PackedDepthwise::new(&w, -2, taps, c);
        let x: Vec<i16> = (0..40 * c)
            .map(|i| ((i * 17 + 5) % 511) as i16 - 255)
            .collect();
        let offs: Vec<usize> = (0..taps).map(|t| (t * 7 % 40) * c).collect();
        let bias = vec![-700; c];
        for stage in stages() {
            let mut out = vec![0i8; c];
            depthwise_pixel(&mut out, &bias, &f, &x, &offs, &stage);
            for ch in 0..c {
                let mut want = -700;
                for (t, &o) in offs.iter().enumerate() {
                    want += x[o + ch] as i32 * (w[t * c + ch] as i32 + 2);
                }
                assert_eq!(out[ch], stage.apply(want), "channel {ch}");
            }
        }
    }
}
