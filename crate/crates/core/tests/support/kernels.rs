//! Direct loop references for every kernel and randomized comparisons
//! against them. Each check returns the first disagreement as an error.

use cashew_core::kernels::{
    conv2d, conv2d_q, depthwise_conv2d, depthwise_conv2d_q, fully_connected, fully_connected_q,
    global_avg_pool, global_avg_pool_q, Activation, ConvAttrs, OutputStage, Padding,
};
use cashew_core::{QTensor, QuantParams, Shape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Check;

pub const INSTANCES: u64 = 100;

struct Case {
    n: usize,
    h: usize,
    w: usize,
    cin: usize,
    cout: usize,
    k: usize,
    stride: usize,
    padding: Padding,
    act: Activation,
}

fn random_case(rng: &mut ChaCha8Rng) -> Case {
    let k = [1, 3, 3, 5][rng.random_range(0..4)];
    let padding = if rng.random_bool(0.5) {
        Padding::Same
    } else {
        Padding::Valid
    };
    let min = if padding == Padding::Valid { k } else { 1 };
    Case {
        n: rng.random_range(1..=2),
        h: rng.random_range(min..=min + 7),
        w: rng.random_range(min..=min + 7),
        cin: rng.random_range(1..=19),
        cout: rng.random_range(1..=21),
        k,
        stride: rng.random_range(1..=2),
        padding,
        act: if rng.random_bool(0.5) {
            Activation::Relu6
        } else {
            Activation::None
        },
    }
}

fn extent(input: usize, k: usize, s: usize, p: Padding) -> (usize, usize) {
    match p {
        Padding::Valid => ((input - k) / s + 1, 0),
        Padding::Same => {
            let out = input.div_ceil(s);
            let total = ((out - 1) * s + k).saturating_sub(input);
            (out, total / 2)
        }
    }
}

/// Direct convolution over integer or real values. `depthwise` uses
/// weight `[ky][kx][c]` for channel `c` only.
fn reference_conv<T: Copy + Default + std::ops::AddAssign + std::ops::Mul<Output = T>>(
    c: &Case,
    x: &[T],
    wt: &[T],
    bias: &[T],
    depthwise: bool,
) -> (Vec<T>, usize, usize) {
    let (oh, pt) = extent(c.h, c.k, c.stride, c.padding);
    let (ow, pl) = extent(c.w, c.k, c.stride, c.padding);
    let cout = if depthwise { c.cin } else { c.cout };
    let mut out = vec![T::default(); c.n * oh * ow * cout];
    for b in 0..c.n {
        for oy in 0..oh {
            for ox in 0..ow {
                for co in 0..cout {
                    let mut acc = bias[co];
                    for ky in 0..c.k {
                        for kx in 0..c.k {
                            let iy = (oy * c.stride + ky) as isize - pt as isize;
                            let ix = (ox * c.stride + kx) as isize - pl as isize;
                            if iy < 0 || ix < 0 || iy >= c.h as isize || ix >= c.w as isize {
                                continue;
                            }
                            let px = ((b * c.h + iy as usize) * c.w + ix as usize) * c.cin;
                            if depthwise {
                                acc += x[px + co] * wt[(ky * c.k + kx) * c.cin + co];
                            } else {
                                for ci in 0..c.cin {
                                    acc += x[px + ci]
                                        * wt[((ky * c.k + kx) * c.cin + ci) * c.cout + co];
                                }
                            }
                        }
                    }
                    out[((b * oh + oy) * ow + ox) * cout + co] = acc;
                }
            }
        }
    }
    (out, oh, ow)
}

/// `acc * mantissa * 2^(exponent - 31)` rounded half away from zero,
/// plus the zero point, clamped to the activation range.
fn reference_requant(acc: i64, stage: &OutputStage, out: QuantParams, act: Activation) -> i8 {
    let shift = 31 - stage.multiplier.exponent();
    let prod = acc as i128 * stage.multiplier.mantissa() as i128;
    let v = if shift > 0 {
        let half = 1i128 << (shift - 1);
        let mag = (prod.abs() + half) >> shift;
        if prod < 0 {
            -mag
        } else {
            mag
        }
    } else {
        prod << -shift
    };
    let (lo, hi) = match act {
        Activation::None => (-128i128, 127i128),
        Activation::Relu6 => {
            let code = |r: f64| {
                ((r / out.scale() as f64).round() as i128 + out.zero_point() as i128)
                    .clamp(-128, 127)
            };
            (code(0.0), code(6.0))
        }
    };
    (v + out.zero_point() as i128).clamp(lo, hi) as i8
}

fn relu6(v: f64, act: Activation) -> f64 {
    match act {
        Activation::Relu6 => v.clamp(0.0, 6.0),
        Activation::None => v,
    }
}

fn params(rng: &mut ChaCha8Rng, lo: f32, hi: f32, zp: bool) -> QuantParams {
    let zp = if zp { rng.random_range(-128..=127) } else { 0 };
    QuantParams::new(rng.random_range(lo..hi), zp).unwrap()
}

fn random_i8(rng: &mut ChaCha8Rng, n: usize) -> Vec<i8> {
    (0..n).map(|_| rng.random()).collect()
}

fn random_f(rng: &mut ChaCha8Rng, n: usize, r: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-r..r)).collect()
}

fn close(got: &[f32], want: &[f64], act: Activation, what: &str) -> Check {
    if got.len() != want.len() {
        return Err(format!("{what}: length {} vs {}", got.len(), want.len()));
    }
    for (i, (&g, &w)) in got.iter().zip(want).enumerate() {
        let w = relu6(w, act);
        if (g as f64 - w).abs() > 1e-5 {
            return Err(format!("{what}[{i}]: {g} vs {w}"));
        }
    }
    Ok(())
}

pub fn conv_like_int8(depthwise: bool, seed_base: u64) -> Check {
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed_base + seed);
        let c = random_case(&mut rng);
        let cout = if depthwise { c.cin } else { c.cout };
        let pin = params(&mut rng, 0.005, 0.1, true);
        let pw = params(&mut rng, 0.001, 0.05, false);
        let pout = params(&mut rng, 0.01, 0.3, true);
        let x = random_i8(&mut rng, c.n * c.h * c.w * c.cin);
        let wlen = if depthwise {
            c.k * c.k * c.cin
        } else {
            c.k * c.k * c.cin * c.cout
        };
        let w = random_i8(&mut rng, wlen);
        let bias: Vec<i32> = (0..cout)
            .map(|_| rng.random_range(-50_000..50_000))
            .collect();
        let attrs = ConvAttrs::new(c.stride, c.padding, c.act).unwrap();
        let xin = QTensor::new(
            Shape::new(vec![c.n, c.h, c.w, c.cin]).unwrap(),
            x.clone(),
            pin,
        )
        .unwrap();
        let got = if depthwise {
            let wt =
                QTensor::new(Shape::new(vec![c.k, c.k, 1, c.cin]).unwrap(), w.clone(), pw).unwrap();
            depthwise_conv2d_q(&xin, &wt, &bias, pout, attrs).unwrap()
        } else {
            let wt = QTensor::new(
                Shape::new(vec![c.k, c.k, c.cin, c.cout]).unwrap(),
                w.clone(),
                pw,
            )
            .unwrap();
            conv2d_q(&xin, &wt, &bias, pout, attrs).unwrap()
        };
        let stage = OutputStage::new(pin.scale() as f64 * pw.scale() as f64, pout, c.act).unwrap();
        let xi: Vec<i64> = x
            .iter()
            .map(|&v| v as i64 - pin.zero_point() as i64)
            .collect();
        let wi: Vec<i64> = w.iter().map(|&v| v as i64).collect();
        let bi: Vec<i64> = bias.iter().map(|&b| b as i64).collect();
        let (acc, oh, ow) = reference_conv(&c, &xi, &wi, &bi, depthwise);
        let want: Vec<i8> = acc
            .iter()
            .map(|&a| reference_requant(a, &stage, pout, c.act))
            .collect();
        if got.shape().dims() != [c.n, oh, ow, cout] {
            return Err(format!("seed {seed}: shape {}", got.shape()));
        }
        if got.data() != want.as_slice() {
            return Err(format!("seed {seed}: int8 output differs from reference"));
        }
    }
    Ok(())
}

pub fn conv_like_float(depthwise: bool, seed_base: u64) -> Check {
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed_base + seed);
        let c = random_case(&mut rng);
        let cout = if depthwise { c.cin } else { c.cout };
        let x = random_f(&mut rng, c.n * c.h * c.w * c.cin, 1.0);
        let wlen = if depthwise {
            c.k * c.k * c.cin
        } else {
            c.k * c.k * c.cin * c.cout
        };
        let w = random_f(&mut rng, wlen, 0.5);
        let bias = random_f(&mut rng, cout, 1.0);
        let attrs = ConvAttrs::new(c.stride, c.padding, c.act).unwrap();
        let f32s = |v: &[f64]| v.iter().map(|&a| a as f32).collect::<Vec<f32>>();
        // reference sees exactly the f32 values the kernel sees
        let (x, w, bias) = (
            f32s(&x).iter().map(|&a| a as f64).collect::<Vec<_>>(),
            f32s(&w).iter().map(|&a| a as f64).collect::<Vec<_>>(),
            f32s(&bias).iter().map(|&a| a as f64).collect::<Vec<_>>(),
        );
        let xin = Tensor::new(Shape::new(vec![c.n, c.h, c.w, c.cin]).unwrap(), f32s(&x)).unwrap();
        let got = if depthwise {
            let wt = Tensor::new(Shape::new(vec![c.k, c.k, 1, c.cin]).unwrap(), f32s(&w)).unwrap();
            depthwise_conv2d(&xin, &wt, &f32s(&bias), attrs).unwrap()
        } else {
            let wt =
                Tensor::new(Shape::new(vec![c.k, c.k, c.cin, c.cout]).unwrap(), f32s(&w)).unwrap();
            conv2d(&xin, &wt, &f32s(&bias), attrs).unwrap()
        };
        let (want, _, _) = reference_conv(&c, &x, &w, &bias, depthwise);
        close(got.data(), &want, c.act, &format!("seed {seed}"))?;

        // the same kernel at double precision agrees far more tightly
        let xin = Tensor::new(xin.shape().clone(), x.clone()).unwrap();
        let got64 = if depthwise {
            depthwise_conv2d(
                &xin,
                &Tensor::new(Shape::new(vec![c.k, c.k, 1, c.cin]).unwrap(), w.clone()).unwrap(),
                &bias,
                attrs,
            )
        } else {
            conv2d(
                &xin,
                &Tensor::new(
                    Shape::new(vec![c.k, c.k, c.cin, c.cout]).unwrap(),
                    w.clone(),
                )
                .unwrap(),
                &bias,
                attrs,
            )
        }
        .unwrap();
        for (g, wv) in got64.data().iter().zip(&want) {
            if (g - relu6(*wv, c.act)).abs() >= 1e-12 {
                return Err(format!("seed {seed}: f64 kernel {g} vs {wv}"));
            }
        }
    }
    Ok(())
}

pub fn dense_check() -> Check {
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(5_000 + seed);
        let (batch, fin, fout) = (
            rng.random_range(1..=3),
            rng.random_range(1..=70),
            rng.random_range(1..=33),
        );
        let act = if rng.random_bool(0.5) {
            Activation::Relu6
        } else {
            Activation::None
        };

        let pin = params(&mut rng, 0.005, 0.1, true);
        let pw = params(&mut rng, 0.001, 0.05, false);
        let pout = params(&mut rng, 0.01, 0.3, true);
        let x = random_i8(&mut rng, batch * fin);
        let w = random_i8(&mut rng, fin * fout);
        let bias: Vec<i32> = (0..fout)
            .map(|_| rng.random_range(-50_000..50_000))
            .collect();
        let got = fully_connected_q(
            &QTensor::new(Shape::new(vec![batch, fin]).unwrap(), x.clone(), pin).unwrap(),
            &QTensor::new(Shape::new(vec![fin, fout]).unwrap(), w.clone(), pw).unwrap(),
            &bias,
            pout,
            act,
        )
        .unwrap();
        let stage = OutputStage::new(pin.scale() as f64 * pw.scale() as f64, pout, act).unwrap();
        let mut want = Vec::new();
        for b in 0..batch {
            for o in 0..fout {
                let mut acc = bias[o] as i64;
                for i in 0..fin {
                    acc +=
                        (x[b * fin + i] as i64 - pin.zero_point() as i64) * w[i * fout + o] as i64;
                }
                want.push(reference_requant(acc, &stage, pout, act));
            }
        }
        if got.data() != want.as_slice() {
            return Err(format!("seed {seed}: int8 dense differs from reference"));
        }

        let xf: Vec<f32> = (0..batch * fin)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let wf: Vec<f32> = (0..fin * fout)
            .map(|_| rng.random_range(-0.5..0.5))
            .collect();
        let bf: Vec<f32> = (0..fout).map(|_| rng.random_range(-1.0..1.0)).collect();
        let got = fully_connected(
            &Tensor::new(Shape::new(vec![batch, fin]).unwrap(), xf.clone()).unwrap(),
            &Tensor::new(Shape::new(vec![fin, fout]).unwrap(), wf.clone()).unwrap(),
            &bf,
            act,
        )
        .unwrap();
        let mut want = Vec::new();
        for b in 0..batch {
            for o in 0..fout {
                let s: f64 = (0..fin)
                    .map(|i| xf[b * fin + i] as f64 * wf[i * fout + o] as f64)
                    .sum();
                want.push(s + bf[o] as f64);
            }
        }
        close(got.data(), &want, act, &format!("seed {seed}"))?;
    }
    Ok(())
}

pub fn pool_check() -> Check {
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(6_000 + seed);
        let (n, h, w, c) = (
            rng.random_range(1..=2),
            rng.random_range(1..=9),
            rng.random_range(1..=9),
            rng.random_range(1..=40),
        );
        let shape = Shape::new(vec![n, h, w, c]).unwrap();
        let p = params(&mut rng, 0.01, 0.2, true);
        let q = random_i8(&mut rng, n * h * w * c);
        let got = global_avg_pool_q(&QTensor::new(shape.clone(), q.clone(), p).unwrap()).unwrap();
        if got.params() != p {
            return Err(format!("seed {seed}: pooled params changed"));
        }
        let xf: Vec<f32> = (0..n * h * w * c)
            .map(|_| rng.random_range(-3.0..3.0))
            .collect();
        let gotf = global_avg_pool(&Tensor::new(shape, xf.clone()).unwrap()).unwrap();
        for b in 0..n {
            for ch in 0..c {
                let idx = |y: usize, x: usize| ((b * h + y) * w + x) * c + ch;
                let sum: i64 = (0..h)
                    .flat_map(|y| (0..w).map(move |x| (y, x)))
                    .map(|(y, x)| q[idx(y, x)] as i64)
                    .sum();
                // half away from zero on an exact quotient
                let want = (sum as f64 / (h * w) as f64).round() as i8;
                if got.data()[b * c + ch] != want {
                    return Err(format!(
                        "seed {seed}: int8 mean {} vs {want}",
                        got.data()[b * c + ch]
                    ));
                }
                let mean: f64 = (0..h)
                    .flat_map(|y| (0..w).map(move |x| (y, x)))
                    .map(|(y, x)| xf[idx(y, x)] as f64)
                    .sum::<f64>()
                    / (h * w) as f64;
                if (gotf.data()[b * c + ch] as f64 - mean).abs() > 1e-5 {
                    return Err(format!(
                        "seed {seed}: float mean {} vs {mean}",
                        gotf.data()[b * c + ch]
                    ));
                }
            }
        }
    }
    Ok(())
}
