use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{contract, Error, Result};
use crate::graph::truncated_normal;
use crate::kernels::relu6_scalar;
use crate::scalar::Scalar;

use super::features::{FeatureMatrix, Standardizer};
use super::{clip_gradients, one_cycle_lr, TrainConfig};

/// Dense(hidden, relu6) -> Dense(classes) parameters in one flat vector:
/// `w1 [dim, hidden]`, `b1 [hidden]`, `w2 [hidden, classes]`, `b2 [classes]`.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadParams<T> {
    pub dim: usize,
    pub hidden: usize,
    pub classes: usize,
    pub params: Vec<T>,
}

impl<T: Scalar> HeadParams<T> {
    pub fn count(dim: usize, hidden: usize, classes: usize) -> usize {
        dim * hidden + hidden + hidden * classes + classes
    }

    /// Truncated-normal weights with fan-in scaling, zero biases.
    pub fn init(dim: usize, hidden: usize, classes: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(Self::count(dim, hidden, classes));
        let std1 = (2.0 / dim.max(1) as f64).sqrt();
        params.extend((0..dim * hidden).map(|_| T::of(std1 * truncated_normal(&mut rng))));
        params.extend((0..hidden).map(|_| T::zero()));
        let std2 = (1.0 / hidden as f64).sqrt();
        params.extend((0..hidden * classes).map(|_| T::of(std2 * truncated_normal(&mut rng))));
        params.extend((0..classes).map(|_| T::zero()));
        Self {
            dim,
            hidden,
            classes,
            params,
        }
    }

    pub fn parts(&self) -> (&[T], &[T], &[T], &[T]) {
        let (w1, rest) = self.params.split_at(self.dim * self.hidden);
        let (b1, rest) = rest.split_at(self.hidden);
        let (w2, b2) = rest.split_at(self.hidden * self.classes);
        (w1, b1, w2, b2)
    }

    /// Whether flat index `i` is a weight (as opposed to a bias).
    pub fn is_weight(&self, i: usize) -> bool {
        let w1 = self.dim * self.hidden;
        let w2 = w1 + self.hidden;
        i < w1 || (w2..w2 + self.hidden * self.classes).contains(&i)
    }

    pub fn logits(&self, x: &[T]) -> Vec<T> {
        let (w1, b1, w2, b2) = self.parts();
        let h: Vec<T> = (0..self.hidden)
            .map(|j| {
                relu6_scalar(
                    b1[j]
                        + (0..self.dim)
                            .map(|i| x[i] * w1[i * self.hidden + j])
                            .sum::<T>(),
                )
            })
            .collect();
        (0..self.classes)
            .map(|k| {
                b2[k]
                    + (0..self.hidden)
                        .map(|j| h[j] * w2[j * self.classes + k])
                        .sum::<T>()
            })
            .collect()
    }

    pub fn predict(&self, x: &[T]) -> usize {
        let z = self.logits(x);
        (0..z.len()).fold(0, |best, k| if z[k] > z[best] { k } else { best })
    }

    pub fn accuracy(&self, x: &FeatureMatrix<T>, labels: &[usize]) -> f64 {
        let hits = x
            .iter()
            .zip(labels)
            .filter(|(r, &y)| self.predict(r) == y)
            .count();
        hits as f64 / labels.len().max(1) as f64
    }

    /// Mean cross-entropy over the rows and its gradient, without dropout.
    pub fn loss_and_grad(&self, x: &FeatureMatrix<T>, labels: &[usize]) -> Result<(T, Vec<T>)> {
        if x.rows() != labels.len() || x.dim() != self.dim || x.rows() == 0 {
            return Err(contract("features, labels and head dimensions disagree"));
        }
        if let Some(&y) = labels.iter().find(|&&y| y >= self.classes) {
            return Err(contract(format!(
                "label {y} outside {} classes",
                self.classes
            )));
        }
        let rows: Vec<usize> = (0..x.rows()).collect();
        Ok(self.forward_backward(x, &rows, labels, None))
    }

    /// `mask[r * hidden + j]` multiplies hidden unit `j` of batch row `r`.
    fn forward_backward(
        &self,
        x: &FeatureMatrix<T>,
        rows: &[usize],
        labels: &[usize],
        mask: Option<&[T]>,
    ) -> (T, Vec<T>) {
        let (hd, c) = (self.hidden, self.classes);
        let (w1, b1, w2, b2) = self.parts();
        let inv_b = T::one() / T::of(rows.len() as f64);
        let mut grad = vec![T::zero(); self.params.len()];
        let (gw1_end, gb1_end) = (self.dim * hd, self.dim * hd + hd);
        let gw2_end = gb1_end + hd * c;
        let mut loss = T::zero();
        let mut z1 = vec![T::zero(); hd];
        let mut d = vec![T::zero(); hd];
        let mut dz2 = vec![T::zero(); c];
        let six = T::of(6.0);
        for (r, &i) in rows.iter().enumerate() {
            let xi = x.row(i);
            let y = labels[i];
            for j in 0..hd {
                z1[j] = b1[j] + (0..self.dim).map(|k| xi[k] * w1[k * hd + j]).sum::<T>();
                let m = mask.map_or(T::one(), |m| m[r * hd + j]);
                d[j] = relu6_scalar(z1[j]) * m;
            }
            for k in 0..c {
                dz2[k] = b2[k] + (0..hd).map(|j| d[j] * w2[j * c + k]).sum::<T>();
            }
            let max = dz2.iter().copied().fold(T::neg_infinity(), T::max);
            let sum: T = dz2.iter().map(|&z| (z - max).exp()).sum();
            let lse = max + sum.ln();
            loss += lse - dz2[y];
            // dz2 becomes (softmax - onehot) / batch
            for (k, z) in dz2.iter_mut().enumerate() {
                let p = (*z - lse).exp();
                *z = (p - if k == y { T::one() } else { T::zero() }) * inv_b;
            }
            for j in 0..hd {
                let mut dd = T::zero();
                for k in 0..c {
                    grad[gb1_end + j * c + k] += d[j] * dz2[k];
                    dd += w2[j * c + k] * dz2[k];
                }
                let m = mask.map_or(T::one(), |m| m[r * hd + j]);
                let dz1 = if z1[j] > T::zero() && z1[j] < six {
                    dd * m
                } else {
                    T::zero()
                };
                if dz1 != T::zero() {
                    for k in 0..self.dim {
                        grad[k * hd + j] += xi[k] * dz1;
                    }
                    grad[gw1_end + j] += dz1;
                }
            }
            for k in 0..c {
                grad[gw2_end + k] += dz2[k];
            }
        }
        (loss * inv_b, grad)
    }

    /// Plain SGD step with decoupled weight decay on weights (not biases):
    /// `w <- w * (1 - lr * wd) - lr * g`, `b <- b - lr * g`.
    pub fn sgd_step(&mut self, grads: &[T], lr: f64, weight_decay: f64) {
        let decay = T::of(1.0 - lr * weight_decay);
        let lr = T::of(lr);
        for (i, &g) in grads[..self.params.len()].iter().enumerate() {
            let p = if self.is_weight(i) {
                self.params[i] * decay
            } else {
                self.params[i]
            };
            self.params[i] = p - lr * g;
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport<T> {
    pub losses: Vec<f64>,
    pub learning_rates: Vec<f64>,
    pub head: HeadParams<T>,
    pub standardizer: Standardizer<T>,
    pub train_accuracy: f64,
    pub validation_accuracy: Option<f64>,
}

impl<T: Scalar> TrainReport<T> {
    /// `step<TAB>lr<TAB>loss`, one line per step after a header.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("step\tlr\tloss\n");
        for (i, (lr, loss)) in self.learning_rates.iter().zip(&self.losses).enumerate() {
            writeln!(s, "{i}\t{lr}\t{loss}").expect("string write");
        }
        s
    }

    /// Predicts from raw (unstandardized) features.
    pub fn predict(&self, x: &[T]) -> usize {
        let z: Vec<T> = x
            .iter()
            .zip(&self.standardizer.mean)
            .zip(&self.standardizer.scale)
            .map(|((&v, &m), &s)| (v - m) * s)
            .collect();
        self.head.predict(&z)
    }
}

fn check_inputs<T: Scalar>(x: &FeatureMatrix<T>, labels: &[usize]) -> Result<()> {
    if x.rows() != labels.len() {
        return Err(contract(format!(
            "{} feature rows but {} labels",
            x.rows(),
            labels.len()
        )));
    }
    if x.data().iter().any(|v| !v.is_finite()) {
        return Err(contract("features must be finite"));
    }
    Ok(())
}

/// Trains the head with mini-batch SGD under the one-cycle schedule.
/// Features are standardized with statistics of the training rows.
pub fn train_head<T: Scalar>(
    x: &FeatureMatrix<T>,
    labels: &[usize],
    validation: Option<(&FeatureMatrix<T>, &[usize])>,
    cfg: &TrainConfig,
) -> Result<TrainReport<T>> {
    cfg.validate()?;
    check_inputs(x, labels)?;
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut seen = vec![false; classes];
    labels.iter().for_each(|&y| seen[y] = true);
    if seen.iter().filter(|&&s| s).count() < 2 {
        return Err(Error::Training(
            "training labels must contain at least two classes".into(),
        ));
    }
    if let Some((vx, vy)) = validation {
        check_inputs(vx, vy)?;
        if vx.dim() != x.dim() {
            return Err(contract("validation features have a different width"));
        }
    }

    let standardizer = Standardizer::fit(x);
    let xs = standardizer.apply(x);
    let mut head = HeadParams::init(x.dim(), cfg.hidden_units, classes, cfg.seed);
    let mut batch_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xB47C_4E5D_0000_0001);
    let mut drop_rng =
        ChaCha8Rng::seed_from_u64(cfg.dropout_seed.unwrap_or(cfg.seed ^ 0xD409_0A7E_0000_0002));
    let keep = 1.0 - cfg.dropout_rate;
    let keep_scale = T::of(1.0 / keep);

    let mut order: Vec<usize> = (0..x.rows()).collect();
    let mut cursor = order.len();
    let batch = cfg.batch_size.min(x.rows());
    let mut losses = Vec::with_capacity(cfg.total_steps);
    let mut lrs = Vec::with_capacity(cfg.total_steps);
    let mut mask = Vec::new();
    for step in 0..cfg.total_steps {
        let lr = one_cycle_lr(step, cfg)?;
        if cursor + batch > order.len() {
            order.shuffle(&mut batch_rng);
            cursor = 0;
        }
        let rows = &order[cursor..cursor + batch];
        cursor += batch;
        let mask = if cfg.dropout_rate > 0.0 {
            mask.clear();
            mask.extend((0..batch * cfg.hidden_units).map(|_| {
                if drop_rng.random::<f64>() < keep {
                    keep_scale
                } else {
                    T::zero()
                }
            }));
            Some(mask.as_slice())
        } else {
            None
        };
        let (loss, grad) = head.forward_backward(&xs, rows, labels, mask);
        if !loss.is_finite() {
            return Err(Error::Training(format!("non-finite loss at step {step}")));
        }
        let grad = match cfg.clip_norm {
            Some(c) => clip_gradients(&grad, c)?.0,
            None => grad,
        };
        head.sgd_step(&grad, lr, cfg.weight_decay);
        losses.push(loss.as_f64());
        lrs.push(lr);
    }

    let train_accuracy = head.accuracy(&xs, labels);
    let validation_accuracy = validation.map(|(vx, vy)| head.accuracy(&standardizer.apply(vx), vy));
    Ok(TrainReport {
        losses,
        learning_rates: lrs,
        head,
        standardizer,
        train_accuracy,
        validation_accuracy,
    })
}
