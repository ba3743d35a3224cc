//! Graph construction and deterministic weight initialization.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{contract, Result};
use crate::kernels::{Activation, Padding};
use crate::tensor::Shape;

use super::{LayerKind, LayerSpec, ModelGraph, NumericMode, OpKind, Weight};

/// MobileNetV2 stages as (expansion t, channels c, repeats n, first stride s).
pub const INVERTED_RESIDUAL_TABLE: [(usize, usize, usize, usize); 7] = [
    (1, 16, 1, 1),
    (6, 24, 2, 2),
    (6, 32, 3, 2),
    (6, 64, 4, 2),
    (6, 96, 3, 1),
    (6, 160, 3, 2),
    (6, 320, 1, 1),
];

/// Rounds a scaled channel count to a multiple of `divisor`, never dropping
/// more than 10% below the unrounded value.
pub fn make_divisible(value: f64, divisor: usize) -> usize {
    let d = divisor as f64;
    let mut v = (((value + d / 2.0) / d).floor() * d).max(d);
    if v < 0.9 * value {
        v += d;
    }
    v as usize
}

#[derive(Clone, Debug, PartialEq)]
pub struct CashewNetConfig {
    pub width_multiplier: f64,
    pub num_classes: usize,
    pub head_units: usize,
    pub dropout: f64,
    pub input_size: usize,
    pub seed: u64,
}

impl Default for CashewNetConfig {
    fn default() -> Self {
        Self {
            width_multiplier: 0.35,
            num_classes: 2,
            head_units: 16,
            dropout: 0.1,
            input_size: 96,
            seed: 0,
        }
    }
}

/// Builds the float32 MobileNetV2-style classifier with a dense head.
pub fn build_cashew_net(cfg: &CashewNetConfig) -> Result<ModelGraph> {
    let w = cfg.width_multiplier;
    if !(w > 0.0 && w <= 1.0) {
        return Err(contract(format!(
            "width multiplier must be in (0, 1], got {w}"
        )));
    }
    if cfg.num_classes < 2 {
        return Err(contract(format!(
            "need at least 2 classes, got {}",
            cfg.num_classes
        )));
    }
    if cfg.head_units == 0 {
        return Err(contract("head must have at least one unit"));
    }
    if !(0.0..1.0).contains(&cfg.dropout) {
        return Err(contract(format!(
            "dropout rate must be in [0, 1), got {}",
            cfg.dropout
        )));
    }
    if cfg.input_size < 32 {
        return Err(contract(format!(
            "input size {} is below the 32-pixel minimum",
            cfg.input_size
        )));
    }

    let mut b = GraphBuilder::new(Shape::new(vec![1, cfg.input_size, cfg.input_size, 3])?);
    let mut channels = make_divisible(32.0 * w, 8);
    b = b.layer(
        "stem",
        LayerKind::Conv {
            out_channels: channels,
            kernel: 3,
            stride: 2,
            padding: Padding::Same,
            activation: Activation::Relu6,
        },
    );
    let mut block = 0;
    for &(t, c, n, s) in &INVERTED_RESIDUAL_TABLE {
        let out = make_divisible(c as f64 * w, 8);
        for i in 0..n {
            block += 1;
            let stride = if i == 0 { s } else { 1 };
            b = b.layer(
                format!("block{block}"),
                LayerKind::InvertedResidual {
                    expansion: t,
                    stride,
                    out_channels: out,
                    residual: stride == 1 && channels == out,
                },
            );
            channels = out;
        }
    }
    let last = if w > 1.0 {
        make_divisible(1280.0 * w, 8)
    } else {
        1280
    };
    b = b
        .layer(
            "head_conv",
            LayerKind::Conv {
                out_channels: last,
                kernel: 1,
                stride: 1,
                padding: Padding::Same,
                activation: Activation::Relu6,
            },
        )
        .layer("pool", LayerKind::GlobalAvgPool)
        .layer(
            "head/dense",
            LayerKind::Dense {
                units: cfg.head_units,
                activation: Activation::Relu6,
            },
        )
        .layer("head/dropout", LayerKind::Dropout { rate: cfg.dropout })
        .layer(
            "head/logits",
            LayerKind::Dense {
                units: cfg.num_classes,
                activation: Activation::None,
            },
        )
        .layer("softmax", LayerKind::Softmax)
        .meta("architecture", "mobilenet_v2")
        .meta("width_multiplier", w.to_string())
        .meta("num_classes", cfg.num_classes.to_string())
        .meta("head_units", cfg.head_units.to_string())
        .meta("dropout", cfg.dropout.to_string())
        .meta("seed", cfg.seed.to_string())
        .meta("input_normalization", "x/127.5-1")
        // parameter count reported for the full-scale model; not reproduced here
        .meta("reference_param_count", "6589734");
    b.build(cfg.seed)
}

/// Assembles a float32 graph from a layer list and initializes its weights.
#[derive(Clone, Debug)]
pub struct GraphBuilder {
    input_shape: Shape,
    layers: Vec<LayerSpec>,
    meta: BTreeMap<String, String>,
}

impl GraphBuilder {
    pub fn new(input_shape: Shape) -> Self {
        Self {
            input_shape,
            layers: Vec::new(),
            meta: BTreeMap::new(),
        }
    }

    pub fn layer(mut self, name: impl Into<String>, kind: LayerKind) -> Self {
        self.layers.push(LayerSpec::new(name, kind));
        self
    }

    pub fn meta(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.meta.insert(key.into(), value.into());
        self
    }

    /// Lowers the layers and draws every weight from a generator keyed by
    /// `(seed, layer index)`; biases start at zero.
    pub fn build(self, seed: u64) -> Result<ModelGraph> {
        let mut g = ModelGraph {
            input_shape: self.input_shape,
            layers: self.layers,
            weights: BTreeMap::new(),
            mode: NumericMode::Float32,
            quant: None,
            meta: self.meta,
        };
        let program = g.program()?;
        let mut rngs: BTreeMap<usize, ChaCha8Rng> = BTreeMap::new();
        for op in &program.ops {
            let Some(param) = op.kind.param() else {
                continue;
            };
            let (wshape, bias_len) = program.weight_shapes(op).expect("weighted op");
            let fan_in: usize = match op.kind {
                OpKind::Depthwise { .. } => wshape[0] * wshape[1],
                _ => wshape[..wshape.len() - 1].iter().product(),
            };
            let gain = match op.kind.activation() {
                Activation::Relu6 => 2.0,
                Activation::None => 1.0,
            };
            let std = (gain / fan_in as f64).sqrt();
            let rng = rngs
                .entry(op.layer)
                .or_insert_with(|| layer_rng(seed, op.layer));
            let wshape = Shape::new(wshape)?;
            let data = (0..wshape.numel())
                .map(|_| (truncated_normal(rng) * std) as f32)
                .collect();
            g.weights
                .insert(format!("{param}.weight"), Weight::f32(wshape, data)?);
            g.weights.insert(
                format!("{param}.bias"),
                Weight::f32(Shape::new(vec![bias_len])?, vec![0.0; bias_len])?,
            );
        }
        g.validate()?;
        Ok(g)
    }
}

pub(crate) fn layer_rng(seed: u64, layer: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (layer as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Standard normal draw rejected outside two standard deviations.
pub(crate) fn truncated_normal(rng: &mut impl Rng) -> f64 {
    loop {
        let z: f64 = rng.sample(StandardNormal);
        if z.abs() <= 2.0 {
            return z;
        }
    }
}
