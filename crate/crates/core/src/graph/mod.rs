//! Model representation, MobileNetV2-style builder, static arena planning,
//! execution and the on-disk model format.

mod arena;
mod builder;
mod exec;
mod format;
mod program;

pub use arena::{plan_arena, plan_buffers, ArenaPlan, BufferAlloc, BufferRequest};
pub(crate) use builder::truncated_normal;
pub use builder::{
    build_cashew_net, make_divisible, CashewNetConfig, GraphBuilder, INVERTED_RESIDUAL_TABLE,
};
pub use exec::{execute, Activations, Executor, TracedTensor};
pub use format::{from_bytes, load_model, save_model, to_bytes, MAGIC, VERSION};
pub use program::{Op, OpKind, Program, TensorInfo};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::fixed_point::FixedPointMultiplier;
use crate::kernels::{Activation, Padding};
use crate::quant::QuantParams;
use crate::tensor::{DType, Shape};

/// Name of the graph input tensor in quantization tables and traces.
pub const INPUT_TENSOR: &str = "input";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NumericMode {
    Float32,
    Int8,
}

impl NumericMode {
    pub fn activation_dtype(self) -> DType {
        match self {
            NumericMode::Float32 => DType::F32,
            NumericMode::Int8 => DType::I8,
        }
    }
}

impl std::fmt::Display for NumericMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            NumericMode::Float32 => "float32",
            NumericMode::Int8 => "int8",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerKind {
    Conv {
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: Padding,
        activation: Activation,
    },
    DepthwiseConv {
        kernel: usize,
        stride: usize,
        padding: Padding,
        activation: Activation,
    },
    /// Expand (1x1, relu6) → depthwise 3x3 (relu6) → project (1x1, linear),
    /// plus a skip connection when `residual` is set.
    InvertedResidual {
        expansion: usize,
        stride: usize,
        out_channels: usize,
        residual: bool,
    },
    GlobalAvgPool,
    Dense {
        units: usize,
        activation: Activation,
    },
    Dropout {
        rate: f64,
    },
    Softmax,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: LayerKind,
}

impl LayerSpec {
    pub fn new(name: impl Into<String>, kind: LayerKind) -> Self {
        Self {
            name: name.into(),
            kind,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum WeightData {
    F32(Vec<f32>),
    I8(Vec<i8>),
    I32(Vec<i32>),
}

impl WeightData {
    pub fn dtype(&self) -> DType {
        match self {
            WeightData::F32(_) => DType::F32,
            WeightData::I8(_) => DType::I8,
            WeightData::I32(_) => DType::I32,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            WeightData::F32(v) => v.len(),
            WeightData::I8(v) => v.len(),
            WeightData::I32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A named parameter tensor. Int8 weights carry their quantization
/// parameters; int32 biases are implicitly at `in_scale * w_scale`.
#[derive(Clone, Debug, PartialEq)]
pub struct Weight {
    pub shape: Shape,
    pub data: WeightData,
    pub params: Option<QuantParams>,
}

impl Weight {
    pub fn f32(shape: Shape, data: Vec<f32>) -> Result<Self> {
        Self::checked(shape, WeightData::F32(data), None)
    }

    pub fn i8(shape: Shape, data: Vec<i8>, params: QuantParams) -> Result<Self> {
        Self::checked(shape, WeightData::I8(data), Some(params))
    }

    pub fn i32(shape: Shape, data: Vec<i32>) -> Result<Self> {
        Self::checked(shape, WeightData::I32(data), None)
    }

    fn checked(shape: Shape, data: WeightData, params: Option<QuantParams>) -> Result<Self> {
        if data.len() != shape.numel() {
            return Err(contract(format!(
                "weight payload has {} elements, shape {} needs {}",
                data.len(),
                shape,
                shape.numel()
            )));
        }
        Ok(Self {
            shape,
            data,
            params,
        })
    }

    pub fn as_f32(&self) -> Result<&[f32]> {
        match &self.data {
            WeightData::F32(v) => Ok(v),
            other => Err(contract(format!(
                "expected f32 weight, found {:?}",
                other.dtype()
            ))),
        }
    }

    pub fn as_i8(&self) -> Result<(&[i8], QuantParams)> {
        match (&self.data, self.params) {
            (WeightData::I8(v), Some(p)) => Ok((v, p)),
            (WeightData::I8(_), None) => {
                Err(contract("int8 weight without quantization parameters"))
            }
            (other, _) => Err(contract(format!(
                "expected i8 weight, found {:?}",
                other.dtype()
            ))),
        }
    }

    pub fn as_i32(&self) -> Result<&[i32]> {
        match &self.data {
            WeightData::I32(v) => Ok(v),
            other => Err(contract(format!(
                "expected i32 bias, found {:?}",
                other.dtype()
            ))),
        }
    }
}

/// Quantization state of an int8 graph.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct QuantTable {
    /// Parameters of every int8 activation tensor, keyed by tensor name.
    pub activations: BTreeMap<String, QuantParams>,
    /// Requantization multipliers keyed by the producing op's output tensor:
    /// one for conv/dense ops, two (lhs, rhs) for residual adds.
    pub multipliers: BTreeMap<String, Vec<FixedPointMultiplier>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelGraph {
    pub input_shape: Shape,
    pub layers: Vec<LayerSpec>,
    pub weights: BTreeMap<String, Weight>,
    pub mode: NumericMode,
    pub quant: Option<QuantTable>,
    pub meta: BTreeMap<String, String>,
}

impl ModelGraph {
    /// Lowers the layer table to primitive ops, resolving every shape.
    pub fn program(&self) -> Result<Program> {
        Program::lower(self)
    }

    /// Checks shape chaining, weight presence and shapes, and quantization coverage.
    pub fn validate(&self) -> Result<Program> {
        let program = self.program()?;
        program.check_weights(self)?;
        if self.mode == NumericMode::Int8 {
            let table = self
                .quant
                .as_ref()
                .ok_or_else(|| contract("int8 graph has no quantization table"))?;
            for t in program.tensors.iter().filter(|t| t.dtype == DType::I8) {
                if !table.activations.contains_key(&t.name) {
                    return Err(contract(format!(
                        "int8 graph: tensor {} has no quantization parameters",
                        t.name
                    )));
                }
            }
            for op in &program.ops {
                let need = op.kind.multiplier_count();
                if need == 0 {
                    continue;
                }
                let name = &program.tensors[op.output].name;
                match table.multipliers.get(name) {
                    Some(m) if m.len() == need => {}
                    _ => {
                        return Err(contract(format!(
                            "int8 graph: op {name} is missing requantization multipliers"
                        )))
                    }
                }
            }
        }
        Ok(program)
    }

    pub fn weight(&self, name: &str) -> Result<&Weight> {
        self.weights
            .get(name)
            .ok_or_else(|| contract(format!("missing weight {name}")))
    }

    pub fn activation_params(&self, tensor: &str) -> Result<QuantParams> {
        self.quant
            .as_ref()
            .and_then(|q| q.activations.get(tensor).copied())
            .ok_or_else(|| contract(format!("tensor {tensor} has no quantization parameters")))
    }

    /// True when both graphs have the same input and layer table.
    pub fn same_architecture(&self, other: &ModelGraph) -> bool {
        self.input_shape == other.input_shape && self.layers == other.layers
    }

    /// Output width of the graph.
    pub fn num_outputs(&self) -> Result<usize> {
        let program = self.program()?;
        Ok(program.tensors[program.output()].shape.numel())
    }
}

/// Total weight plus bias element count.
pub fn count_params(g: &ModelGraph) -> usize {
    g.weights.values().map(|w| w.shape.numel()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layer_spec_serde_is_flat() {
        let l = LayerSpec::new(
            "b1",
            LayerKind::InvertedResidual {
                expansion: 6,
                stride: 1,
                out_channels: 8,
                residual: true,
            },
        );
        let s = serde_json::to_string(&l).unwrap();
        assert_eq!(
            s,
            r#"{"name":"b1","kind":"inverted_residual","expansion":6,"stride":1,"out_channels":8,"residual":true}"#
        );
        assert_eq!(serde_json::from_str::<LayerSpec>(&s).unwrap(), l);
    }
}
