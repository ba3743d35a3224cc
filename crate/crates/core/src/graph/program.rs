//! Lowering of the layer table into a flat list of primitive ops.

use crate::error::{contract, Result};
use crate::kernels::{output_extent, Activation, Padding};
use crate::tensor::{DType, Shape};

use super::{LayerKind, ModelGraph, NumericMode, INPUT_TENSOR};

#[derive(Clone, Debug, PartialEq)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Shape,
    pub dtype: DType,
}

impl TensorInfo {
    pub fn bytes(&self) -> usize {
        self.shape.numel() * self.dtype.size_of()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum OpKind {
    /// Weights live at `{param}.weight` / `{param}.bias`.
    Conv {
        param: String,
        kernel: usize,
        stride: usize,
        padding: Padding,
        activation: Activation,
    },
    Depthwise {
        param: String,
        kernel: usize,
        stride: usize,
        padding: Padding,
        activation: Activation,
    },
    Dense {
        param: String,
        activation: Activation,
    },
    Add,
    AvgPool,
    Softmax,
}

impl OpKind {
    pub fn param(&self) -> Option<&str> {
        match self {
            OpKind::Conv { param, .. }
            | OpKind::Depthwise { param, .. }
            | OpKind::Dense { param, .. } => Some(param),
            _ => None,
        }
    }

    pub fn activation(&self) -> Activation {
        match self {
            OpKind::Conv { activation, .. }
            | OpKind::Depthwise { activation, .. }
            | OpKind::Dense { activation, .. } => *activation,
            _ => Activation::None,
        }
    }

    /// Number of fixed-point multipliers an int8 version of this op needs.
    pub fn multiplier_count(&self) -> usize {
        match self {
            OpKind::Conv { .. } | OpKind::Depthwise { .. } | OpKind::Dense { .. } => 1,
            OpKind::Add => 2,
            _ => 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Op {
    pub kind: OpKind,
    pub inputs: Vec<usize>,
    pub output: usize,
    /// Index of the layer this op was lowered from.
    pub layer: usize,
}

/// A graph lowered to primitive ops over numbered tensors. Tensor 0 is the input.
#[derive(Clone, Debug, PartialEq)]
pub struct Program {
    pub tensors: Vec<TensorInfo>,
    pub ops: Vec<Op>,
    /// Output tensor of each layer, in layer order.
    pub layer_outputs: Vec<usize>,
}

struct Lowering {
    tensors: Vec<TensorInfo>,
    ops: Vec<Op>,
    act: DType,
}

impl Lowering {
    fn tensor(&mut self, name: String, shape: Shape, dtype: DType) -> usize {
        self.tensors.push(TensorInfo { name, shape, dtype });
        self.tensors.len() - 1
    }

    fn op(
        &mut self,
        kind: OpKind,
        inputs: Vec<usize>,
        name: String,
        shape: Shape,
        layer: usize,
    ) -> usize {
        let dtype = if kind == OpKind::Softmax {
            DType::F32
        } else {
            self.act
        };
        let output = self.tensor(name, shape, dtype);
        self.ops.push(Op {
            kind,
            inputs,
            output,
            layer,
        });
        output
    }

    fn shape(&self, t: usize) -> &Shape {
        &self.tensors[t].shape
    }

    #[allow(clippy::too_many_arguments)]
    fn conv(
        &mut self,
        input: usize,
        name: String,
        param: String,
        out_c: usize,
        kernel: usize,
        stride: usize,
        padding: Padding,
        activation: Activation,
        layer: usize,
    ) -> Result<usize> {
        let [n, h, w, _] = self.shape(input).nhwc()?;
        check_stride(stride, &name)?;
        let (oh, _) = output_extent(h, kernel, stride, padding)?;
        let (ow, _) = output_extent(w, kernel, stride, padding)?;
        let shape = Shape::new(vec![n, oh, ow, out_c])?;
        let kind = OpKind::Conv {
            param,
            kernel,
            stride,
            padding,
            activation,
        };
        Ok(self.op(kind, vec![input], name, shape, layer))
    }

    #[allow(clippy::too_many_arguments)]
    fn depthwise(
        &mut self,
        input: usize,
        name: String,
        param: String,
        kernel: usize,
        stride: usize,
        padding: Padding,
        activation: Activation,
        layer: usize,
    ) -> Result<usize> {
        let [n, h, w, c] = self.shape(input).nhwc()?;
        check_stride(stride, &name)?;
        let (oh, _) = output_extent(h, kernel, stride, padding)?;
        let (ow, _) = output_extent(w, kernel, stride, padding)?;
        let shape = Shape::new(vec![n, oh, ow, c])?;
        let kind = OpKind::Depthwise {
            param,
            kernel,
            stride,
            padding,
            activation,
        };
        Ok(self.op(kind, vec![input], name, shape, layer))
    }
}

fn check_stride(stride: usize, name: &str) -> Result<()> {
    if stride == 1 || stride == 2 {
        Ok(())
    } else {
        Err(contract(format!(
            "{name}: stride must be 1 or 2, got {stride}"
        )))
    }
}

impl Program {
    pub fn lower(g: &ModelGraph) -> Result<Self> {
        let act = g.mode.activation_dtype();
        let mut lw = Lowering {
            tensors: Vec::new(),
            ops: Vec::new(),
            act,
        };
        let mut cur = lw.tensor(INPUT_TENSOR.to_string(), g.input_shape.clone(), act);
        let mut layer_outputs = Vec::with_capacity(g.layers.len());
        let mut seen = std::collections::BTreeSet::new();

        for (li, layer) in g.layers.iter().enumerate() {
            let name = layer.name.clone();
            if name == INPUT_TENSOR || !seen.insert(name.clone()) {
                return Err(contract(format!("duplicate or reserved layer name {name}")));
            }
            if lw.tensors[cur].dtype == DType::F32 && act == DType::I8 {
                return Err(contract(format!("{name}: layer follows softmax")));
            }
            cur = match &layer.kind {
                LayerKind::Conv {
                    out_channels,
                    kernel,
                    stride,
                    padding,
                    activation,
                } => lw.conv(
                    cur,
                    name.clone(),
                    name,
                    *out_channels,
                    *kernel,
                    *stride,
                    *padding,
                    *activation,
                    li,
                )?,
                LayerKind::DepthwiseConv {
                    kernel,
                    stride,
                    padding,
                    activation,
                } => lw.depthwise(
                    cur,
                    name.clone(),
                    name,
                    *kernel,
                    *stride,
                    *padding,
                    *activation,
                    li,
                )?,
                LayerKind::InvertedResidual {
                    expansion,
                    stride,
                    out_channels,
                    residual,
                } => {
                    let in_c = lw.shape(cur).nhwc()?[3];
                    if *expansion == 0 {
                        return Err(contract(format!("{name}: expansion must be positive")));
                    }
                    if *residual && !(*stride == 1 && in_c == *out_channels) {
                        return Err(contract(format!(
                            "{name}: residual requires stride 1 and matching channels ({in_c} -> {out_channels})"
                        )));
                    }
                    let block_in = cur;
                    let mut x = cur;
                    if *expansion != 1 {
                        let n = format!("{name}/expand");
                        x = lw.conv(
                            x,
                            n.clone(),
                            n,
                            in_c * expansion,
                            1,
                            1,
                            Padding::Same,
                            Activation::Relu6,
                            li,
                        )?;
                    }
                    let n = format!("{name}/depthwise");
                    x = lw.depthwise(
                        x,
                        n.clone(),
                        n,
                        3,
                        *stride,
                        Padding::Same,
                        Activation::Relu6,
                        li,
                    )?;
                    let proj = format!("{name}/project");
                    if *residual {
                        x = lw.conv(
                            x,
                            proj.clone(),
                            proj,
                            *out_channels,
                            1,
                            1,
                            Padding::Same,
                            Activation::None,
                            li,
                        )?;
                        let shape = lw.shape(x).clone();
                        lw.op(OpKind::Add, vec![block_in, x], name, shape, li)
                    } else {
                        lw.conv(
                            x,
                            name,
                            proj,
                            *out_channels,
                            1,
                            1,
                            Padding::Same,
                            Activation::None,
                            li,
                        )?
                    }
                }
                LayerKind::GlobalAvgPool => {
                    let [n, _, _, c] = lw.shape(cur).nhwc()?;
                    let shape = Shape::new(vec![n, 1, 1, c])?;
                    lw.op(OpKind::AvgPool, vec![cur], name, shape, li)
                }
                LayerKind::Dense { units, activation } => {
                    let n = lw.shape(cur).dims()[0];
                    let shape = Shape::new(vec![n, *units])?;
                    let kind = OpKind::Dense {
                        param: name.clone(),
                        activation: *activation,
                    };
                    lw.op(kind, vec![cur], name, shape, li)
                }
                LayerKind::Dropout { rate } => {
                    if !(0.0..1.0).contains(rate) {
                        return Err(contract(format!(
                            "{name}: dropout rate {rate} outside [0, 1)"
                        )));
                    }
                    let prev_dense =
                        li > 0 && matches!(g.layers[li - 1].kind, LayerKind::Dense { .. });
                    let next_dense = matches!(
                        g.layers.get(li + 1).map(|l| &l.kind),
                        Some(LayerKind::Dense { .. })
                    );
                    if !(prev_dense && next_dense) {
                        return Err(contract(format!(
                            "{name}: dropout must sit between dense layers"
                        )));
                    }
                    cur
                }
                LayerKind::Softmax => {
                    if li + 1 != g.layers.len() {
                        return Err(contract(format!("{name}: softmax must be the last layer")));
                    }
                    let shape = lw.shape(cur).clone();
                    lw.op(OpKind::Softmax, vec![cur], name, shape, li)
                }
            };
            layer_outputs.push(cur);
        }
        if lw.ops.is_empty() {
            return Err(contract("graph has no ops"));
        }
        Ok(Self {
            tensors: lw.tensors,
            ops: lw.ops,
            layer_outputs,
        })
    }

    /// Index of the final output tensor.
    pub fn output(&self) -> usize {
        self.ops.last().expect("non-empty program").output
    }

    pub fn tensor_index(&self, name: &str) -> Option<usize> {
        self.tensors.iter().position(|t| t.name == name)
    }

    /// Expected `(weight, bias)` shapes for a weighted op.
    pub fn weight_shapes(&self, op: &Op) -> Option<(Vec<usize>, usize)> {
        let input = &self.tensors[op.inputs[0]].shape;
        let output = &self.tensors[op.output].shape;
        let in_c = *input.dims().last()?;
        let out_c = *output.dims().last()?;
        match &op.kind {
            OpKind::Conv { kernel: k, .. } => Some((vec![*k, *k, in_c, out_c], out_c)),
            OpKind::Depthwise { kernel: k, .. } => Some((vec![*k, *k, 1, in_c], in_c)),
            OpKind::Dense { .. } => {
                let fin = input.numel() / input.dims()[0];
                Some((vec![fin, out_c], out_c))
            }
            _ => None,
        }
    }

    pub(crate) fn check_weights(&self, g: &ModelGraph) -> Result<()> {
        for op in &self.ops {
            let Some(param) = op.kind.param() else {
                continue;
            };
            let w = g.weight(&format!("{param}.weight"))?;
            let b = g.weight(&format!("{param}.bias"))?;
            let (want_w, want_b) = self
                .weight_shapes(op)
                .ok_or_else(|| contract(format!("{param}: cannot resolve weight shape")))?;
            if w.shape.dims() != want_w.as_slice() || b.shape.dims() != [want_b] {
                return Err(contract(format!(
                    "{param}: weight {:?}/bias {:?} do not match expected {want_w:?}/[{want_b}]",
                    w.shape, b.shape
                )));
            }
            let (wd, bd) = match g.mode {
                NumericMode::Float32 => (DType::F32, DType::F32),
                NumericMode::Int8 => (DType::I8, DType::I32),
            };
            if w.data.dtype() != wd || b.data.dtype() != bd {
                return Err(contract(format!(
                    "{param}: weight dtypes do not match {} mode",
                    g.mode
                )));
            }
            if wd == DType::I8 && w.params.is_none() {
                return Err(contract(format!(
                    "{param}: int8 weight without quantization parameters"
                )));
            }
        }
        Ok(())
    }
}
