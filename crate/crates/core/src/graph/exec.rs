//! Graph execution inside a single planned arena.

use std::ops::Range;

use crate::error::{contract, Result};
use crate::kernels::{
    add_into, add_q_into, conv2d_into, conv2d_q_into, depthwise_conv2d_into,
    depthwise_conv2d_q_into, fully_connected_into, fully_connected_q_into, global_avg_pool_into,
    global_avg_pool_q_into, softmax_in_place, Activation, AddStage, ConvGeometry, OutputStage,
    PackedConv, PackedDepthwise,
};
use crate::quant::{quantize_slice, same_params, QuantParams};
use crate::tensor::{DType, QTensor, Tensor};

use super::{ArenaPlan, ModelGraph, NumericMode, OpKind, Program, INPUT_TENSOR};

/// Value of one activation tensor captured during a traced run.
#[derive(Clone, Debug, PartialEq)]
pub enum Activations {
    F32(Tensor<f32>),
    I8(QTensor),
}

impl Activations {
    /// Real-valued view (dequantized for int8).
    pub fn to_f32(&self) -> Vec<f32> {
        match self {
            Activations::F32(t) => t.data().to_vec(),
            Activations::I8(q) => {
                let p = q.params();
                q.data()
                    .iter()
                    .map(|&v| p.dequantize_value(v) as f32)
                    .collect()
            }
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Activations::F32(t) => t.data().len(),
            Activations::I8(q) => q.data().len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TracedTensor {
    pub name: String,
    pub value: Activations,
}

enum Compiled<'g> {
    ConvF {
        w: &'g [f32],
        b: &'g [f32],
        geom: ConvGeometry,
        out_c: usize,
        act: Activation,
    },
    ConvQ {
        w: PackedConv,
        b: &'g [i32],
        in_zp: i32,
        geom: ConvGeometry,
        stage: OutputStage,
    },
    DwF {
        w: &'g [f32],
        b: &'g [f32],
        geom: ConvGeometry,
        act: Activation,
    },
    DwQ {
        w: PackedDepthwise,
        b: &'g [i32],
        in_zp: i32,
        geom: ConvGeometry,
        stage: OutputStage,
    },
    DenseF {
        w: &'g [f32],
        b: &'g [f32],
        fin: usize,
        fout: usize,
        act: Activation,
    },
    DenseQ {
        w: PackedConv,
        b: &'g [i32],
        in_zp: i32,
        stage: OutputStage,
    },
    AddF,
    AddQ(AddStage),
    PoolF([usize; 4]),
    PoolQ([usize; 4]),
    SoftmaxF,
    SoftmaxQ(QuantParams),
}

/// Runs one graph over single images. Owns its arena; create one per thread.
pub struct Executor<'g> {
    graph: &'g ModelGraph,
    program: Program,
    plan: ArenaPlan,
    arena: Vec<u64>,
    compiled: Vec<Compiled<'g>>,
    input_params: Option<QuantParams>,
}

impl<'g> Executor<'g> {
    pub fn new(graph: &'g ModelGraph) -> Result<Self> {
        let program = graph.validate()?;
        let plan = ArenaPlan::from_program(&program);
        plan.validate()?;
        let compiled = program
            .ops
            .iter()
            .map(|op| compile(graph, &program, op))
            .collect::<Result<Vec<_>>>()?;
        let input_params = match graph.mode {
            NumericMode::Float32 => None,
            NumericMode::Int8 => Some(graph.activation_params(INPUT_TENSOR)?),
        };
        let arena = vec![0u64; plan.total_bytes.div_ceil(8)];
        Ok(Self {
            graph,
            program,
            plan,
            arena,
            compiled,
            input_params,
        })
    }

    pub fn graph(&self) -> &ModelGraph {
        self.graph
    }

    pub fn program(&self) -> &Program {
        &self.program
    }

    pub fn plan(&self) -> &ArenaPlan {
        &self.plan
    }

    /// Runs the whole graph and returns the final output as reals
    /// (class probabilities for graphs ending in softmax).
    pub fn run(&mut self, input: &Tensor<f32>) -> Result<Vec<f32>> {
        self.forward(input, None, &mut |_, _| {})?;
        let out = self.program.output();
        Ok(self.read(out))
    }

    /// Runs the graph and captures every activation tensor, input first,
    /// then each op output in execution order.
    pub fn run_traced(&mut self, input: &Tensor<f32>) -> Result<(Vec<f32>, Vec<TracedTensor>)> {
        let mut captured = Vec::with_capacity(self.program.tensors.len());
        let infos = self.program.tensors.clone();
        let quant = self.graph.quant.clone();
        self.forward(input, None, &mut |idx, bytes| {
            let info = &infos[idx];
            let value = match info.dtype {
                DType::I8 => {
                    let p = quant
                        .as_ref()
                        .and_then(|q| q.activations.get(&info.name).copied())
                        .expect("validated int8 graph");
                    let data = bytemuck::cast_slice::<u8, i8>(bytes).to_vec();
                    Activations::I8(
                        QTensor::new(info.shape.clone(), data, p).expect("planned size"),
                    )
                }
                _ => {
                    let data = bytemuck::cast_slice::<u8, f32>(bytes).to_vec();
                    Activations::F32(Tensor::new(info.shape.clone(), data).expect("planned size"))
                }
            };
            captured.push(TracedTensor {
                name: info.name.clone(),
                value,
            });
        })?;
        let out = self.program.output();
        Ok((self.read(out), captured))
    }

    /// One activation per layer, in layer order (dropout repeats its input).
    pub fn layer_activations(&mut self, input: &Tensor<f32>) -> Result<Vec<Activations>> {
        let (_, traced) = self.run_traced(input)?;
        let index: std::collections::BTreeMap<&str, &Activations> =
            traced.iter().map(|t| (t.name.as_str(), &t.value)).collect();
        Ok(self
            .program
            .layer_outputs
            .iter()
            .map(|&t| index[self.program.tensors[t].name.as_str()].clone())
            .collect())
    }

    fn pool_step(&self) -> Result<usize> {
        self.program
            .ops
            .iter()
            .rposition(|op| op.kind == OpKind::AvgPool)
            .ok_or_else(|| contract("graph has no global average pool"))
    }

    /// Length of the vector returned by `features`.
    pub fn feature_dim(&self) -> Result<usize> {
        let op = &self.program.ops[self.pool_step()?];
        Ok(self.program.tensors[op.output].shape.numel())
    }

    /// Global-average-pool output (the penultimate representation), as reals.
    pub fn features(&mut self, input: &Tensor<f32>) -> Result<Vec<f32>> {
        let pool = self.pool_step()?;
        self.forward(input, Some(pool), &mut |_, _| {})?;
        let t = self.program.ops[pool].output;
        Ok(self.read(t))
    }

    fn read(&self, tensor: usize) -> Vec<f32> {
        let bytes = bytemuck::cast_slice::<u64, u8>(&self.arena);
        let buf = &bytes[self.plan.buffers[tensor].range()];
        match self.program.tensors[tensor].dtype {
            DType::I8 => {
                let p = self
                    .graph
                    .activation_params(&self.program.tensors[tensor].name)
                    .expect("validated int8 graph");
                bytemuck::cast_slice::<u8, i8>(buf)
                    .iter()
                    .map(|&q| p.dequantize_value(q) as f32)
                    .collect()
            }
            _ => bytemuck::cast_slice::<u8, f32>(buf).to_vec(),
        }
    }

    fn forward(
        &mut self,
        input: &Tensor<f32>,
        stop_after: Option<usize>,
        observe: &mut dyn FnMut(usize, &[u8]),
    ) -> Result<()> {
        if input.shape() != &self.graph.input_shape {
            return Err(contract(format!(
                "input shape {} does not match graph input {}",
                input.shape(),
                self.graph.input_shape
            )));
        }
        let Self {
            program,
            plan,
            arena,
            compiled,
            input_params,
            ..
        } = self;
        let bytes = bytemuck::cast_slice_mut::<u64, u8>(arena);

        let in_buf = &mut bytes[plan.buffers[0].range()];
        match input_params {
            None => bytemuck::cast_slice_mut::<u8, f32>(in_buf).copy_from_slice(input.data()),
            Some(p) => {
                quantize_slice(input.data(), *p, bytemuck::cast_slice_mut::<u8, i8>(in_buf))?
            }
        }
        observe(0, &bytes[plan.buffers[0].range()]);

        for (step, (op, kernel)) in program.ops.iter().zip(compiled.iter()).enumerate() {
            let reads: Vec<Range<usize>> =
                op.inputs.iter().map(|&i| plan.buffers[i].range()).collect();
            let (ins, out) = split_buffers(bytes, &reads, plan.buffers[op.output].range());
            run_op(kernel, &ins, out)?;
            observe(op.output, &bytes[plan.buffers[op.output].range()]);
            if stop_after == Some(step) {
                break;
            }
        }
        Ok(())
    }
}

/// Executes a graph once on `input`.
pub fn execute(g: &ModelGraph, input: &Tensor<f32>) -> Result<Vec<f32>> {
    Executor::new(g)?.run(input)
}

fn f32s(b: &[u8]) -> &[f32] {
    bytemuck::cast_slice(b)
}

fn i8s(b: &[u8]) -> &[i8] {
    bytemuck::cast_slice(b)
}

fn run_op(kernel: &Compiled<'_>, ins: &[&[u8]], out: &mut [u8]) -> Result<()> {
    match kernel {
        Compiled::ConvF {
            w,
            b,
            geom,
            out_c,
            act,
        } => conv2d_into(
            f32s(ins[0]),
            geom,
            w,
            *out_c,
            b,
            *act,
            bytemuck::cast_slice_mut(out),
        ),
        Compiled::ConvQ {
            w,
            b,
            in_zp,
            geom,
            stage,
        } => conv2d_q_into(
            i8s(ins[0]),
            *in_zp,
            geom,
            w,
            b,
            stage,
            bytemuck::cast_slice_mut(out),
        ),
        Compiled::DwF { w, b, geom, act } => depthwise_conv2d_into(
            f32s(ins[0]),
            geom,
            w,
            b,
            *act,
            bytemuck::cast_slice_mut(out),
        ),
        Compiled::DwQ {
            w,
            b,
            in_zp,
            geom,
            stage,
        } => depthwise_conv2d_q_into(
            i8s(ins[0]),
            *in_zp,
            geom,
            w,
            b,
            stage,
            bytemuck::cast_slice_mut(out),
        ),
        Compiled::DenseF {
            w,
            b,
            fin,
            fout,
            act,
        } => fully_connected_into(
            f32s(ins[0]),
            1,
            *fin,
            w,
            *fout,
            b,
            *act,
            bytemuck::cast_slice_mut(out),
        ),
        Compiled::DenseQ { w, b, in_zp, stage } => fully_connected_q_into(
            i8s(ins[0]),
            *in_zp,
            1,
            w,
            b,
            stage,
            bytemuck::cast_slice_mut(out),
        ),
        Compiled::AddF => add_into(f32s(ins[0]), f32s(ins[1]), bytemuck::cast_slice_mut(out)),
        Compiled::AddQ(stage) => add_q_into(
            i8s(ins[0]),
            i8s(ins[1]),
            stage,
            bytemuck::cast_slice_mut(out),
        ),
        Compiled::PoolF(dims) => {
            global_avg_pool_into(f32s(ins[0]), *dims, bytemuck::cast_slice_mut(out))
        }
        Compiled::PoolQ(dims) => {
            global_avg_pool_q_into(i8s(ins[0]), *dims, bytemuck::cast_slice_mut(out))
        }
        Compiled::SoftmaxF => {
            let out: &mut [f32] = bytemuck::cast_slice_mut(out);
            out.copy_from_slice(f32s(ins[0]));
            softmax_in_place(out)?;
        }
        Compiled::SoftmaxQ(p) => {
            let out: &mut [f32] = bytemuck::cast_slice_mut(out);
            for (o, &q) in out.iter_mut().zip(i8s(ins[0])) {
                *o = p.dequantize_value(q) as f32;
            }
            softmax_in_place(out)?;
        }
    }
    Ok(())
}

/// Borrows the read ranges immutably and the write range mutably from one arena.
fn split_buffers<'a>(
    arena: &'a mut [u8],
    reads: &[Range<usize>],
    write: Range<usize>,
) -> (Vec<&'a [u8]>, &'a mut [u8]) {
    let mut items: Vec<(Range<usize>, usize)> = reads.iter().cloned().zip(0..).collect();
    items.push((write, reads.len()));
    items.sort_by_key(|(r, _)| r.start);

    let mut slots: Vec<Option<&'a mut [u8]>> = (0..items.len()).map(|_| None).collect();
    let mut rest = arena;
    let mut base = 0;
    for (r, slot) in items {
        assert!(
            r.start >= base,
            "arena plan placed live buffers on top of each other"
        );
        let tail = std::mem::take(&mut rest).split_at_mut(r.start - base).1;
        let (mid, tail) = tail.split_at_mut(r.end - r.start);
        slots[slot] = Some(mid);
        rest = tail;
        base = r.end;
    }
    let out = slots.pop().flatten().expect("write slot");
    let ins = slots.into_iter().map(|s| &*s.expect("read slot")).collect();
    (ins, out)
}

fn compile<'g>(g: &'g ModelGraph, program: &Program, op: &super::Op) -> Result<Compiled<'g>> {
    let in_info = &program.tensors[op.inputs[0]];
    let out_info = &program.tensors[op.output];
    let int8 = g.mode == NumericMode::Int8;
    let weights = |param: &str| -> Result<(&'g super::Weight, &'g super::Weight)> {
        Ok((
            g.weight(&format!("{param}.weight"))?,
            g.weight(&format!("{param}.bias"))?,
        ))
    };
    let multipliers = |n: usize| -> Result<Vec<crate::fixed_point::FixedPointMultiplier>> {
        g.quant
            .as_ref()
            .and_then(|q| q.multipliers.get(&out_info.name))
            .filter(|m| m.len() == n)
            .cloned()
            .ok_or_else(|| {
                contract(format!(
                    "op {} is missing requantization multipliers",
                    out_info.name
                ))
            })
    };
    let act_params = |name: &str| g.activation_params(name);

    Ok(match &op.kind {
        OpKind::Conv {
            param,
            kernel,
            stride,
            padding,
            activation,
        }
        | OpKind::Depthwise {
            param,
            kernel,
            stride,
            padding,
            activation,
        } => {
            let (w, b) = weights(param)?;
            let geom =
                ConvGeometry::new(in_info.shape.nhwc()?, *kernel, *kernel, *stride, *padding)?;
            let out_c = out_info.shape.nhwc()?[3];
            let depthwise = matches!(op.kind, OpKind::Depthwise { .. });
            if int8 {
                let (wq, wp) = w.as_i8()?;
                let out_p = act_params(&out_info.name)?;
                let stage = OutputStage::with_multiplier(multipliers(1)?[0], out_p, *activation);
                let in_zp = act_params(&in_info.name)?.zero_point();
                let b = b.as_i32()?;
                let taps = geom.k_h * geom.k_w;
                if depthwise {
                    Compiled::DwQ {
                        w: PackedDepthwise::new(wq, wp.zero_point(), taps, geom.in_c),
                        b,
                        in_zp,
                        geom,
                        stage,
                    }
                } else {
                    Compiled::ConvQ {
                        w: PackedConv::new(wq, wp.zero_point(), taps, geom.in_c, out_c),
                        b,
                        in_zp,
                        geom,
                        stage,
                    }
                }
            } else if depthwise {
                Compiled::DwF {
                    w: w.as_f32()?,
                    b: b.as_f32()?,
                    geom,
                    act: *activation,
                }
            } else {
                Compiled::ConvF {
                    w: w.as_f32()?,
                    b: b.as_f32()?,
                    geom,
                    out_c,
                    act: *activation,
                }
            }
        }
        OpKind::Dense { param, activation } => {
            let (w, b) = weights(param)?;
            let fin = in_info.shape.numel();
            let fout = out_info.shape.numel();
            if int8 {
                let (wq, wp) = w.as_i8()?;
                let out_p = act_params(&out_info.name)?;
                Compiled::DenseQ {
                    w: PackedConv::new(wq, wp.zero_point(), 1, fin, fout),
                    b: b.as_i32()?,
                    in_zp: act_params(&in_info.name)?.zero_point(),
                    stage: OutputStage::with_multiplier(multipliers(1)?[0], out_p, *activation),
                }
            } else {
                Compiled::DenseF {
                    w: w.as_f32()?,
                    b: b.as_f32()?,
                    fin,
                    fout,
                    act: *activation,
                }
            }
        }
        OpKind::Add => {
            if int8 {
                let m = multipliers(2)?;
                let pa = act_params(&in_info.name)?;
                let pb = act_params(&program.tensors[op.inputs[1]].name)?;
                let po = act_params(&out_info.name)?;
                Compiled::AddQ(AddStage::with_multipliers(m[0], m[1], pa, pb, po))
            } else {
                Compiled::AddF
            }
        }
        OpKind::AvgPool => {
            let dims = in_info.shape.nhwc()?;
            if int8 {
                same_params(
                    act_params(&in_info.name)?,
                    act_params(&out_info.name)?,
                    &out_info.name,
                )?;
                Compiled::PoolQ(dims)
            } else {
                Compiled::PoolF(dims)
            }
        }
        OpKind::Softmax => {
            if int8 {
                Compiled::SoftmaxQ(act_params(&in_info.name)?)
            } else {
                Compiled::SoftmaxF
            }
        }
    })
}
