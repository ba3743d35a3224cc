//! Arena planner fuzzing over random graphs plus the hand-planned examples.

use cashew_core::graph::{
    plan_buffers, ArenaPlan, BufferRequest, GraphBuilder, LayerKind, ModelGraph, NumericMode,
    OpKind, Program,
};
use cashew_core::kernels::{Activation, Padding};
use cashew_core::Shape;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Check;

/// A random chain of convolutions, depthwise convolutions and inverted
/// residual blocks, optionally topped by a pooled dense head.
pub fn random_graph(seed: u64) -> ModelGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = (rng.random_range(2..24), rng.random_range(2..24));
    let mut channels = rng.random_range(1..9);
    let mut b = GraphBuilder::new(Shape::new(vec![1, h, w, channels]).unwrap());
    let act = |rng: &mut ChaCha8Rng| {
        if rng.random_bool(0.5) {
            Activation::Relu6
        } else {
            Activation::None
        }
    };
    for i in 0..rng.random_range(1..9) {
        let name = format!("l{i}");
        let stride = rng.random_range(1..=2);
        b = match rng.random_range(0..3) {
            0 => {
                channels = rng.random_range(1..24);
                b.layer(
                    name,
                    LayerKind::Conv {
                        out_channels: channels,
                        kernel: [1, 3][rng.random_range(0..2)],
                        stride,
                        padding: Padding::Same,
                        activation: act(&mut rng),
                    },
                )
            }
            1 => b.layer(
                name,
                LayerKind::DepthwiseConv {
                    kernel: 3,
                    stride,
                    padding: Padding::Same,
                    activation: act(&mut rng),
                },
            ),
            _ => {
                let residual = stride == 1 && rng.random_bool(0.7);
                if !residual {
                    channels = rng.random_range(1..24);
                }
                b.layer(
                    name,
                    LayerKind::InvertedResidual {
                        expansion: rng.random_range(1..7),
                        stride,
                        out_channels: channels,
                        residual,
                    },
                )
            }
        };
    }
    if rng.random_bool(0.7) {
        b = b.layer("pool", LayerKind::GlobalAvgPool).layer(
            "hidden",
            LayerKind::Dense {
                units: rng.random_range(1..20),
                activation: Activation::Relu6,
            },
        );
        if rng.random_bool(0.5) {
            b = b.layer("drop", LayerKind::Dropout { rate: 0.1 });
        }
        b = b.layer(
            "logits",
            LayerKind::Dense {
                units: rng.random_range(2..5),
                activation: Activation::None,
            },
        );
        if rng.random_bool(0.5) {
            b = b.layer("probs", LayerKind::Softmax);
        }
    }
    b.build(seed).unwrap()
}

/// Live interval of every tensor: from its producing step (0 for the
/// graph input) through the last step that reads it.
pub fn live_intervals(p: &Program) -> Vec<(usize, usize)> {
    let mut iv: Vec<Option<(usize, usize)>> = vec![None; p.tensors.len()];
    iv[0] = Some((0, 0));
    for (step, op) in p.ops.iter().enumerate() {
        for &t in &op.inputs {
            let (first, _) = iv[t].expect("read before written");
            iv[t] = Some((first, step));
        }
        iv[op.output] = Some((step, step));
    }
    iv.into_iter()
        .map(|v| v.expect("every tensor produced"))
        .collect()
}

/// At every step, every pair of live tensors occupies disjoint arena
/// bytes, and the arena is at least the peak live total.
pub fn check_plan(p: &Program, plan: &ArenaPlan) -> Check {
    let iv = live_intervals(p);
    if plan.buffers.len() != p.tensors.len() {
        return Err(format!(
            "{} buffers for {} tensors",
            plan.buffers.len(),
            p.tensors.len()
        ));
    }
    for (b, t) in plan.buffers.iter().zip(&p.tensors) {
        if b.len != t.bytes() || b.offset + b.len > plan.total_bytes {
            return Err(format!(
                "{}: [{}, +{}) in an arena of {}",
                t.name, b.offset, b.len, plan.total_bytes
            ));
        }
    }
    let mut peak = 0;
    for step in 0..p.ops.len() {
        let live: Vec<usize> = (0..iv.len())
            .filter(|&t| iv[t].0 <= step && step <= iv[t].1)
            .collect();
        peak = peak.max(live.iter().map(|&t| p.tensors[t].bytes()).sum::<usize>());
        for (i, &a) in live.iter().enumerate() {
            for &b in &live[i + 1..] {
                let (ra, rb) = (plan.buffers[a].range(), plan.buffers[b].range());
                if ra.start < rb.end && rb.start < ra.end {
                    return Err(format!(
                        "step {step}: {} {ra:?} overlaps {} {rb:?}",
                        p.tensors[a].name, p.tensors[b].name
                    ));
                }
            }
        }
        let op = &p.ops[step];
        if op.inputs.contains(&op.output) {
            return Err(format!("step {step} writes one of its own inputs"));
        }
    }
    if plan.total_bytes < peak {
        return Err(format!(
            "arena {} below peak live bytes {peak}",
            plan.total_bytes
        ));
    }
    Ok(())
}

/// Size of the largest tensor that outlives its consumer step, i.e. a skip
/// input of an add; zero for graphs without residuals.
pub fn largest_skip(p: &Program) -> usize {
    p.ops
        .iter()
        .enumerate()
        .filter(|(_, op)| op.kind == OpKind::Add)
        .flat_map(|(step, op)| {
            op.inputs
                .iter()
                .filter(move |&&t| step == 0 || p.ops[step - 1].output != t)
        })
        .map(|&t| p.tensors[t].bytes())
        .max()
        .unwrap_or(0)
}

/// Plans `count` random graphs in both numeric modes.
pub fn fuzz(count: u64) -> Result<usize, String> {
    let mut plans = 0;
    for seed in 0..count {
        let mut g = random_graph(seed);
        for mode in [NumericMode::Float32, NumericMode::Int8] {
            g.mode = mode;
            let p = g.program().map_err(|e| format!("seed {seed}: {e}"))?;
            let plan = ArenaPlan::from_program(&p);
            check_plan(&p, &plan).map_err(|e| format!("seed {seed} {mode}: {e}"))?;
            plans += 1;
        }
    }
    Ok(plans)
}

fn req(size: usize, first_step: usize, last_step: usize) -> BufferRequest {
    BufferRequest {
        size,
        first_step,
        last_step,
    }
}

/// Hand liveness analysis of the three small graphs, as (name, requests,
/// expected arena bytes).
pub fn worked_examples() -> Vec<(&'static str, Vec<BufferRequest>, usize)> {
    vec![
        // step 0 holds 100 + 200, step 1 holds 200 + 50
        (
            "chain 100->200->50",
            vec![req(100, 0, 0), req(200, 0, 1), req(50, 1, 1)],
            300,
        ),
        (
            "single layer 10->10",
            vec![req(10, 0, 0), req(10, 0, 0)],
            20,
        ),
        // expand reads the input (step 0); project and add run at step 1
        // with the skip input, the 300-byte expansion and the output live
        (
            "residual 100/300/100",
            vec![req(100, 0, 1), req(300, 0, 1), req(100, 1, 1)],
            500,
        ),
    ]
}

pub fn check_worked_examples() -> Check {
    for (name, reqs, want) in worked_examples() {
        let (offsets, total) = plan_buffers(&reqs);
        if total != want {
            return Err(format!("{name}: arena {total}, hand plan {want}"));
        }
        for i in 0..reqs.len() {
            for j in i + 1..reqs.len() {
                let (a, b) = (&reqs[i], &reqs[j]);
                let live = a.first_step <= b.last_step && b.first_step <= a.last_step;
                let apart = offsets[i] + a.size <= offsets[j] || offsets[j] + b.size <= offsets[i];
                if live && !apart {
                    return Err(format!("{name}: buffers {i} and {j} overlap"));
                }
            }
        }
    }
    Ok(())
}
