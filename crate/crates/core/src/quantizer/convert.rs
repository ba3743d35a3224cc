use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::fixed_point::to_fixed_point;
use crate::graph::{ModelGraph, NumericMode, OpKind, QuantTable, Weight};
use crate::quant::{compute_quant_params, quantize, QuantMode, QuantParams};
use crate::scalar::round_half_away;
use crate::tensor::Tensor;

use super::CalibrationStats;

fn conversion(msg: impl Into<String>) -> Error {
    Error::Conversion(msg.into())
}

/// Converts a float graph to int8.
///
/// Weights are quantized symmetric per tensor, activations asymmetric from
/// the calibrated ranges, biases become int32 at `in_scale * w_scale`, and
/// every requantization multiplier is computed up front. Pooling keeps its
/// input's parameters; softmax stays in float.
pub fn quantize_model(g: &ModelGraph, stats: &CalibrationStats) -> Result<ModelGraph> {
    if g.mode != NumericMode::Float32 {
        return Err(conversion("quantize_model needs a float32 graph"));
    }
    let program = g.validate()?;

    let mut activations: BTreeMap<String, QuantParams> = BTreeMap::new();
    let mut param_of = vec![None; program.tensors.len()];
    let range_params = |name: &str| -> Result<QuantParams> {
        let r = stats
            .get(name)
            .ok_or_else(|| conversion(format!("missing calibration stats for tensor {name}")))?;
        compute_quant_params(r.min as f64, r.max as f64, QuantMode::Asymmetric)
    };
    param_of[0] = Some(range_params(&program.tensors[0].name)?);
    for op in &program.ops {
        let p = match op.kind {
            OpKind::Softmax => None,
            OpKind::AvgPool => param_of[op.inputs[0]],
            _ => Some(range_params(&program.tensors[op.output].name)?),
        };
        param_of[op.output] = p;
    }
    for (info, p) in program.tensors.iter().zip(&param_of) {
        if let Some(p) = p {
            activations.insert(info.name.clone(), *p);
        }
    }

    let mut weights = BTreeMap::new();
    let mut multipliers = BTreeMap::new();
    for op in &program.ops {
        let out_name = &program.tensors[op.output].name;
        let Some(param) = op.kind.param() else {
            if op.kind == OpKind::Add {
                let po = param_of[op.output].expect("add output quantized");
                let so = po.scale() as f64;
                let ms = op
                    .inputs
                    .iter()
                    .map(|&i| {
                        to_fixed_point(
                            param_of[i].expect("add input quantized").scale() as f64 / so,
                        )
                    })
                    .collect::<Result<Vec<_>>>()?;
                multipliers.insert(out_name.clone(), ms);
            }
            continue;
        };
        let w_name = format!("{param}.weight");
        let b_name = format!("{param}.bias");
        let w = g.weight(&w_name)?;
        let w_vals = w.as_f32()?;
        let (lo, hi) = w_vals
            .iter()
            .fold((0.0f32, 0.0f32), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        let wp = compute_quant_params(lo as f64, hi as f64, QuantMode::Symmetric)?;
        let wq = quantize(&Tensor::new(w.shape.clone(), w_vals.to_vec())?, wp)?;
        let (wshape, wdata, _) = wq.into_parts();
        weights.insert(w_name, Weight::i8(wshape, wdata, wp)?);

        let in_p = param_of[op.inputs[0]].expect("weighted op input quantized");
        let out_p = param_of[op.output].expect("weighted op output quantized");
        let acc_scale = in_p.scale() as f64 * wp.scale() as f64;
        let b = g.weight(&b_name)?;
        let bias: Vec<i32> = b
            .as_f32()?
            .iter()
            .map(|&v| {
                round_half_away(v as f64 / acc_scale).clamp(i32::MIN as f64, i32::MAX as f64) as i32
            })
            .collect();
        weights.insert(b_name, Weight::i32(b.shape.clone(), bias)?);
        multipliers.insert(
            out_name.clone(),
            vec![to_fixed_point(acc_scale / out_p.scale() as f64)?],
        );
    }

    let mut meta = g.meta.clone();
    meta.insert("calibration_images".into(), stats.image_count.to_string());
    let q = ModelGraph {
        input_shape: g.input_shape.clone(),
        layers: g.layers.clone(),
        weights,
        mode: NumericMode::Int8,
        quant: Some(QuantTable {
            activations,
            multipliers,
        }),
        meta,
    };
    q.validate()?;
    Ok(q)
}
