use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::{Executor, ModelGraph, NumericMode};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TensorRange {
    pub min: f32,
    pub max: f32,
}

impl TensorRange {
    fn of(values: &[f32]) -> Self {
        values.iter().fold(
            TensorRange {
                min: f32::INFINITY,
                max: f32::NEG_INFINITY,
            },
            |r, &v| TensorRange {
                min: r.min.min(v),
                max: r.max.max(v),
            },
        )
    }

    fn union(self, other: TensorRange) -> Self {
        TensorRange {
            min: self.min.min(other.min),
            max: self.max.max(other.max),
        }
    }
}

/// Running extrema of every float activation tensor over a calibration set.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CalibrationStats {
    pub ranges: BTreeMap<String, TensorRange>,
    pub image_count: usize,
}

impl CalibrationStats {
    /// Folds another set of statistics into this one. Order does not matter.
    pub fn merge(mut self, other: CalibrationStats) -> Self {
        for (name, r) in other.ranges {
            self.ranges
                .entry(name)
                .and_modify(|cur| *cur = cur.union(r))
                .or_insert(r);
        }
        self.image_count += other.image_count;
        self
    }

    pub fn get(&self, tensor: &str) -> Option<TensorRange> {
        self.ranges.get(tensor).copied()
    }

    /// `tensor<TAB>min<TAB>max` per line, after a `# images=N` header.
    pub fn to_tsv(&self) -> String {
        let mut s = format!("# images={}\n", self.image_count);
        for (name, r) in &self.ranges {
            writeln!(s, "{name}\t{}\t{}", r.min, r.max).expect("string write");
        }
        s
    }

    pub fn from_tsv(text: &str, origin: &Path) -> Result<Self> {
        let err = |line: usize, reason: String| Error::Parse {
            path: origin.to_path_buf(),
            line,
            reason,
        };
        let mut stats = CalibrationStats::default();
        for (i, line) in text.lines().enumerate() {
            let n = i + 1;
            if let Some(rest) = line.strip_prefix("# images=") {
                stats.image_count = rest.trim().parse().map_err(|e| err(n, format!("{e}")))?;
                continue;
            }
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let [name, min, max] = fields[..] else {
                return Err(err(
                    n,
                    format!("expected 3 tab-separated fields, got {}", fields.len()),
                ));
            };
            let min: f32 = min.parse().map_err(|e| err(n, format!("min: {e}")))?;
            let max: f32 = max.parse().map_err(|e| err(n, format!("max: {e}")))?;
            if min.is_nan() || max.is_nan() || min > max {
                return Err(err(n, format!("invalid range [{min}, {max}]")));
            }
            stats
                .ranges
                .insert(name.to_string(), TensorRange { min, max });
        }
        if stats.image_count == 0 {
            return Err(err(1, "missing or zero image count".into()));
        }
        Ok(stats)
    }
}

/// Runs the float graph over `images`, recording per-tensor min/max.
pub fn calibrate(g: &ModelGraph, images: &[Tensor<f32>]) -> Result<CalibrationStats> {
    if g.mode != NumericMode::Float32 {
        return Err(Error::Calibration(
            "calibration needs a float32 graph".into(),
        ));
    }
    if images.is_empty() {
        return Err(Error::Calibration("empty calibration dataset".into()));
    }
    // validates the graph once so per-thread construction cannot fail
    Executor::new(g)?;
    images
        .par_iter()
        .map_init(
            || Executor::new(g).expect("graph validated"),
            |ex, img| -> Result<CalibrationStats> {
                let (_, traced) = ex.run_traced(img)?;
                let ranges = traced
                    .iter()
                    .filter(|t| matches!(t.value, crate::graph::Activations::F32(_)))
                    .map(|t| (t.name.clone(), TensorRange::of(&t.value.to_f32())))
                    .collect();
                Ok(CalibrationStats {
                    ranges,
                    image_count: 1,
                })
            },
        )
        .try_reduce(CalibrationStats::default, |a, b| Ok(a.merge(b)))
}
