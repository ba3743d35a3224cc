//! Static activation-arena planning.
//!
//! Every activation tensor gets a live interval `[first_step, last_step]`
//! over the op sequence. Buffers are placed greedily, largest first, at the
//! lowest offset that does not collide with an already placed buffer whose
//! interval overlaps. The arena size is the resulting high-water mark.

use crate::error::{contract, Result};

use super::{ModelGraph, Program};

/// Placement alignment for graph buffers; keeps every f32 view aligned.
pub const ARENA_ALIGN: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BufferRequest {
    pub size: usize,
    pub first_step: usize,
    pub last_step: usize,
}

impl BufferRequest {
    pub fn overlaps(&self, other: &BufferRequest) -> bool {
        self.first_step <= other.last_step && other.first_step <= self.last_step
    }
}

/// Greedy first-fit placement in decreasing size order. Returns per-request
/// offsets and the arena size.
pub fn plan_buffers(requests: &[BufferRequest]) -> (Vec<usize>, usize) {
    let mut order: Vec<usize> = (0..requests.len()).collect();
    // stable: ties keep request order
    order.sort_by(|&a, &b| requests[b].size.cmp(&requests[a].size));

    let mut offsets = vec![0usize; requests.len()];
    let mut placed: Vec<usize> = Vec::with_capacity(requests.len());
    let mut total = 0;
    for &i in &order {
        let req = &requests[i];
        let mut conflicts: Vec<(usize, usize)> = placed
            .iter()
            .filter(|&&j| requests[j].overlaps(req))
            .map(|&j| (offsets[j], offsets[j] + requests[j].size))
            .collect();
        conflicts.sort_unstable();
        let mut candidate = 0;
        for (start, end) in conflicts {
            if candidate + req.size <= start {
                break;
            }
            candidate = candidate.max(end);
        }
        offsets[i] = candidate;
        total = total.max(candidate + req.size);
        placed.push(i);
    }
    (offsets, total)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BufferAlloc {
    pub tensor: String,
    pub offset: usize,
    /// Bytes actually used by the tensor.
    pub len: usize,
    /// Bytes reserved (len rounded up to the arena alignment).
    pub reserved: usize,
    pub first_step: usize,
    pub last_step: usize,
}

impl BufferAlloc {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len
    }

    fn live_at(&self, step: usize) -> bool {
        self.first_step <= step && step <= self.last_step
    }
}

/// One buffer per activation tensor (indexed like `Program::tensors`).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ArenaPlan {
    pub buffers: Vec<BufferAlloc>,
    pub total_bytes: usize,
    pub steps: usize,
}

impl ArenaPlan {
    pub fn from_program(program: &Program) -> Self {
        let n = program.tensors.len();
        let mut first = vec![0usize; n];
        let mut last = vec![0usize; n];
        for (step, op) in program.ops.iter().enumerate() {
            first[op.output] = step;
            last[op.output] = last[op.output].max(step);
            for &i in &op.inputs {
                last[i] = last[i].max(step);
            }
        }
        let requests: Vec<BufferRequest> = program
            .tensors
            .iter()
            .enumerate()
            .map(|(i, t)| BufferRequest {
                size: t.bytes().next_multiple_of(ARENA_ALIGN),
                first_step: first[i],
                last_step: last[i],
            })
            .collect();
        let (offsets, total_bytes) = plan_buffers(&requests);
        let buffers = program
            .tensors
            .iter()
            .zip(requests.iter().zip(offsets))
            .map(|(t, (r, offset))| BufferAlloc {
                tensor: t.name.clone(),
                offset,
                len: t.bytes(),
                reserved: r.size,
                first_step: r.first_step,
                last_step: r.last_step,
            })
            .collect();
        Self {
            buffers,
            total_bytes,
            steps: program.ops.len(),
        }
    }

    /// Largest sum of live buffer bytes over all steps; a lower bound on any plan.
    pub fn peak_live_bytes(&self) -> usize {
        (0..self.steps)
            .map(|s| {
                self.buffers
                    .iter()
                    .filter(|b| b.live_at(s))
                    .map(|b| b.len)
                    .sum()
            })
            .max()
            .unwrap_or(0)
    }

    /// Checks that no two buffers live at the same step share arena bytes.
    pub fn validate(&self) -> Result<()> {
        for (i, a) in self.buffers.iter().enumerate() {
            if a.offset + a.reserved > self.total_bytes {
                return Err(contract(format!("buffer {} exceeds the arena", a.tensor)));
            }
            for b in &self.buffers[i + 1..] {
                let live_together = a.first_step <= b.last_step && b.first_step <= a.last_step;
                let disjoint =
                    a.offset + a.reserved <= b.offset || b.offset + b.reserved <= a.offset;
                if live_together && !disjoint {
                    return Err(contract(format!(
                        "buffers {} and {} overlap while both live",
                        a.tensor, b.tensor
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Plans the activation arena of a graph; `total_bytes` is the peak-RAM estimate.
pub fn plan_arena(g: &ModelGraph) -> Result<ArenaPlan> {
    Ok(ArenaPlan::from_program(&g.program()?))
}
