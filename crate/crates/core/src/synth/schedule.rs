//! Abstract per-stage scheduling decisions (split, reorder, vectorize,
//! parallelize, inline, unroll).

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ops::OpKind;
use super::{rng_for, SynthPipeline};
use crate::error::{Error, Result};

pub const VECTOR_WIDTHS: [u32; 5] = [0, 2, 4, 8, 16];
pub const UNROLL_FACTORS: [u32; 4] = [1, 2, 4, 8];

/// Loops of a stage are its output dimensions. `split_factors[d]` is the inner
/// extent of dimension `d`; the outer extent is `ceil(extent / factor)`.
/// `loop_order` lists dimensions outermost first; the inner (tile) loops
/// follow the same order, so the innermost loop is the inner loop of
/// `loop_order.last()`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StageSchedule {
    pub split_factors: Vec<u32>,
    pub loop_order: Vec<usize>,
    pub vectorize_width: u32,
    pub parallel: bool,
    pub inlined: bool,
    pub unroll_factor: u32,
}

impl StageSchedule {
    /// The unsplit, unvectorized, serial default for a shape.
    pub fn naive(shape: &[u32]) -> Self {
        Self {
            split_factors: shape.to_vec(),
            loop_order: (0..shape.len()).collect(),
            vectorize_width: 0,
            parallel: false,
            inlined: false,
            unroll_factor: 1,
        }
    }

    pub fn outer_extents(&self, shape: &[u32]) -> Vec<u32> {
        shape
            .iter()
            .zip(&self.split_factors)
            .map(|(&e, &f)| e.div_ceil(f))
            .collect()
    }

    pub fn innermost_dim(&self) -> usize {
        *self.loop_order.last().expect("rank >= 1")
    }

    pub fn outermost_dim(&self) -> usize {
        self.loop_order[0]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ScheduleDecision {
    pub stages: Vec<StageSchedule>,
}

impl ScheduleDecision {
    pub fn naive(pipeline: &SynthPipeline) -> Self {
        Self {
            stages: pipeline.node_shapes.iter().map(|s| StageSchedule::naive(s)).collect(),
        }
    }

    pub fn validate(&self, pipeline: &SynthPipeline) -> Result<()> {
        if self.stages.len() != pipeline.num_nodes() {
            return Err(Error::dim("schedule stages", pipeline.num_nodes(), self.stages.len()));
        }
        let out_degree = pipeline.graph.out_degrees();
        for (node, st) in self.stages.iter().enumerate() {
            let shape = &pipeline.node_shapes[node];
            let bad = |msg: &str| Err(Error::Invalid(format!("stage {node}: {msg}")));
            if st.split_factors.len() != shape.len() {
                return bad("split factor count differs from rank");
            }
            if st.split_factors.iter().zip(shape).any(|(&f, &e)| f == 0 || f > e) {
                return bad("split factor outside [1, extent]");
            }
            let mut order = st.loop_order.clone();
            order.sort_unstable();
            if order != (0..shape.len()).collect::<Vec<_>>() {
                return bad("loop order is not a permutation");
            }
            if !VECTOR_WIDTHS.contains(&st.vectorize_width) && st.vectorize_width != 1 {
                return bad("vectorize width must be 0 or a power of two <= 16");
            }
            if !UNROLL_FACTORS.contains(&st.unroll_factor) {
                return bad("unroll factor must be 1, 2, 4 or 8");
            }
            if st.inlined && (out_degree[node] != 1 || pipeline.node_ops[node] == OpKind::Input) {
                return bad("only non-input stages with exactly one consumer can be inlined");
            }
        }
        Ok(())
    }
}

fn sample_stage(rng: &mut ChaCha8Rng, op: OpKind, shape: &[u32], can_inline: bool) -> StageSchedule {
    if op == OpKind::Input {
        return StageSchedule::naive(shape);
    }
    let split_factors = shape
        .iter()
        .map(|&e| {
            let mut options: Vec<u32> = (0..7).map(|k| 1u32 << k).filter(|&f| f < e).collect();
            options.push(e);
            *options.choose(rng).expect("non-empty")
        })
        .collect();
    let mut loop_order: Vec<usize> = (0..shape.len()).collect();
    loop_order.shuffle(rng);
    StageSchedule {
        split_factors,
        loop_order,
        vectorize_width: *VECTOR_WIDTHS.choose(rng).expect("non-empty"),
        parallel: rng.gen_bool(0.5),
        inlined: can_inline && rng.gen_bool(0.25),
        unroll_factor: *UNROLL_FACTORS.choose(rng).expect("non-empty"),
    }
}

/// `count` distinct, valid schedules for `pipeline`, reproducible from `seed`.
pub fn enumerate_schedules(pipeline: &SynthPipeline, count: usize, seed: u64) -> Result<Vec<ScheduleDecision>> {
    pipeline.validate()?;
    if count == 0 {
        return Err(Error::Invalid("schedule count must be >= 1".into()));
    }
    let out_degree = pipeline.graph.out_degrees();
    let mut rng = rng_for(seed, 1);
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(count);
    let budget = count.saturating_mul(100).max(1000);
    for _ in 0..budget {
        let decision = ScheduleDecision {
            stages: (0..pipeline.num_nodes())
                .map(|n| {
                    sample_stage(
                        &mut rng,
                        pipeline.node_ops[n],
                        &pipeline.node_shapes[n],
                        out_degree[n] == 1,
                    )
                })
                .collect(),
        };
        if seen.insert(decision.clone()) {
            out.push(decision);
            if out.len() == count {
                return Ok(out);
            }
        }
    }
    Err(Error::Invalid(format!(
        "could only find {} distinct schedules out of {count}",
        out.len()
    )))
}
