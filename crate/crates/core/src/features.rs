//! Per-stage features and their normalization.
//!
//! Two families per stage. Invariant features (width 320) depend only on the
//! pipeline; dependent features (width 94) also depend on the schedule.
//! Slots past the last documented index are zero. Counts that feed compound
//! slots are stored raw; extents, bytes and footprints also get a
//! `log2(1 + x)` copy.
//!
//! Invariant layout:
//!
//! | slot    | meaning                                              |
//! |---------|------------------------------------------------------|
//! | 0..14   | op histogram, one slot per `OpKind` in declaration order |
//! | 14      | float ops (`elements * flop_weight`)                 |
//! | 15      | integer indexing ops (`elements * rank * (1 + producers)`) |
//! | 16      | boolean ops (`elements * bool_weight`)               |
//! | 17..20  | `log2(1 + x)` of slots 14, 15, 16                    |
//! | 20      | unit-stride operand reads                            |
//! | 21      | strided operand reads                                |
//! | 22      | transposed operand reads                             |
//! | 23      | broadcast operand reads                              |
//! | 24      | output rank                                          |
//! | 25..29  | `log2(1 + dim_d)`, d = 0..4, zero past the rank       |
//! | 29      | `log2(1 + elements)`                                 |
//! | 30      | producer count                                       |
//! | 31      | consumer count                                       |
//! | 32      | 1 if the stage is a pipeline output                  |
//! | 33      | sum over producers of `log2(1 + elements)`           |
//! | 34      | max over producers of `log2(1 + elements)`           |
//! | 35      | flop weight                                          |
//! | 36      | reuse factor when consuming an inlined producer      |
//! | 37      | `log2(1 + total producer elements)`                  |
//!
//! Dependent layout:
//!
//! | slot    | meaning                                              |
//! |---------|------------------------------------------------------|
//! | 0..4    | `log2(1 + inner extent_d)`                            |
//! | 4..8    | `log2(1 + outer extent_d)`                            |
//! | 8       | 1 if the innermost loop walks the contiguous dim     |
//! | 9       | `log2(1 + contiguous run)`                            |
//! | 10      | unique cache lines written                           |
//! | 11      | `log2(1 + slot 10)`                                   |
//! | 12      | cache-line efficiency                                |
//! | 13      | bytes accessed                                       |
//! | 14      | `log2(1 + slot 13)`                                   |
//! | 15..23  | bytes histogram: one-hot bucket `clamp((log2(bytes) - 8) / 2, 0, 7)` |
//! | 23      | reuse-distance proxy `log2(1 + working set bytes)`    |
//! | 24      | cache overflow `max(0, log2(working set / cache))`    |
//! | 25      | vector element ops                                   |
//! | 26      | scalar element ops                                   |
//! | 27, 28  | `log2(1 + x)` of slots 25, 26                         |
//! | 29      | effective vector lanes                               |
//! | 30      | requested vector width                               |
//! | 31      | issued ops (`vector / lanes + scalar`)               |
//! | 32      | `log2(1 + slot 31)`                                   |
//! | 33      | 1 if parallel                                        |
//! | 34      | `log2(1 + parallel tasks)`                            |
//! | 35      | core utilization (`used cores / total cores`)        |
//! | 36      | parallel speedup                                     |
//! | 37      | per-core ops (`slot 31 / slot 36`)                   |
//! | 38      | `log2(1 + slot 37)`                                   |
//! | 39      | 1 if inlined                                         |
//! | 40      | inlining recompute factor                            |
//! | 41      | `log2(slot 40)`                                       |
//! | 42      | allocated bytes                                      |
//! | 43      | `log2(1 + slot 42)`                                   |
//! | 44      | unroll factor                                        |
//! | 45      | `log2(slot 44)`                                       |
//! | 46      | float ops                                            |
//! | 47      | arithmetic intensity `slot 46 / max(slot 13, 1)`      |
//! | 48      | footprint x recompute `slot 10 * slot 40`             |
//! | 49      | parallel work per line `slot 37 / max(slot 10, 1)`    |

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synth::analysis::{analyze_all, MachineModel, StageAnalysis};
use crate::synth::{OpKind, ScheduleDecision, SynthPipeline};

pub const INVARIANT_WIDTH: usize = 320;
pub const DEPENDENT_WIDTH: usize = 94;
pub const STD_FLOOR: f64 = 1e-6;

pub mod inv {
    pub const OP_HISTOGRAM: usize = 0;
    pub const FLOAT_OPS: usize = 14;
    pub const INT_OPS: usize = 15;
    pub const BOOL_OPS: usize = 16;
    pub const UNIT_STRIDE_READS: usize = 20;
    pub const STRIDED_READS: usize = 21;
    pub const TRANSPOSED_READS: usize = 22;
    pub const BROADCAST_READS: usize = 23;
    pub const RANK: usize = 24;
    pub const LOG_DIMS: usize = 25;
    pub const LOG_ELEMENTS: usize = 29;
    pub const PRODUCERS: usize = 30;
    pub const CONSUMERS: usize = 31;
    pub const IS_OUTPUT: usize = 32;
    pub const USED: usize = 38;
}

pub mod dep {
    pub const LOG_INNER: usize = 0;
    pub const LOG_OUTER: usize = 4;
    pub const CONTIGUOUS: usize = 8;
    pub const CACHE_LINES: usize = 10;
    pub const LINE_EFFICIENCY: usize = 12;
    pub const BYTES: usize = 13;
    pub const BYTES_HISTOGRAM: usize = 15;
    pub const REUSE_DISTANCE: usize = 23;
    pub const VECTOR_OPS: usize = 25;
    pub const SCALAR_OPS: usize = 26;
    pub const LANES: usize = 29;
    pub const ISSUED_OPS: usize = 31;
    pub const PARALLEL: usize = 33;
    pub const CORE_UTILIZATION: usize = 35;
    pub const PARALLEL_SPEEDUP: usize = 36;
    pub const PER_CORE_OPS: usize = 37;
    pub const INLINED: usize = 39;
    pub const RECOMPUTE: usize = 40;
    pub const ALLOC_BYTES: usize = 42;
    pub const UNROLL: usize = 44;
    pub const FLOPS: usize = 46;
    pub const ARITHMETIC_INTENSITY: usize = 47;
    pub const FOOTPRINT_RECOMPUTE: usize = 48;
    pub const PARALLEL_WORK_PER_LINE: usize = 49;
    pub const USED: usize = 50;
}

fn lg(x: f64) -> f64 {
    (1.0 + x).log2()
}

/// Schedule-invariant features of stage `node`.
pub fn extract_invariant(pipeline: &SynthPipeline, node: usize) -> Vec<f64> {
    let mut f = vec![0.0; INVARIANT_WIDTH];
    let op = pipeline.node_ops[node];
    let shape = &pipeline.node_shapes[node];
    let operands = &pipeline.node_operands[node];
    let elements = pipeline.elements(node);
    let rank = shape.len() as f64;

    f[inv::OP_HISTOGRAM + op.index()] = 1.0;
    let float_ops = elements * op.flop_weight();
    let int_ops = if op == OpKind::Input {
        0.0
    } else {
        elements * rank * (1 + operands.len()) as f64
    };
    let bool_ops = elements * op.bool_weight();
    f[inv::FLOAT_OPS] = float_ops;
    f[inv::INT_OPS] = int_ops;
    f[inv::BOOL_OPS] = bool_ops;
    f[17] = lg(float_ops);
    f[18] = lg(int_ops);
    f[19] = lg(bool_ops);

    for (k, &p) in operands.iter().enumerate() {
        let slot = if op.is_pool() || (op == OpKind::Conv && k == 0) {
            inv::STRIDED_READS
        } else if k == 1 && op.reads_transposed() {
            inv::TRANSPOSED_READS
        } else if pipeline.node_shapes[p] == *shape {
            inv::UNIT_STRIDE_READS
        } else {
            inv::BROADCAST_READS
        };
        f[slot] += 1.0;
    }

    f[inv::RANK] = rank;
    for (d, &e) in shape.iter().enumerate() {
        f[inv::LOG_DIMS + d] = lg(f64::from(e));
    }
    f[inv::LOG_ELEMENTS] = lg(elements);
    f[inv::PRODUCERS] = operands.len() as f64;
    let consumers = pipeline.graph.consumers(node).len();
    f[inv::CONSUMERS] = consumers as f64;
    f[inv::IS_OUTPUT] = if consumers == 0 { 1.0 } else { 0.0 };
    let producer_logs: Vec<f64> = operands.iter().map(|&p| lg(pipeline.elements(p))).collect();
    f[33] = producer_logs.iter().sum();
    f[34] = producer_logs.iter().copied().fold(0.0, f64::max);
    f[35] = op.flop_weight();
    f[36] = op.reuse_factor();
    f[37] = lg(operands.iter().map(|&p| pipeline.elements(p)).sum());
    f
}

fn dependent_from_analysis(a: &StageAnalysis, machine: &MachineModel) -> Vec<f64> {
    let mut f = vec![0.0; DEPENDENT_WIDTH];
    for (d, (&i, &o)) in a.inner_extents.iter().zip(&a.outer_extents).enumerate() {
        f[dep::LOG_INNER + d] = lg(i);
        f[dep::LOG_OUTER + d] = lg(o);
    }
    f[dep::CONTIGUOUS] = if a.innermost_contiguous { 1.0 } else { 0.0 };
    f[9] = lg(a.contiguous_run);
    f[dep::CACHE_LINES] = a.cache_lines;
    f[11] = lg(a.cache_lines);
    f[dep::LINE_EFFICIENCY] = a.line_efficiency;
    f[dep::BYTES] = a.bytes_accessed;
    f[14] = lg(a.bytes_accessed);
    if a.bytes_accessed > 0.0 {
        let bucket = ((a.bytes_accessed.log2() - 8.0) / 2.0).floor().clamp(0.0, 7.0) as usize;
        f[dep::BYTES_HISTOGRAM + bucket] = 1.0;
    }
    f[dep::REUSE_DISTANCE] = lg(a.working_set_bytes);
    f[24] = (a.working_set_bytes / machine.cache_bytes as f64).log2().max(0.0);
    f[dep::VECTOR_OPS] = a.vector_ops;
    f[dep::SCALAR_OPS] = a.scalar_ops;
    f[27] = lg(a.vector_ops);
    f[28] = lg(a.scalar_ops);
    f[dep::LANES] = a.vector_lanes;
    f[30] = a.requested_width;
    f[dep::ISSUED_OPS] = a.issued_ops;
    f[32] = lg(a.issued_ops);
    f[dep::PARALLEL] = if a.parallel { 1.0 } else { 0.0 };
    f[34] = lg(a.parallel_tasks);
    f[dep::CORE_UTILIZATION] = a.core_utilization;
    f[dep::PARALLEL_SPEEDUP] = a.parallel_speedup;
    let per_core = a.issued_ops / a.parallel_speedup;
    f[dep::PER_CORE_OPS] = per_core;
    f[38] = lg(per_core);
    f[dep::INLINED] = if a.inlined { 1.0 } else { 0.0 };
    f[dep::RECOMPUTE] = a.recompute;
    f[41] = a.recompute.log2();
    f[dep::ALLOC_BYTES] = a.alloc_bytes;
    f[43] = lg(a.alloc_bytes);
    f[dep::UNROLL] = a.unroll;
    f[45] = a.unroll.log2();
    f[dep::FLOPS] = a.flops;
    f[dep::ARITHMETIC_INTENSITY] = f[dep::FLOPS] / f[dep::BYTES].max(1.0);
    f[dep::FOOTPRINT_RECOMPUTE] = f[dep::CACHE_LINES] * f[dep::RECOMPUTE];
    f[dep::PARALLEL_WORK_PER_LINE] = f[dep::PER_CORE_OPS] / f[dep::CACHE_LINES].max(1.0);
    f
}

/// Schedule-dependent features of stage `node` under `schedule`.
pub fn extract_dependent(
    pipeline: &SynthPipeline,
    node: usize,
    schedule: &ScheduleDecision,
    machine: &MachineModel,
) -> Vec<f64> {
    let a = crate::synth::analyze_stage(pipeline, schedule, node, machine);
    dependent_from_analysis(&a, machine)
}

/// Feature matrices (one row per stage) for a scheduled pipeline.
pub fn featurize(
    pipeline: &SynthPipeline,
    schedule: &ScheduleDecision,
    machine: &MachineModel,
) -> Result<(Array2<f64>, Array2<f64>)> {
    schedule.validate(pipeline)?;
    let n = pipeline.num_nodes();
    let mut inv_rows = Array2::zeros((n, INVARIANT_WIDTH));
    let mut dep_rows = Array2::zeros((n, DEPENDENT_WIDTH));
    for (node, a) in analyze_all(pipeline, schedule, machine).iter().enumerate() {
        inv_rows
            .row_mut(node)
            .assign(&Array1::from(extract_invariant(pipeline, node)));
        dep_rows
            .row_mut(node)
            .assign(&Array1::from(dependent_from_analysis(a, machine)));
    }
    Ok((inv_rows, dep_rows))
}

/// Per-coordinate mean and population standard deviation (floored at
/// [`STD_FLOOR`]) for both feature families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub invariant_mean: Vec<f64>,
    pub invariant_std: Vec<f64>,
    pub dependent_mean: Vec<f64>,
    pub dependent_std: Vec<f64>,
}

/// Mean and floored population std of each column.
fn column_stats<'a>(
    blocks: impl Iterator<Item = ArrayView2<'a, f64>> + Clone,
    width: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut count = 0usize;
    let mut sum = vec![0.0; width];
    for b in blocks.clone() {
        if b.ncols() != width {
            return Err(Error::dim("feature width", width, b.ncols()));
        }
        count += b.nrows();
        for row in b.rows() {
            for (s, &x) in sum.iter_mut().zip(row) {
                *s += x;
            }
        }
    }
    if count < 2 {
        return Err(Error::Invalid(format!(
            "normalization needs at least 2 feature rows, got {count}"
        )));
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
    let mut sq = vec![0.0; width];
    for b in blocks {
        for row in b.rows() {
            for ((s, &x), &m) in sq.iter_mut().zip(row).zip(&mean) {
                *s += (x - m) * (x - m);
            }
        }
    }
    let std = sq.iter().map(|s| (s / count as f64).sqrt().max(STD_FLOOR)).collect();
    Ok((mean, std))
}

impl NormStats {
    /// Fits statistics over every stage row of the given feature blocks.
    pub fn fit<'a, I>(blocks: I) -> Result<Self>
    where
        I: IntoIterator<Item = (ArrayView2<'a, f64>, ArrayView2<'a, f64>)>,
        I::IntoIter: Clone,
    {
        let it = blocks.into_iter();
        let (invariant_mean, invariant_std) = column_stats(it.clone().map(|(i, _)| i), INVARIANT_WIDTH)?;
        let (dependent_mean, dependent_std) = column_stats(it.map(|(_, d)| d), DEPENDENT_WIDTH)?;
        Ok(Self {
            invariant_mean,
            invariant_std,
            dependent_mean,
            dependent_std,
        })
    }

    pub fn identity() -> Self {
        Self {
            invariant_mean: vec![0.0; INVARIANT_WIDTH],
            invariant_std: vec![1.0; INVARIANT_WIDTH],
            dependent_mean: vec![0.0; DEPENDENT_WIDTH],
            dependent_std: vec![1.0; DEPENDENT_WIDTH],
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (what, v, w) in [
            ("invariant mean", &self.invariant_mean, INVARIANT_WIDTH),
            ("invariant std", &self.invariant_std, INVARIANT_WIDTH),
            ("dependent mean", &self.dependent_mean, DEPENDENT_WIDTH),
            ("dependent std", &self.dependent_std, DEPENDENT_WIDTH),
        ] {
            if v.len() != w {
                return Err(Error::Incompatible {
                    what: "normalization width",
                    left: format!("{what} {}", v.len()),
                    right: w.to_string(),
                });
            }
        }
        if self
            .invariant_std
            .iter()
            .chain(&self.dependent_std)
            .any(|&s| !(s >= STD_FLOOR))
        {
            return Err(Error::Invalid("normalization std below floor".into()));
        }
        Ok(())
    }

    pub fn normalize_invariant(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        apply_norm(x, &self.invariant_mean, &self.invariant_std)
    }

    pub fn normalize_dependent(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        apply_norm(x, &self.dependent_mean, &self.dependent_std)
    }
}

/// `(x - mean) / std` per column.
pub fn apply_norm(x: ArrayView2<f64>, mean: &[f64], std: &[f64]) -> Result<Array2<f64>> {
    if x.ncols() != mean.len() || mean.len() != std.len() {
        return Err(Error::dim("normalized width", mean.len(), x.ncols()));
    }
    let mut out = x.to_owned();
    for mut row in out.axis_iter_mut(Axis(0)) {
        for ((v, &m), &s) in row.iter_mut().zip(mean).zip(std) {
            *v = (*v - m) / s;
        }
    }
    Ok(out)
}

/// Inverse of [`apply_norm`].
pub fn invert_norm(z: ArrayView2<f64>, mean: &[f64], std: &[f64]) -> Result<Array2<f64>> {
    if z.ncols() != mean.len() || mean.len() != std.len() {
        return Err(Error::dim("normalized width", mean.len(), z.ncols()));
    }
    let mut out = z.to_owned();
    for mut row in out.axis_iter_mut(Axis(0)) {
        for ((v, &m), &s) in row.iter_mut().zip(mean).zip(std) {
            *v = *v * s + m;
        }
    }
    Ok(out)
}
