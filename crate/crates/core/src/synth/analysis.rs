//! Per-stage quantities derived from a pipeline and a schedule. Both the
//! dependent features and the analytic oracle read from here.

use serde::{Deserialize, Serialize};

use super::ops::OpKind;
use super::schedule::ScheduleDecision;
use super::SynthPipeline;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MachineModel {
    pub cores: u32,
    pub parallel_efficiency: f64,
    pub cache_line_bytes: u32,
    pub element_bytes: u32,
    pub cache_bytes: u64,
}

impl Default for MachineModel {
    fn default() -> Self {
        Self {
            cores: 8,
            parallel_efficiency: 0.8,
            cache_line_bytes: 64,
            element_bytes: 4,
            cache_bytes: 256 * 1024,
        }
    }
}

impl MachineModel {
    pub fn line_elements(&self) -> f64 {
        f64::from(self.cache_line_bytes / self.element_bytes)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct StageAnalysis {
    pub elements: f64,
    /// Element-wise floating-point work: `elements * flop_weight`.
    pub flops: f64,
    /// Inner (tile) extent per dimension, in dimension order.
    pub inner_extents: Vec<f64>,
    pub outer_extents: Vec<f64>,
    pub innermost_contiguous: bool,
    /// Consecutive elements written along the innermost loop.
    pub contiguous_run: f64,
    pub cache_lines: f64,
    /// Useful fraction of every touched cache line, in (0, 1].
    pub line_efficiency: f64,
    pub requested_width: f64,
    pub vector_lanes: f64,
    pub vector_ops: f64,
    pub scalar_ops: f64,
    /// Issued operations: vector ops count once per vector.
    pub issued_ops: f64,
    pub parallel: bool,
    pub parallel_tasks: f64,
    pub core_utilization: f64,
    pub parallel_speedup: f64,
    pub working_set_bytes: f64,
    pub bytes_accessed: f64,
    pub alloc_bytes: f64,
    pub recompute: f64,
    pub inlined: bool,
    pub unroll: f64,
}

/// Analysis of stage `node` of `pipeline` under `schedule`. The schedule must
/// already be validated against the pipeline.
pub fn analyze_stage(
    pipeline: &SynthPipeline,
    schedule: &ScheduleDecision,
    node: usize,
    machine: &MachineModel,
) -> StageAnalysis {
    let op = pipeline.node_ops[node];
    let shape = &pipeline.node_shapes[node];
    let st = &schedule.stages[node];
    let rank = shape.len();
    let elements = pipeline.elements(node);
    let flops = elements * op.flop_weight();

    let inner: Vec<f64> = st.split_factors.iter().map(|&f| f64::from(f)).collect();
    let outer: Vec<f64> = st.outer_extents(shape).into_iter().map(f64::from).collect();

    let innermost = st.innermost_dim();
    let innermost_contiguous = innermost == rank - 1;
    let contiguous_run = if innermost_contiguous { inner[rank - 1] } else { 1.0 };
    let line = machine.line_elements();
    let cache_lines = (contiguous_run / line).ceil() * (elements / contiguous_run);
    let line_efficiency = elements / (cache_lines * line);

    let inner_innermost = inner[innermost];
    let vector_lanes = if st.vectorize_width == 0 {
        1.0
    } else {
        f64::from(st.vectorize_width).min(inner_innermost)
    };
    let (vector_ops, scalar_ops) = if st.vectorize_width == 0 || op == OpKind::Input {
        (0.0, flops)
    } else {
        let full = (inner_innermost / vector_lanes).floor() * vector_lanes;
        let vector_fraction = full / inner_innermost;
        (flops * vector_fraction, flops * (1.0 - vector_fraction))
    };
    let issued_ops = vector_ops / vector_lanes + scalar_ops;

    let cores = f64::from(machine.cores);
    let (parallel_tasks, used_cores) = if st.parallel {
        let tasks = outer[st.outermost_dim()];
        (tasks, tasks.min(cores))
    } else {
        (1.0, 1.0)
    };
    let parallel_speedup = if st.parallel {
        (used_cores * machine.parallel_efficiency).max(1.0)
    } else {
        1.0
    };

    let producers = &pipeline.node_operands[node];
    let elem_bytes = f64::from(machine.element_bytes);
    let tile: f64 = inner.iter().product();
    let working_set_bytes = tile * elem_bytes * (1 + producers.len()) as f64;
    let read_elements: f64 = producers.iter().map(|&p| pipeline.elements(p)).sum();
    let write_elements = if st.inlined { 0.0 } else { elements };
    let bytes_accessed = if op == OpKind::Input {
        0.0
    } else {
        elem_bytes * (read_elements + write_elements)
    };
    let alloc_bytes = if st.inlined { 0.0 } else { elements * elem_bytes };

    let recompute = if st.inlined {
        let consumer = pipeline.graph.consumers(node)[0];
        let cop = pipeline.node_ops[consumer];
        (pipeline.elements(consumer) * cop.reuse_factor() / elements).max(1.0)
    } else {
        1.0
    };

    StageAnalysis {
        elements,
        flops,
        inner_extents: inner,
        outer_extents: outer,
        innermost_contiguous,
        contiguous_run,
        cache_lines,
        line_efficiency,
        requested_width: f64::from(st.vectorize_width),
        vector_lanes,
        vector_ops,
        scalar_ops,
        issued_ops,
        parallel: st.parallel,
        parallel_tasks,
        core_utilization: used_cores / cores,
        parallel_speedup,
        working_set_bytes,
        bytes_accessed,
        alloc_bytes,
        recompute,
        inlined: st.inlined,
        unroll: f64::from(st.unroll_factor),
    }
}

pub fn analyze_all(
    pipeline: &SynthPipeline,
    schedule: &ScheduleDecision,
    machine: &MachineModel,
) -> Vec<StageAnalysis> {
    (0..pipeline.num_nodes())
        .map(|n| analyze_stage(pipeline, schedule, n, machine))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::PipelineGraph;
    use crate::synth::schedule::StageSchedule;

    fn relu_pipeline() -> SynthPipeline {
        SynthPipeline {
            graph: PipelineGraph::new(2, vec![(0, 1)]).unwrap(),
            node_ops: vec![OpKind::Input, OpKind::Relu],
            node_operands: vec![vec![], vec![0]],
            node_shapes: vec![vec![64, 128], vec![64, 128]],
            seed: 0,
        }
    }

    #[test]
    fn naive_schedule() {
        let p = relu_pipeline();
        let s = ScheduleDecision::naive(&p);
        let a = analyze_stage(&p, &s, 1, &MachineModel::default());
        assert_eq!(a.flops, 64.0 * 128.0);
        assert!(a.innermost_contiguous);
        assert_eq!(a.contiguous_run, 128.0);
        assert_eq!(a.cache_lines, 64.0 * 8.0);
        assert_eq!(a.line_efficiency, 1.0);
        assert_eq!(a.vector_ops, 0.0);
        assert_eq!(a.issued_ops, a.flops);
        assert_eq!(a.core_utilization, 1.0 / 8.0);
        assert_eq!(a.parallel_speedup, 1.0);
    }

    #[test]
    fn strided_innermost_wastes_lines() {
        let p = relu_pipeline();
        let mut s = ScheduleDecision::naive(&p);
        s.stages[1].loop_order = vec![1, 0];
        let a = analyze_stage(&p, &s, 1, &MachineModel::default());
        assert!(!a.innermost_contiguous);
        assert_eq!(a.cache_lines, a.elements);
        assert_eq!(a.line_efficiency, 1.0 / 16.0);
    }

    #[test]
    fn vector_and_parallel() {
        let p = relu_pipeline();
        let mut s = ScheduleDecision::naive(&p);
        s.stages[1] = StageSchedule {
            split_factors: vec![8, 12],
            loop_order: vec![0, 1],
            vectorize_width: 8,
            parallel: true,
            inlined: false,
            unroll_factor: 2,
        };
        let a = analyze_stage(&p, &s, 1, &MachineModel::default());
        // 12-wide inner tile: one full 8-lane vector, 4 scalar elements.
        assert_eq!(a.vector_lanes, 8.0);
        assert!((a.vector_ops - a.flops * 8.0 / 12.0).abs() < 1e-9);
        assert!((a.issued_ops - (a.vector_ops / 8.0 + a.scalar_ops)).abs() < 1e-9);
        assert_eq!(a.parallel_tasks, 8.0);
        assert_eq!(a.core_utilization, 1.0);
        assert!((a.parallel_speedup - 6.4).abs() < 1e-12);
    }
}
