//! Analytic run-time oracle.
//!
//! Per non-input stage (all quantities from [`analyze_stage`]):
//!
//! ```text
//! compute  = issued_ops / parallel_speedup
//! locality = 1 + locality_weight * (1 / line_efficiency - 1)
//! cache    = 1 + cache_weight * max(0, log2(working_set / cache_bytes))
//! unroll   = 1 + unroll_overhead / unroll_factor
//! cost     = compute * locality * cache * unroll
//! ```
//!
//! An inlined stage stores nothing and runs inside its consumer's loop nest,
//! so it uses the consumer's vector lanes and parallel speedup instead of its
//! own, and is recomputed `recompute` times:
//!
//! ```text
//! cost = flops * recompute * (1 - inline_saving) / (consumer_lanes * consumer_speedup)
//! ```
//!
//! The pipeline run time in milliseconds is
//! `sum(stage_overhead_ms + cost * ms_per_op)` over non-input stages.
//! Measurements multiply that base by `1 + eps`, `eps ~ N(0, sigma)`.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::analysis::{analyze_all, MachineModel, StageAnalysis};
use super::ops::OpKind;
use super::schedule::ScheduleDecision;
use super::{rng_for, SynthPipeline};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    pub machine: MachineModel,
    pub ms_per_op: f64,
    pub stage_overhead_ms: f64,
    pub locality_weight: f64,
    pub cache_weight: f64,
    pub unroll_overhead: f64,
    pub inline_saving: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            machine: MachineModel::default(),
            ms_per_op: 3e-5,
            stage_overhead_ms: 0.06,
            locality_weight: 0.1,
            cache_weight: 0.25,
            unroll_overhead: 0.25,
            inline_saving: 0.4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub sigma: f64,
    pub repeats: usize,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            sigma: 0.05,
            repeats: 10,
        }
    }
}

/// Anything that can price a scheduled pipeline.
pub trait CostOracle {
    /// Noise-free run time in milliseconds.
    fn base_cost(&self, pipeline: &SynthPipeline, schedule: &ScheduleDecision) -> f64;
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AnalyticOracle {
    pub config: OracleConfig,
}

impl AnalyticOracle {
    pub fn new(config: OracleConfig) -> Self {
        Self { config }
    }

    /// Per-stage cost in operation units (before `ms_per_op` and overhead).
    pub fn stage_costs(&self, pipeline: &SynthPipeline, schedule: &ScheduleDecision) -> Vec<f64> {
        let c = &self.config;
        let stages = analyze_all(pipeline, schedule, &c.machine);
        (0..pipeline.num_nodes())
            .map(|n| {
                if pipeline.node_ops[n] == OpKind::Input {
                    return 0.0;
                }
                let a = &stages[n];
                if a.inlined {
                    let consumer = pipeline.graph.consumers(n)[0];
                    let host = &stages[consumer];
                    return a.flops * a.recompute * (1.0 - c.inline_saving)
                        / (host.vector_lanes * host.parallel_speedup);
                }
                self.own_cost(a)
            })
            .collect()
    }

    fn own_cost(&self, a: &StageAnalysis) -> f64 {
        let c = &self.config;
        let compute = a.issued_ops / a.parallel_speedup;
        let locality = 1.0 + c.locality_weight * (1.0 / a.line_efficiency - 1.0);
        let overflow = (a.working_set_bytes / c.machine.cache_bytes as f64).log2().max(0.0);
        let cache = 1.0 + c.cache_weight * overflow;
        let unroll = 1.0 + c.unroll_overhead / a.unroll;
        compute * locality * cache * unroll
    }
}

impl CostOracle for AnalyticOracle {
    fn base_cost(&self, pipeline: &SynthPipeline, schedule: &ScheduleDecision) -> f64 {
        let c = &self.config;
        self.stage_costs(pipeline, schedule)
            .iter()
            .zip(&pipeline.node_ops)
            .filter(|(_, &op)| op != OpKind::Input)
            .map(|(&cost, _)| c.stage_overhead_ms + cost * c.ms_per_op)
            .sum()
    }
}

/// `noise.repeats` noisy measurements of the oracle's base cost.
pub fn oracle_runtime(
    oracle: &dyn CostOracle,
    pipeline: &SynthPipeline,
    schedule: &ScheduleDecision,
    noise: &NoiseConfig,
    seed: u64,
) -> Result<Vec<f64>> {
    schedule.validate(pipeline)?;
    if noise.repeats == 0 {
        return Err(Error::Config("noise repeats must be >= 1".into()));
    }
    let base = oracle.base_cost(pipeline, schedule);
    if noise.sigma == 0.0 {
        return Ok(vec![base; noise.repeats]);
    }
    let normal = Normal::new(0.0, noise.sigma).map_err(|e| Error::Config(format!("noise sigma: {e}")))?;
    let mut rng = rng_for(seed, 2);
    // Clamped so a measurement can never reach zero.
    Ok((0..noise.repeats)
        .map(|_| base * (1.0 + normal.sample(&mut rng)).max(0.05))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::PipelineGraph;
    use crate::synth::schedule::StageSchedule;

    fn gemm_pipeline(scale: u32) -> SynthPipeline {
        let a = vec![16 * scale, 32 * scale, 64 * scale];
        let b = vec![16 * scale, 64 * scale, 32 * scale];
        let out = vec![16 * scale, 32 * scale, 32 * scale];
        SynthPipeline {
            graph: PipelineGraph::new(3, vec![(0, 2), (1, 2)]).unwrap(),
            node_ops: vec![OpKind::Input, OpKind::Input, OpKind::Gemm],
            node_operands: vec![vec![], vec![], vec![0, 1]],
            node_shapes: vec![a, b, out],
            seed: 0,
        }
    }

    fn gemm_schedule(p: &SynthPipeline, vectorize: u32) -> ScheduleDecision {
        let mut s = ScheduleDecision::naive(p);
        s.stages[2] = StageSchedule {
            split_factors: vec![1, 8, 16],
            loop_order: vec![0, 1, 2],
            vectorize_width: vectorize,
            parallel: true,
            inlined: false,
            unroll_factor: 2,
        };
        s
    }

    fn no_overhead() -> AnalyticOracle {
        AnalyticOracle::new(OracleConfig {
            stage_overhead_ms: 0.0,
            ..Default::default()
        })
    }

    #[test]
    fn zero_noise_repeats_base() {
        let p = gemm_pipeline(1);
        let s = gemm_schedule(&p, 4);
        let o = AnalyticOracle::default();
        let noise = NoiseConfig {
            sigma: 0.0,
            repeats: 10,
        };
        let m = oracle_runtime(&o, &p, &s, &noise, 9).unwrap();
        assert_eq!(m, vec![o.base_cost(&p, &s); 10]);
    }

    #[test]
    fn vectorizing_dominant_stage_is_cheaper() {
        let p = gemm_pipeline(1);
        let o = no_overhead();
        let vec4 = o.base_cost(&p, &gemm_schedule(&p, 4));
        let scalar = o.base_cost(&p, &gemm_schedule(&p, 0));
        // Work 16*32*32*2 = 32768 flops, 8 cores * 0.8 = 6.4 speedup,
        // 16-wide contiguous tile so no line waste, tile 1*8*16*4B*3 fits cache,
        // unroll factor 1 + 0.25 / 2.
        let expect_scalar = 32768.0 / 6.4 * 1.125 * o.config.ms_per_op;
        assert!(
            (scalar / expect_scalar - 1.0).abs() < 1e-12,
            "{scalar} vs {expect_scalar}"
        );
        assert!((vec4 / (expect_scalar / 4.0) - 1.0).abs() < 1e-12);
        assert!(vec4 < scalar);
    }

    #[test]
    fn doubling_dims_scales_rank3_work_by_eight() {
        let o = no_overhead();
        let p1 = gemm_pipeline(1);
        let p2 = gemm_pipeline(2);
        for v in [0, 4, 16] {
            let c1 = o.base_cost(&p1, &gemm_schedule(&p1, v));
            let c2 = o.base_cost(&p2, &gemm_schedule(&p2, v));
            assert!((c2 / c1 - 8.0).abs() < 1e-12, "ratio {}", c2 / c1);
        }
    }

    #[test]
    fn noise_statistics() {
        let p = gemm_pipeline(1);
        let s = gemm_schedule(&p, 4);
        let o = AnalyticOracle::default();
        let noise = NoiseConfig {
            sigma: 0.05,
            repeats: 10_000,
        };
        let m = oracle_runtime(&o, &p, &s, &noise, 1).unwrap();
        let mean = m.iter().sum::<f64>() / m.len() as f64;
        let var = m.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / m.len() as f64;
        let cv = var.sqrt() / mean;
        assert!((cv - 0.05).abs() <= 0.005, "cv {cv}");
        assert!(m.iter().all(|&x| x > 0.0));
    }

    #[test]
    fn recompute_penalty_never_lowers_cost() {
        use crate::synth::analysis::analyze_all;
        use crate::synth::{enumerate_schedules, sample_pipeline, GeneratorConfig};
        let o = AnalyticOracle::default();
        let mut inlined = 0;
        for seed in 0..40 {
            let p = sample_pipeline(&GeneratorConfig::default(), seed).unwrap();
            for s in enumerate_schedules(&p, 10, seed).unwrap() {
                let stages = analyze_all(&p, &s, &o.config.machine);
                for (n, cost) in o.stage_costs(&p, &s).into_iter().enumerate() {
                    let a = &stages[n];
                    if !a.inlined {
                        continue;
                    }
                    inlined += 1;
                    let host = &stages[p.graph.consumers(n)[0]];
                    let free = a.flops * (1.0 - o.config.inline_saving) / (host.vector_lanes * host.parallel_speedup);
                    assert!(a.recompute >= 1.0);
                    assert!(cost >= free, "stage {n}: {cost} < {free}");
                    assert!((cost / free - a.recompute).abs() < 1e-9);
                }
            }
        }
        assert!(inlined > 20);
    }
}
