//! Shared fixtures for the integration tests: random graphs, random
//! feature rows and a central-difference gradient checker.
#![allow(dead_code)]

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use sched_perf::graph::{normalize_adjacency, BlockAdjacency, PipelineGraph};
use sched_perf::model::{Architecture, BaselineTrace, Batch, GcnTrace, Regressor};

pub const STEP: f64 = 1e-4;
pub const FINE_STEP: f64 = 1e-6;
pub const TOLERANCE: f64 = 1e-4;

pub fn small_arch() -> Architecture {
    Architecture {
        invariant_embed: 7,
        dependent_embed: 5,
        ..Architecture::default()
    }
}

pub fn random_dag(rng: &mut ChaCha8Rng, n: usize) -> PipelineGraph {
    let mut edges = Vec::new();
    for c in 1..n {
        for p in 0..c {
            if rng.gen_bool(0.4) {
                edges.push((p, c));
            }
        }
    }
    PipelineGraph::new(n, edges).unwrap()
}

/// Features with only a handful of active columns, like real stage rows.
pub fn random_features(rng: &mut ChaCha8Rng, rows: usize, width: usize, active: usize) -> Array2<f64> {
    let cols: Vec<usize> = (0..active).map(|_| rng.gen_range(0..width)).collect();
    let mut x = Array2::zeros((rows, width));
    for r in 0..rows {
        for &c in &cols {
            x[[r, c]] = rng.gen_range(-2.0..2.0);
        }
    }
    x
}

pub fn random_batch(rng: &mut ChaCha8Rng, sizes: &[usize]) -> Batch {
    let graphs: Vec<_> = sizes.iter().map(|&n| random_dag(rng, n)).collect();
    let total: usize = sizes.iter().sum();
    let adj = BlockAdjacency::new(graphs.iter().map(|g| normalize_adjacency(g).unwrap()).collect());
    Batch::new(
        adj,
        random_features(rng, total, 320, 40),
        random_features(rng, total, 94, 30),
    )
    .unwrap()
}

pub fn objective<M: Regressor>(model: &M, batch: &Batch, weights: &Array1<f64>) -> (f64, M::Trace) {
    let (y, trace) = model.forward_train(batch).unwrap();
    ((&y * weights).sum(), trace)
}

pub fn gcn_masks(t: &GcnTrace) -> Vec<bool> {
    let mut m: Vec<bool> = t.inv_pre.iter().chain(t.dep_pre.iter()).map(|&v| v > 0.0).collect();
    for l in &t.layers {
        m.extend(l.pre.iter().map(|&v| v > 0.0));
    }
    m
}

pub fn baseline_masks(t: &BaselineTrace) -> Vec<bool> {
    t.pre1.iter().chain(t.pre2.iter()).map(|&v| v > 0.0).collect()
}

pub struct Report {
    pub worst: f64,
    pub checked: usize,
    pub kinks: usize,
    pub detail: String,
}

/// Central difference of the objective in entry `i` of tensor `t`, and
/// whether both evaluations kept every ReLU on the same side.
#[allow(clippy::too_many_arguments)]
pub fn central_difference<M: Regressor>(
    model: &M,
    batch: &Batch,
    weights: &Array1<f64>,
    masks: &impl Fn(&M::Trace) -> Vec<bool>,
    base_mask: &[bool],
    t: usize,
    i: usize,
    h: f64,
) -> (f64, bool) {
    let mut plus = model.clone();
    plus.learnables_mut()[t].0[i] += h;
    let (fp, tp) = objective(&plus, batch, weights);
    let mut minus = model.clone();
    minus.learnables_mut()[t].0[i] -= h;
    let (fm, tm) = objective(&minus, batch, weights);
    (
        (fp - fm) / (2.0 * h),
        masks(&tp) == base_mask && masks(&tm) == base_mask,
    )
}

/// Compares analytic gradients against central differences on the chosen
/// entries of every learnable tensor. The estimate combines steps h and h/2
/// (Richardson extrapolation). Entries whose
/// perturbation flips a ReLU are retried with a finer step and skipped if
/// they still do.
pub fn check<M: Regressor>(
    model: &M,
    batch: &Batch,
    weights: &Array1<f64>,
    masks: impl Fn(&M::Trace) -> Vec<bool>,
    pick: impl Fn(usize, usize) -> Vec<usize>,
) -> Report {
    let (_, trace) = objective(model, batch, weights);
    let base_mask = masks(&trace);
    let grads = model.backward(&trace, weights.view()).unwrap();
    let analytic: Vec<Vec<f64>> = grads.learnables().iter().map(|(_, d, _)| d.to_vec()).collect();
    let mut report = Report {
        worst: 0.0,
        checked: 0,
        kinks: 0,
        detail: String::new(),
    };
    for (t, grad) in analytic.iter().enumerate() {
        let len = grad.len();
        for i in pick(t, len) {
            let mut estimate = None;
            for h in [STEP, FINE_STEP] {
                let (d_full, clean_full) = central_difference(model, batch, weights, &masks, &base_mask, t, i, h);
                let (d_half, clean_half) = central_difference(model, batch, weights, &masks, &base_mask, t, i, h / 2.0);
                if clean_full && clean_half {
                    estimate = Some((4.0 * d_half - d_full) / 3.0);
                    break;
                }
            }
            let Some(numeric) = estimate else {
                report.kinks += 1;
                continue;
            };
            let a = grad[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            if rel > report.worst {
                report.worst = rel;
                report.detail = format!(
                    "{} [{i}]: analytic {a:.6e}, numeric {numeric:.6e}",
                    model.learnables()[t].0
                );
            }
            report.checked += 1;
        }
    }
    report
}

pub fn all_entries(_: usize, len: usize) -> Vec<usize> {
    (0..len).collect()
}
