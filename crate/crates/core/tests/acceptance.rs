//! Acceptance suite. Every test writes one `criterion N: PASS|FAIL` line
//! straight to stdout (bypassing capture) before asserting.

mod common;

use std::io::Write;
use std::path::Path;
use std::sync::OnceLock;
use std::time::Instant;

use common::*;
use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sched_perf::checkpoint::{Checkpoint, ModelState};
use sched_perf::cli::{run, Cli};
use sched_perf::dataset::{generate_dataset, DatasetConfig, Split};
use sched_perf::evaluation::{evaluate, ranking_groups};
use sched_perf::graph::{normalize_adjacency, BlockAdjacency, PipelineGraph};
use sched_perf::metrics::{pairwise_ranking, percent_errors, r_squared, rank_group};
use sched_perf::model::{Architecture, BaselineArchitecture, BaselineParams, Batch, ModelParams, Regressor};
use sched_perf::synth::{derive_seed, sample_pipeline, GeneratorConfig, OpKind};
use sched_perf::training::{loss_terms, train, TrainConfig, XiMode};

fn verdict(criterion: u32, pass: bool, detail: &str) {
    let status = if pass { "PASS" } else { "FAIL" };
    let mut out = std::io::stdout().lock();
    writeln!(out, "criterion {criterion}: {status} {detail}").unwrap();
    out.flush().unwrap();
    assert!(pass, "criterion {criterion} failed: {detail}");
}

#[test]
fn criterion_1_gradient_oracle() {
    let start = Instant::now();
    let arch = Architecture {
        invariant_embed: 7,
        dependent_embed: 5,
        ..Architecture::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut worst, mut checked, mut kinks) = (0.0f64, 0, 0);
    let mut detail = String::new();
    let mut nonzero_inactive = 0;
    for trial in 0..100 {
        let model = ModelParams::init(arch, 100 + trial);
        let n = rng.gen_range(1..=6);
        let batch = random_batch(&mut rng, &[n]);
        let weights = Array1::from_vec(vec![rng.gen_range(0.5..2.0)]);
        let active_inv = sched_perf::model::ops::active_columns(batch.invariant.view());
        let active_dep = sched_perf::model::ops::active_columns(batch.dependent.view());

        // Rows of all-zero input columns cannot affect the output.
        let (_, trace) = model.forward_train(&batch).unwrap();
        let grads = model.backward(&trace, weights.view()).unwrap();
        for (t, width, embed, active) in [
            (0, 320, arch.invariant_embed, &active_inv),
            (2, 94, arch.dependent_embed, &active_dep),
        ] {
            let g = grads.learnables()[t].1;
            for r in (0..width).filter(|r| !active.contains(r)) {
                nonzero_inactive += g[r * embed..(r + 1) * embed].iter().filter(|&&v| v != 0.0).count();
            }
        }

        let report = check(&model, &batch, &weights, gcn_masks, |t, len| match t {
            0 => active_inv
                .iter()
                .flat_map(|&r| r * arch.invariant_embed..(r + 1) * arch.invariant_embed)
                .collect(),
            2 => active_dep
                .iter()
                .flat_map(|&r| r * arch.dependent_embed..(r + 1) * arch.dependent_embed)
                .collect(),
            _ => all_entries(t, len),
        });
        checked += report.checked;
        kinks += report.kinks;
        if report.worst > worst {
            worst = report.worst;
            detail = format!("graph {trial} ({n} nodes): {}", report.detail);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = worst <= TOLERANCE && nonzero_inactive == 0 && kinks * 20 < checked && secs <= 300.0;
    verdict(
        1,
        pass,
        &format!(
            "100 graphs, {checked} entries checked, {kinks} kink skips, worst rel err {worst:.2e} (tol 1e-4) at {detail}; {secs:.0}s"
        ),
    );
}

/// A default-width model whose batch-norm running statistics are not 0/1.
fn model_with_running_stats(seed: u64) -> ModelParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = ModelParams::init(Architecture::default(), seed);
    for _ in 0..3 {
        let batch = random_batch(&mut rng, &[4, 3, 6]);
        let (_, trace) = model.forward_train(&batch).unwrap();
        model.update_running_stats(&trace);
    }
    model
}

struct Sample {
    graph: PipelineGraph,
    inv: Array2<f64>,
    dep: Array2<f64>,
}

fn batch_of(samples: &[&Sample]) -> Batch {
    let adj = BlockAdjacency::new(samples.iter().map(|s| normalize_adjacency(&s.graph).unwrap()).collect());
    let inv = ndarray::concatenate(Axis(0), &samples.iter().map(|s| s.inv.view()).collect::<Vec<_>>()).unwrap();
    let dep = ndarray::concatenate(Axis(0), &samples.iter().map(|s| s.dep.view()).collect::<Vec<_>>()).unwrap();
    Batch::new(adj, inv, dep).unwrap()
}

#[test]
fn criterion_2_structural_invariants() {
    const TOL: f64 = 1e-9;
    let model = model_with_running_stats(2);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut row_err, mut perm_err, mut batch_err) = (0.0f64, 0.0f64, 0.0f64);
    let graphs = 200;
    let samples: Vec<Sample> = (0..graphs)
        .map(|_| {
            let n = rng.gen_range(1..=12);
            Sample {
                graph: random_dag(&mut rng, n),
                inv: random_features(&mut rng, n, 320, 40),
                dep: random_features(&mut rng, n, 94, 30),
            }
        })
        .collect();
    for s in &samples {
        for row in normalize_adjacency(&s.graph).unwrap().matrix().rows() {
            row_err = row_err.max((row.sum() - 1.0).abs());
        }
    }
    for chunk in samples.chunks(4) {
        let batched = model.predict(&batch_of(&chunk.iter().collect::<Vec<_>>())).unwrap();
        for (s, &y) in chunk.iter().zip(batched.iter()) {
            let single = model.predict(&batch_of(&[s])).unwrap()[0];
            batch_err = batch_err.max((single - y).abs() / single.abs().max(1.0));

            // Old node i becomes perm[i].
            let n = s.graph.num_nodes();
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rng);
            let mut inv = Array2::zeros(s.inv.raw_dim());
            let mut dep = Array2::zeros(s.dep.raw_dim());
            for (old, &new) in perm.iter().enumerate() {
                inv.row_mut(new).assign(&s.inv.row(old));
                dep.row_mut(new).assign(&s.dep.row(old));
            }
            let permuted = Sample {
                graph: s.graph.permuted(&perm).unwrap(),
                inv,
                dep,
            };
            let yp = model.predict(&batch_of(&[&permuted])).unwrap()[0];
            perm_err = perm_err.max((yp - single).abs() / single.abs().max(1.0));
        }
    }
    let pass = row_err <= TOL && perm_err <= TOL && batch_err <= TOL;
    verdict(
        2,
        pass,
        &format!(
            "{graphs} graphs: max |row sum - 1| {row_err:.1e}, permutation diff {perm_err:.1e}, batched-vs-single diff {batch_err:.1e} (tol 1e-9)"
        ),
    );
}

#[test]
fn criterion_3_loss_unit_suite() {
    let mut failures = Vec::new();
    let eps = TrainConfig::default().beta_epsilon;

    // yhat equal to the mean.
    let t = loss_terms(7.5, 7.5, 0.3, 5.0, eps, XiMode::Relative).unwrap();
    if t.xi != 0.0 || t.loss != 0.0 {
        failures.push(format!("yhat = mean gave xi {} loss {}", t.xi, t.loss));
    }
    // The pipeline's best schedule.
    let t = loss_terms(9.0, 5.0, 0.3, 5.0, eps, XiMode::Relative).unwrap();
    if t.alpha != 1.0 {
        failures.push(format!("best schedule gave alpha {}", t.alpha));
    }
    // Ten measurements of 10, yhat 12, best 5: xi = 2/10, alpha = 5/10,
    // beta = 1/(10/1000), loss = (1/5)(1/2)(100).
    let measurements = [10.0f64; 10];
    let mean = measurements.iter().sum::<f64>() / 10.0;
    let std = (measurements.iter().map(|m| (m - mean) * (m - mean)).sum::<f64>() / 10.0).sqrt();
    let t = loss_terms(12.0, mean, std, 5.0, 1e-3, XiMode::Relative).unwrap();
    let expected = (2.0 / 10.0, 5.0 / 10.0, 1000.0 / 10.0, 10.0);
    if (t.xi, t.alpha, t.beta, t.loss) != expected {
        failures.push(format!(
            "worked example gave {:?}, expected {expected:?}",
            (t.xi, t.alpha, t.beta, t.loss)
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut alpha_violations = 0;
    let mut beta_violations = 0;
    for _ in 0..1000 {
        // Two schedules of one pipeline, equal xi and beta, different means.
        let best = rng.gen_range(0.5..50.0);
        let m1 = best * rng.gen_range(1.0..5.0);
        let m2 = m1 * rng.gen_range(1.001..5.0);
        let xi = rng.gen_range(0.01..1.0);
        let std = m2 * rng.gen_range(0.002..0.2);
        let a = loss_terms(m1 * (1.0 + xi), m1, std, best, eps, XiMode::Relative).unwrap();
        let b = loss_terms(m2 * (1.0 + xi), m2, std, best, eps, XiMode::Relative).unwrap();
        let same = (a.xi - b.xi).abs() < 1e-12 * a.xi && a.beta == b.beta;
        if !(same && a.alpha * a.beta > b.alpha * b.beta && a.loss > b.loss) {
            alpha_violations += 1;
        }

        // Equal xi and alpha, larger std above the noise floor.
        let mean: f64 = rng.gen_range(0.5..500.0);
        let s1: f64 = mean * rng.gen_range(0.0..0.2);
        let s2 = s1.max(eps * mean) * rng.gen_range(1.001..3.0);
        let yhat = mean * (1.0 + xi);
        let a = loss_terms(yhat, mean, s1, best.min(mean), eps, XiMode::Relative).unwrap();
        let b = loss_terms(yhat, mean, s2, best.min(mean), eps, XiMode::Relative).unwrap();
        if !(a.xi == b.xi && a.alpha == b.alpha && b.loss < a.loss) {
            beta_violations += 1;
        }
    }
    if alpha_violations > 0 {
        failures.push(format!("{alpha_violations}/1000 alpha-ordering violations"));
    }
    if beta_violations > 0 {
        failures.push(format!("{beta_violations}/1000 beta-ordering violations"));
    }
    let detail = if failures.is_empty() {
        "3 examples exact; alpha and beta ordering hold on 1000 pairs each".to_string()
    } else {
        failures.join("; ")
    };
    verdict(3, failures.is_empty(), &detail);
}

#[test]
fn criterion_4_generator_filters() {
    let config = GeneratorConfig::default();
    let (mut multi, mut shallow, mut unfavored) = (0, 0, 0);
    let n = 1000;
    for i in 0..n {
        let p = sample_pipeline(&config, derive_seed(4, i)).unwrap();
        multi += usize::from(p.graph.sinks().len() > 1);
        shallow += usize::from(p.graph.longest_path() < 5);
        unfavored += usize::from(!p.node_ops.iter().any(|op| OpKind::FAVORED.contains(op)));
    }
    let frac = multi as f64 / n as f64;
    let pass = frac <= 0.10 && shallow == 0 && unfavored == 0;
    verdict(
        4,
        pass,
        &format!(
            "{n} pipelines: multi-output {:.1}% (max 10%), depth < 5: {shallow}, without favored op: {unfavored}",
            100.0 * frac
        ),
    );
}

struct Trained {
    gcn: Checkpoint,
    baseline: Checkpoint,
    dataset: sched_perf::dataset::Dataset,
    seconds: f64,
}

/// The default dataset and both models trained on it with the default
/// configuration, shared by criteria 5 and 6.
fn trained() -> &'static Trained {
    static TRAINED: OnceLock<Trained> = OnceLock::new();
    TRAINED.get_or_init(|| {
        let start = Instant::now();
        let dataset = generate_dataset(&DatasetConfig::default()).unwrap();
        let config = TrainConfig::default();
        let hash = config.hash();
        let gcn = train(
            ModelParams::init(Architecture::default(), config.seed),
            &dataset,
            &config,
        )
        .unwrap();
        let baseline = train(
            BaselineParams::init(BaselineArchitecture::default(), config.seed),
            &dataset,
            &config,
        )
        .unwrap();
        Trained {
            gcn: Checkpoint::new(ModelState::Gcn(gcn.model), gcn.norm, hash.clone(), gcn.best_epoch),
            baseline: Checkpoint::new(
                ModelState::Baseline(baseline.model),
                baseline.norm,
                hash,
                baseline.best_epoch,
            ),
            dataset,
            seconds: start.elapsed().as_secs_f64(),
        }
    })
}

#[test]
fn criterion_5_end_to_end_learnability() {
    let t = trained();
    let report = evaluate(&t.gcn, &t.dataset, Split::Eval, Some(&t.baseline)).unwrap();
    let g = &report.model.metrics;
    let b = &report.baseline.as_ref().unwrap().metrics;
    let pass = g.r_squared >= 0.90
        && g.mean_pct_error <= 15.0
        && g.r_squared > b.r_squared
        && g.mean_pct_error < b.mean_pct_error
        && TrainConfig::default().epochs <= 200
        && t.seconds <= 1800.0;
    verdict(
        5,
        pass,
        &format!(
            "eval n={}: GCN R2 {:.3} mean err {:.2}% (need >= 0.90, <= 15%); MLP R2 {:.3} mean err {:.2}%; {} epochs, {:.0}s",
            g.n_samples,
            g.r_squared,
            g.mean_pct_error,
            b.r_squared,
            b.mean_pct_error,
            TrainConfig::default().epochs,
            t.seconds
        ),
    );
}

#[test]
fn criterion_6_ranking_on_held_out_pipelines() {
    let t = trained();
    let mut accuracies = Vec::new();
    for seed in [101, 102, 103, 104, 105] {
        let held_out = generate_dataset(&DatasetConfig {
            num_pipelines: 9,
            schedules_per_pipeline: 50,
            seed,
            ..DatasetConfig::default()
        })
        .unwrap();
        let samples: Vec<_> = held_out.samples.iter().collect();
        let predictions = t.gcn.predict(&samples).unwrap();
        let report = pairwise_ranking(&ranking_groups(&samples, &predictions));
        assert_eq!(report.groups.len(), 9);
        accuracies.push(report.average_pct_correct);
    }
    let passing = accuracies.iter().filter(|&&a| a >= 70.0).count();
    let mean = accuracies.iter().sum::<f64>() / accuracies.len() as f64;
    let listed: Vec<String> = accuracies.iter().map(|a| format!("{a:.1}")).collect();
    verdict(
        6,
        passing >= 4,
        &format!(
            "9 held-out pipelines x 50 schedules per seed: accuracy [{}]%, {passing}/5 seeds >= 70% (need 4), mean {mean:.1}% (target 75%)",
            listed.join(", ")
        ),
    );
}

fn run_cli(args: &[&str]) {
    let cli = <Cli as clap::Parser>::try_parse_from(std::iter::once("sched-perf").chain(args.iter().copied())).unwrap();
    run(&cli).unwrap();
}

fn pipeline_hashes(dir: &Path) -> [String; 3] {
    let p = |name: &str| dir.join(name).to_str().unwrap().to_string();
    let (data, ckpt, report) = (p("data.jsonl"), p("model.json"), p("report.json"));
    run_cli(&[
        "gen",
        "--pipelines",
        "8",
        "--schedules-per",
        "6",
        "--seed",
        "7",
        "--eval-fraction",
        "0.25",
        "--out",
        &data,
        "--manifest",
        &p("gen.manifest.json"),
    ]);
    run_cli(&[
        "train",
        "--data",
        &data,
        "--out",
        &ckpt,
        "--epochs",
        "2",
        "--batch",
        "8",
        "--seed",
        "3",
        "--manifest",
        &p("train.manifest.json"),
    ]);
    run_cli(&[
        "eval",
        "--ckpt",
        &ckpt,
        "--data",
        &data,
        "--split",
        "eval",
        "--out",
        &report,
        "--manifest",
        &p("eval.manifest.json"),
    ]);
    [data, ckpt, report].map(|f| sched_perf::hash_bytes(&std::fs::read(f).unwrap()))
}

#[test]
fn criterion_7_determinism() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let first = pipeline_hashes(a.path());
    let second = pipeline_hashes(b.path());
    let short: Vec<String> = first.iter().map(|h| h[..12].to_string()).collect();
    verdict(
        7,
        first == second,
        &format!(
            "gen -> train -> eval twice: dataset/checkpoint/report hashes {short:?} identical = {}",
            first == second
        ),
    );
}

#[test]
fn criterion_8_metric_oracles() {
    let mut failures = Vec::new();
    let mut expect = |name: &str, ok: bool| {
        if !ok {
            failures.push(name.to_string());
        }
    };

    expect(
        "percent errors of exact predictions",
        percent_errors(&[3.0, 8.0], &[3.0, 8.0]).unwrap() == (0.0, 0.0),
    );
    expect(
        "percent errors {110} vs {100}",
        percent_errors(&[110.0], &[100.0]).unwrap() == (10.0, 10.0),
    );
    // 100*10/100 = 10 and 100*50/50 = 100.
    let e = [100.0 * 10.0 / 100.0, 100.0 * 50.0 / 50.0];
    expect(
        "percent errors {110,100} vs {100,50}",
        percent_errors(&[110.0, 100.0], &[100.0, 50.0]).unwrap() == ((e[0] + e[1]) / 2.0, e[1]),
    );

    let truths = [1.0, 2.0, 3.0];
    expect("R2 of perfect predictions", r_squared(&truths, &truths).unwrap() == 1.0);
    expect(
        "R2 of the mean predictor",
        r_squared(&[2.0, 2.0, 2.0], &truths).unwrap() == 0.0,
    );
    // SS_res = 1, SS_tot = 2.
    expect(
        "R2 {1,2,4} vs {1,2,3}",
        r_squared(&[1.0, 2.0, 4.0], &truths).unwrap() == 1.0 - 1.0 / 2.0,
    );

    let g = rank_group(0, &[(3.0, 1.0), (4.0, 2.0)]);
    expect("ranking 1/1", (g.n_correct, g.n_pairs) == (1, 1));
    let g = rank_group(0, &[(3.0, 1.0), (2.0, 2.0), (1.0, 3.0)]);
    expect("ranking 0/3", (g.n_correct, g.n_pairs) == (0, 3));
    let g = rank_group(0, &[(1.0, 1.0), (2.0, 2.0), (4.0, 3.0), (3.0, 4.0)]);
    expect(
        "ranking 5/6",
        (g.n_correct, g.n_pairs) == (5, 6) && g.pct_correct == 100.0 * 5.0 / 6.0,
    );

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let transforms: [fn(f64) -> f64; 4] = [|x| 3.0 * x + 7.0, |x| x * x * x + x, |x| (x / 4.0).exp(), |x| x.atan()];
    let mut changed = 0;
    for trial in 0..1000 {
        let n = rng.gen_range(2..12);
        let pairs: Vec<(f64, f64)> = (0..n)
            .map(|_| (rng.gen_range(-5.0..5.0), f64::from(rng.gen_range(0..6))))
            .collect();
        let f = transforms[trial % transforms.len()];
        let mapped: Vec<(f64, f64)> = pairs.iter().map(|&(p, t)| (f(p), t)).collect();
        let a = rank_group(0, &pairs);
        let b = rank_group(0, &mapped);
        if (a.n_pairs, a.n_correct) != (b.n_pairs, b.n_correct) {
            changed += 1;
        }
    }
    expect("ranking invariant under monotone transforms", changed == 0);

    let detail = if failures.is_empty() {
        "all listed examples exact; ranking unchanged under monotone transforms in 1000/1000 trials".to_string()
    } else {
        format!("failed: {}", failures.join("; "))
    };
    verdict(8, failures.is_empty(), &detail);
}
