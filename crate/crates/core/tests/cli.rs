use std::path::Path;
use std::process::{Command, Output};

use sched_perf::dataset::{read_dataset, record_to_json, ScheduledSample};
use sched_perf::graph::PipelineGraph;
use serde_json::Value;

fn sched_perf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sched-perf"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = sched_perf(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_string()
}

fn manifest(file: &str) -> Value {
    serde_json::from_str(&std::fs::read_to_string(file).unwrap()).unwrap()
}

fn gen(dir: &Path, name: &str, pipelines: &str, schedules: &str) -> String {
    let data = path(dir, name);
    let m = path(dir, &format!("{name}.manifest.json"));
    ok(&[
        "gen",
        "--pipelines",
        pipelines,
        "--schedules-per",
        schedules,
        "--seed",
        "1",
        "--eval-fraction",
        "0.25",
        "--out",
        &data,
        "--manifest",
        &m,
    ]);
    data
}

#[test]
fn gen_writes_requested_records_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), "a.jsonl", "10", "5");
    let dataset = read_dataset(Path::new(&data)).unwrap();
    assert_eq!(dataset.samples.len(), 50);
    assert_eq!(dataset.header.num_records, 50);

    let m = manifest(&format!("{data}.manifest.json"));
    assert_eq!(m["command"], "gen");
    assert_eq!(m["seed"], 1);
    assert_eq!(m["config"]["num_pipelines"], 10);
    assert_eq!(m["outputs"][0]["sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn identical_invocations_give_identical_dataset_hash() {
    let dir = tempfile::tempdir().unwrap();
    let a = gen(dir.path(), "a.jsonl", "4", "3");
    let b = gen(dir.path(), "b.jsonl", "4", "3");
    let hash = |d: &str| manifest(&format!("{d}.manifest.json"))["outputs"][0]["sha256"].clone();
    assert_eq!(hash(&a), hash(&b));
}

#[test]
fn missing_out_is_a_usage_error() {
    let out = sched_perf(&["gen", "--pipelines", "2", "--schedules-per", "2"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--out"));
}

#[test]
fn invalid_config_exits_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = sched_perf(&[
        "gen",
        "--pipelines",
        "0",
        "--schedules-per",
        "2",
        "--out",
        &path(dir.path(), "x"),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.path().join("x").exists());
}

#[test]
fn version_names_format_versions() {
    let out = ok(&["--version"]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains(env!("CARGO_PKG_VERSION")));
    assert!(
        text.contains("dataset") && text.contains("checkpoint") && text.contains("report"),
        "{text}"
    );
}

#[test]
fn train_eval_rank_predict_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = gen(d, "data.jsonl", "8", "6");
    let ckpt = path(d, "gcn.json");
    let base = path(d, "mlp.json");
    let log = path(d, "train.jsonl");
    ok(&[
        "train", "--data", &data, "--out", &ckpt, "--epochs", "2", "--batch", "8", "--log", &log,
    ]);
    ok(&[
        "train", "--data", &data, "--out", &base, "--model", "baseline", "--epochs", "2", "--batch", "8",
    ]);
    assert_eq!(std::fs::read_to_string(&log).unwrap().lines().count(), 2);

    let report = path(d, "report.json");
    ok(&[
        "eval",
        "--ckpt",
        &ckpt,
        "--data",
        &data,
        "--split",
        "eval",
        "--baseline",
        &base,
        "--out",
        &report,
    ]);
    let r: Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(r["split"], "eval");
    assert_eq!(r["model"]["kind"], "gcn");
    assert_eq!(r["baseline"]["kind"], "baseline");
    assert_eq!(r["model"]["ranking"]["groups"].as_array().unwrap().len(), 2);

    let out = ok(&["rank", "--ckpt", &ckpt, "--data", &data, "--group-by", "pipeline"]);
    let ranking: Value = serde_json::from_slice(&out.stdout).unwrap();
    let avg = ranking["average_pct_correct"].as_f64().unwrap();
    assert!((0.0..=100.0).contains(&avg));
    assert!(String::from_utf8_lossy(&out.stderr).contains("\"command\": \"rank\""));

    // A record whose graph is a single node.
    let dataset = read_dataset(Path::new(&data)).unwrap();
    let s = &dataset.samples[0];
    let single = ScheduledSample {
        graph: PipelineGraph::new(1, vec![]).unwrap(),
        invariant: s.invariant.slice(ndarray::s![0..1, ..]).to_owned(),
        dependent: s.dependent.slice(ndarray::s![0..1, ..]).to_owned(),
        ..s.clone()
    };
    let one = path(d, "one.jsonl");
    std::fs::write(&one, record_to_json(&single).unwrap() + "\n").unwrap();
    let out = ok(&["predict", "--ckpt", &ckpt, "--data", &one]);
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 1);
    let v: Value = serde_json::from_str(lines[0]).unwrap();
    assert!(v["yhat"].as_f64().unwrap() > 0.0);
    assert_eq!(v["pipeline_id"], s.pipeline_id);
}

#[test]
fn eval_rejects_mismatched_feature_widths() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = gen(d, "data.jsonl", "6", "4");
    let ckpt = path(d, "gcn.json");
    ok(&[
        "train", "--data", &data, "--out", &ckpt, "--epochs", "1", "--batch", "8",
    ]);

    let text = std::fs::read_to_string(&data).unwrap();
    let (header, rest) = text.split_once('\n').unwrap();
    let mut h: Value = serde_json::from_str(header).unwrap();
    h["feature_widths"] = serde_json::json!([300, 94]);
    let bad = path(d, "bad.jsonl");
    std::fs::write(&bad, format!("{h}\n{rest}")).unwrap();

    let out = sched_perf(&["eval", "--ckpt", &ckpt, "--data", &bad, "--out", &path(d, "r.json")]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(
        err.contains("incompatible feature widths") && err.contains("300") && err.contains("320"),
        "{err}"
    );

    let mut c: Value = serde_json::from_str(&std::fs::read_to_string(&ckpt).unwrap()).unwrap();
    c["format_version"] = serde_json::json!(7);
    let old = path(d, "old.json");
    std::fs::write(&old, c.to_string()).unwrap();
    let out = sched_perf(&["eval", "--ckpt", &old, "--data", &data, "--out", &path(d, "r.json")]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("v7") && err.contains("v1"), "{err}");
}
