//! Command-line interface: `gen`, `train`, `eval`, `rank` and `predict`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use crate::checkpoint::{Checkpoint, IntoState, CHECKPOINT_VERSION};
use crate::dataset::{generate_dataset, read_dataset, write_dataset, DatasetConfig, Split, DATASET_VERSION};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, ranking_groups, REPORT_VERSION};
use crate::metrics::pairwise_ranking;
use crate::model::{Architecture, BaselineArchitecture, BaselineParams, ModelParams};
use crate::training::{train_with_callback, EpochLog, TrainConfig, XiMode};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

fn long_version() -> &'static str {
    Box::leak(
        format!(
            "{TOOL_VERSION} (dataset format v{DATASET_VERSION}, checkpoint format v{CHECKPOINT_VERSION}, report format v{REPORT_VERSION})"
        )
        .into_boxed_str(),
    )
}

#[derive(Debug, Parser)]
#[command(name = "sched-perf", version = TOOL_VERSION, long_version = long_version(), about = "Run-time model for tensor pipeline schedules")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset.
    Gen(GenArgs),
    /// Train a model on a dataset.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset split.
    Eval(EvalArgs),
    /// Pairwise ranking accuracy per pipeline.
    Rank(RankArgs),
    /// Predict run times for every record of a dataset.
    Predict(PredictArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, default_value_t = 200)]
    pub pipelines: usize,
    #[arg(long = "schedules-per", default_value_t = 50)]
    pub schedules_per: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Relative measurement noise.
    #[arg(long, default_value_t = 0.05)]
    pub sigma: f64,
    /// Measurements per sample.
    #[arg(long, default_value_t = 10)]
    pub repeats: usize,
    #[arg(long = "eval-fraction", default_value_t = 0.1)]
    pub eval_fraction: f64,
    #[arg(long)]
    pub out: PathBuf,
    /// Manifest path (default: stderr).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Gcn,
    Baseline,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = ModelKind::Gcn)]
    pub model: ModelKind,
    #[arg(long, default_value_t = 0.0075)]
    pub lr: f64,
    #[arg(long = "weight-decay", default_value_t = 0.0001)]
    pub weight_decay: f64,
    #[arg(long, default_value_t = TrainConfig::default().epochs)]
    pub epochs: usize,
    #[arg(long, default_value_t = TrainConfig::default().batch_size)]
    pub batch: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Use `|yhat / mean|` as the error term instead of `|yhat / mean - 1|`.
    #[arg(long = "xi-literal")]
    pub xi_literal: bool,
    /// Per-epoch log as JSON lines.
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "eval")]
    pub split: Split,
    #[arg(long)]
    pub baseline: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupBy {
    Pipeline,
}

#[derive(Debug, Args)]
pub struct RankArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "eval")]
    pub split: Split,
    #[arg(long = "group-by", value_enum, default_value_t = GroupBy::Pipeline)]
    pub group_by: GroupBy,
    /// Write the report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Dataset or single-record file.
    #[arg(long)]
    pub data: PathBuf,
    /// Write predictions here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

/// Record of one invocation: resolved configuration and file hashes.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub seed: Option<u64>,
    pub config: Value,
    pub inputs: Vec<FileHash>,
    pub outputs: Vec<FileHash>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FileHash {
    pub path: String,
    pub sha256: String,
}

fn file_hash(path: &Path) -> Result<FileHash> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(FileHash {
        path: path.display().to_string(),
        sha256: crate::hash_bytes(&bytes),
    })
}

struct Invocation<'a> {
    command: &'static str,
    seed: Option<u64>,
    config: Value,
    inputs: Vec<&'a Path>,
    outputs: Vec<&'a Path>,
}

impl Invocation<'_> {
    /// Writes the manifest to `target`, or to stderr when there is none.
    fn finish(self, target: Option<PathBuf>) -> Result<RunManifest> {
        let manifest = RunManifest {
            command: self.command.into(),
            tool_version: TOOL_VERSION.into(),
            seed: self.seed,
            config: self.config,
            inputs: self.inputs.into_iter().map(file_hash).collect::<Result<_>>()?,
            outputs: self.outputs.into_iter().map(file_hash).collect::<Result<_>>()?,
        };
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Internal(e.to_string()))?;
        match target {
            Some(path) => fs::write(&path, text + "\n").map_err(|e| Error::io(path, e))?,
            None => eprintln!("{text}"),
        }
        Ok(manifest)
    }
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("serializable config")
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn cmd_gen(args: &GenArgs) -> Result<RunManifest> {
    let mut config = DatasetConfig {
        num_pipelines: args.pipelines,
        schedules_per_pipeline: args.schedules_per,
        eval_fraction: args.eval_fraction,
        seed: args.seed,
        ..DatasetConfig::default()
    };
    config.noise.sigma = args.sigma;
    config.noise.repeats = args.repeats;
    let dataset = generate_dataset(&config)?;
    write_dataset(&dataset, &args.out)?;
    log::info!("wrote {} records to {}", dataset.samples.len(), args.out.display());
    Invocation {
        command: "gen",
        seed: Some(args.seed),
        config: to_value(&config),
        inputs: vec![],
        outputs: vec![&args.out],
    }
    .finish(args.manifest.clone())
}

pub fn cmd_train(args: &TrainArgs) -> Result<RunManifest> {
    let config = TrainConfig {
        learning_rate: args.lr,
        weight_decay: args.weight_decay,
        epochs: args.epochs,
        batch_size: args.batch,
        seed: args.seed,
        xi: if args.xi_literal {
            XiMode::Literal
        } else {
            XiMode::Relative
        },
        ..TrainConfig::default()
    };
    config.validate()?;
    let dataset = read_dataset(&args.data)?;
    let mut lines = String::new();
    let record = |e: &EpochLog, lines: &mut String| {
        lines.push_str(&serde_json::to_string(e).expect("serializable log"));
        lines.push('\n');
    };
    let checkpoint = match args.model {
        ModelKind::Gcn => fit(
            ModelParams::init(Architecture::default(), args.seed),
            &dataset,
            &config,
            |e| record(e, &mut lines),
        )?,
        ModelKind::Baseline => fit(
            BaselineParams::init(BaselineArchitecture::default(), args.seed),
            &dataset,
            &config,
            |e| record(e, &mut lines),
        )?,
    };
    checkpoint.save(&args.out)?;
    if let Some(path) = &args.log {
        write_text(path, &lines)?;
    }
    let mut outputs = vec![args.out.as_path()];
    outputs.extend(args.log.as_deref());
    Invocation {
        command: "train",
        seed: Some(args.seed),
        config: json!({ "model": args.model, "train": config }),
        inputs: vec![&args.data],
        outputs,
    }
    .finish(args.manifest.clone())
}

fn fit<M: IntoState>(
    model: M,
    dataset: &crate::dataset::Dataset,
    config: &TrainConfig,
    on_epoch: impl FnMut(&EpochLog),
) -> Result<Checkpoint> {
    let outcome = train_with_callback(model, dataset, config, on_epoch)?;
    Ok(Checkpoint::new(
        outcome.model.into_state(),
        outcome.norm,
        config.hash(),
        outcome.best_epoch,
    ))
}

pub fn cmd_eval(args: &EvalArgs) -> Result<RunManifest> {
    let ckpt = Checkpoint::load(&args.ckpt)?;
    let baseline = args.baseline.as_deref().map(Checkpoint::load).transpose()?;
    let dataset = read_dataset(&args.data)?;
    let report = evaluate(&ckpt, &dataset, args.split, baseline.as_ref())?;
    write_text(&args.out, &(report.to_json()? + "\n"))?;
    let mut inputs = vec![args.ckpt.as_path(), args.data.as_path()];
    if let Some(b) = &args.baseline {
        inputs.push(b);
    }
    Invocation {
        command: "eval",
        seed: None,
        config: json!({ "split": args.split }),
        inputs,
        outputs: vec![&args.out],
    }
    .finish(args.manifest.clone())
}

pub fn cmd_rank(args: &RankArgs) -> Result<RunManifest> {
    let ckpt = Checkpoint::load(&args.ckpt)?;
    let dataset = read_dataset(&args.data)?;
    let samples = dataset.split(args.split);
    let predictions = ckpt.predict(&samples)?;
    let report = pairwise_ranking(&ranking_groups(&samples, &predictions));
    let text = serde_json::to_string_pretty(&report).map_err(|e| Error::Internal(e.to_string()))? + "\n";
    emit(args.out.as_deref(), &text)?;
    Invocation {
        command: "rank",
        seed: None,
        config: json!({ "split": args.split, "group_by": args.group_by }),
        inputs: vec![&args.ckpt, &args.data],
        outputs: args.out.iter().map(PathBuf::as_path).collect(),
    }
    .finish(args.manifest.clone())
}

pub fn cmd_predict(args: &PredictArgs) -> Result<RunManifest> {
    let ckpt = Checkpoint::load(&args.ckpt)?;
    let dataset = read_dataset(&args.data)?;
    let samples: Vec<_> = dataset.samples.iter().collect();
    let predictions = ckpt.predict(&samples)?;
    let mut text = String::new();
    for (s, y) in samples.iter().zip(&predictions) {
        let line = json!({ "pipeline_id": s.pipeline_id, "schedule_id": s.schedule_id, "yhat": y });
        text.push_str(&line.to_string());
        text.push('\n');
    }
    emit(args.out.as_deref(), &text)?;
    Invocation {
        command: "predict",
        seed: None,
        config: json!({}),
        inputs: vec![&args.ckpt, &args.data],
        outputs: args.out.iter().map(PathBuf::as_path).collect(),
    }
    .finish(args.manifest.clone())
}

fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => write_text(p, text),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())
                .and_then(|_| out.flush())
                .map_err(|e| Error::io("<stdout>", e))
        }
    }
}

pub fn run(cli: &Cli) -> Result<RunManifest> {
    match &cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Rank(a) => cmd_rank(a),
        Command::Predict(a) => cmd_predict(a),
    }
}
