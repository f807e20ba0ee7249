//! Line-delimited JSON dataset of scheduled samples.
//!
//! Line 1 is a header:
//! `{"format":"sched-perf-dataset","format_version":1,"feature_widths":[320,94],"N":10,"generator_config_hash":"<sha256>","num_records":R}`.
//! Every following line is one record:
//! `{"pipeline_id","schedule_id","split_tag","graph":{"num_nodes","edges"},"invariant_features","dependent_features","measurements"}`.
//! Feature rows are written without trailing zeros; readers pad them back to
//! the header widths. Files carry no timestamps, so equal inputs give equal
//! bytes.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{featurize, DEPENDENT_WIDTH, INVARIANT_WIDTH};
use crate::graph::PipelineGraph;
use crate::synth::{
    derive_seed, enumerate_schedules, oracle_runtime, rng_for, sample_pipeline, AnalyticOracle, GeneratorConfig,
    NoiseConfig, OracleConfig,
};

pub const DATASET_FORMAT: &str = "sched-perf-dataset";
pub const DATASET_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Eval,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "eval" => Ok(Split::Eval),
            other => Err(Error::Config(format!("unknown split {other:?}"))),
        }
    }
}

/// One (pipeline, schedule) pair with its per-stage features and repeated
/// run-time measurements in milliseconds.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduledSample {
    pub pipeline_id: u64,
    pub schedule_id: u64,
    pub split: Split,
    pub graph: PipelineGraph,
    pub invariant: Array2<f64>,
    pub dependent: Array2<f64>,
    pub measurements: Vec<f64>,
}

impl ScheduledSample {
    pub fn validate(&self) -> Result<()> {
        let n = self.graph.num_nodes();
        if n == 0 {
            return Err(Error::Invalid("sample graph has no nodes".into()));
        }
        if self.invariant.dim() != (n, INVARIANT_WIDTH) {
            return Err(Error::dim(
                "invariant features",
                INVARIANT_WIDTH,
                self.invariant.ncols(),
            ));
        }
        if self.dependent.dim() != (n, DEPENDENT_WIDTH) {
            return Err(Error::dim(
                "dependent features",
                DEPENDENT_WIDTH,
                self.dependent.ncols(),
            ));
        }
        if self.measurements.is_empty() {
            return Err(Error::Invalid("no measurements".into()));
        }
        if self.measurements.iter().any(|&m| !(m > 0.0) || !m.is_finite()) {
            return Err(Error::Invalid("measurements must be positive".into()));
        }
        if self
            .invariant
            .iter()
            .chain(self.dependent.iter())
            .any(|x| !x.is_finite())
        {
            return Err(Error::Invalid("non-finite feature".into()));
        }
        Ok(())
    }

    /// Mean of the measurements.
    pub fn mean_runtime(&self) -> f64 {
        self.measurements.iter().sum::<f64>() / self.measurements.len() as f64
    }

    /// Population standard deviation of the measurements.
    pub fn std_runtime(&self) -> f64 {
        let m = self.mean_runtime();
        let var = self.measurements.iter().map(|x| (x - m).powi(2)).sum::<f64>() / self.measurements.len() as f64;
        var.sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub format: String,
    pub format_version: u32,
    pub feature_widths: [usize; 2],
    #[serde(rename = "N")]
    pub repeats: usize,
    pub generator_config_hash: String,
    pub num_records: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub samples: Vec<ScheduledSample>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> Vec<&ScheduledSample> {
        self.samples.iter().filter(|s| s.split == split).collect()
    }

    /// Distinct pipeline ids of a split, ascending.
    pub fn pipeline_ids(&self, split: Split) -> Vec<u64> {
        let mut ids: Vec<u64> = self.split(split).iter().map(|s| s.pipeline_id).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }
}

#[derive(Serialize)]
struct RecordOut<'a> {
    pipeline_id: u64,
    schedule_id: u64,
    split_tag: Split,
    graph: &'a PipelineGraph,
    invariant_features: Vec<&'a [f64]>,
    dependent_features: Vec<&'a [f64]>,
    measurements: &'a [f64],
}

#[derive(Deserialize)]
struct RecordIn {
    pipeline_id: u64,
    schedule_id: u64,
    split_tag: Split,
    graph: PipelineGraph,
    invariant_features: Vec<Vec<f64>>,
    dependent_features: Vec<Vec<f64>>,
    measurements: Vec<f64>,
}

fn trimmed(row: &[f64]) -> &[f64] {
    let end = row.iter().rposition(|&x| x != 0.0).map_or(0, |i| i + 1);
    &row[..end]
}

fn rows_to_array(rows: Vec<Vec<f64>>, width: usize, what: &str) -> std::result::Result<Array2<f64>, String> {
    let mut out = Array2::zeros((rows.len(), width));
    for (i, r) in rows.into_iter().enumerate() {
        if r.len() > width {
            return Err(format!("{what} row {i} has {} values, width is {width}", r.len()));
        }
        for (j, v) in r.into_iter().enumerate() {
            out[[i, j]] = v;
        }
    }
    Ok(out)
}

/// Serializes one sample as a single record line (no trailing newline).
pub fn record_to_json(sample: &ScheduledSample) -> Result<String> {
    let out = RecordOut {
        pipeline_id: sample.pipeline_id,
        schedule_id: sample.schedule_id,
        split_tag: sample.split,
        graph: &sample.graph,
        invariant_features: sample
            .invariant
            .rows()
            .into_iter()
            .map(|r| trimmed(r.to_slice().expect("standard layout")))
            .collect(),
        dependent_features: sample
            .dependent
            .rows()
            .into_iter()
            .map(|r| trimmed(r.to_slice().expect("standard layout")))
            .collect(),
        measurements: &sample.measurements,
    };
    serde_json::to_string(&out).map_err(|e| Error::Internal(e.to_string()))
}

/// Parses one record line.
pub fn record_from_json(line: &str) -> std::result::Result<ScheduledSample, String> {
    let r: RecordIn = serde_json::from_str(line).map_err(|e| e.to_string())?;
    let n = r.graph.num_nodes();
    if r.invariant_features.len() != n || r.dependent_features.len() != n {
        return Err(format!(
            "graph has {n} nodes but {} invariant / {} dependent feature rows",
            r.invariant_features.len(),
            r.dependent_features.len()
        ));
    }
    let sample = ScheduledSample {
        pipeline_id: r.pipeline_id,
        schedule_id: r.schedule_id,
        split: r.split_tag,
        graph: r.graph,
        invariant: rows_to_array(r.invariant_features, INVARIANT_WIDTH, "invariant")?,
        dependent: rows_to_array(r.dependent_features, DEPENDENT_WIDTH, "dependent")?,
        measurements: r.measurements,
    };
    sample.validate().map_err(|e| e.to_string())?;
    Ok(sample)
}

pub fn write_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let header = serde_json::to_string(&dataset.header).map_err(|e| Error::Internal(e.to_string()))?;
    writeln!(w, "{header}").map_err(|e| Error::io(path, e))?;
    for s in &dataset.samples {
        writeln!(w, "{}", record_to_json(s)?).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a dataset file. A file whose first line is a record rather than a
/// header is accepted as a headerless record list.
pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let fmt = |record: usize, message: String| Error::Format {
        path: path.to_path_buf(),
        record,
        message,
    };
    let mut header: Option<DatasetHeader> = None;
    let mut samples = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        if i == 0 {
            let probe: serde_json::Value = serde_json::from_str(&line).map_err(|e| fmt(0, e.to_string()))?;
            if probe.get("format").is_some() {
                let h: DatasetHeader = serde_json::from_value(probe).map_err(|e| fmt(0, e.to_string()))?;
                check_header(path, &h)?;
                header = Some(h);
                continue;
            }
        }
        samples.push(record_from_json(&line).map_err(|e| fmt(i, e))?);
    }
    let header = match header {
        Some(h) => {
            if h.num_records != samples.len() {
                return Err(fmt(
                    samples.len(),
                    format!("header promises {} records, found {}", h.num_records, samples.len()),
                ));
            }
            h
        }
        None => DatasetHeader {
            format: DATASET_FORMAT.into(),
            format_version: DATASET_VERSION,
            feature_widths: [INVARIANT_WIDTH, DEPENDENT_WIDTH],
            repeats: samples.first().map_or(0, |s| s.measurements.len()),
            generator_config_hash: String::new(),
            num_records: samples.len(),
        },
    };
    Ok(Dataset { header, samples })
}

fn check_header(path: &Path, h: &DatasetHeader) -> Result<()> {
    if h.format != DATASET_FORMAT {
        return Err(Error::Format {
            path: path.to_path_buf(),
            record: 0,
            message: format!("unknown format {:?}", h.format),
        });
    }
    if h.format_version != DATASET_VERSION {
        return Err(Error::Incompatible {
            what: "dataset version",
            left: format!("file v{}", h.format_version),
            right: format!("supported v{DATASET_VERSION}"),
        });
    }
    if h.feature_widths != [INVARIANT_WIDTH, DEPENDENT_WIDTH] {
        return Err(Error::Incompatible {
            what: "feature widths",
            left: format!("file {:?}", h.feature_widths),
            right: format!("model [{INVARIANT_WIDTH}, {DEPENDENT_WIDTH}]"),
        });
    }
    Ok(())
}

/// Everything that determines a generated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub generator: GeneratorConfig,
    pub oracle: OracleConfig,
    pub noise: NoiseConfig,
    pub num_pipelines: usize,
    pub schedules_per_pipeline: usize,
    pub eval_fraction: f64,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            generator: GeneratorConfig::default(),
            oracle: OracleConfig::default(),
            noise: NoiseConfig::default(),
            num_pipelines: 200,
            schedules_per_pipeline: 50,
            eval_fraction: 0.1,
            seed: 1,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        if self.num_pipelines == 0 || self.schedules_per_pipeline == 0 {
            return Err(Error::Config(
                "pipelines and schedules per pipeline must be >= 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.eval_fraction) {
            return Err(Error::Config("eval fraction must be in [0, 1)".into()));
        }
        if !(self.noise.sigma >= 0.0) || self.noise.repeats == 0 {
            return Err(Error::Config("noise sigma must be >= 0 and repeats >= 1".into()));
        }
        Ok(())
    }

    pub fn hash(&self) -> String {
        crate::hash_json(self)
    }

    /// Number of evaluation pipelines: `round(eval_fraction * P)`, at least
    /// one when `P >= 2` and the fraction is positive.
    pub fn num_eval_pipelines(&self) -> usize {
        if self.eval_fraction == 0.0 || self.num_pipelines < 2 {
            return 0;
        }
        ((self.eval_fraction * self.num_pipelines as f64).round() as usize).clamp(1, self.num_pipelines - 1)
    }
}

/// Generates pipelines, schedules and measurements, featurizes them and tags
/// each pipeline's samples with a split. All schedules of a pipeline share
/// one split.
pub fn generate_dataset(config: &DatasetConfig) -> Result<Dataset> {
    config.validate()?;
    let oracle = AnalyticOracle::new(config.oracle.clone());
    let mut ids: Vec<u64> = (0..config.num_pipelines as u64).collect();
    ids.shuffle(&mut rng_for(config.seed, 3));
    let mut is_eval = vec![false; config.num_pipelines];
    for &id in &ids[..config.num_eval_pipelines()] {
        is_eval[id as usize] = true;
    }

    let per_pipeline: Vec<Vec<ScheduledSample>> = (0..config.num_pipelines as u64)
        .into_par_iter()
        .map(|pid| -> Result<Vec<ScheduledSample>> {
            let pseed = derive_seed(config.seed, pid);
            let pipeline = sample_pipeline(&config.generator, pseed)?;
            let schedules = enumerate_schedules(&pipeline, config.schedules_per_pipeline, derive_seed(pseed, 1))?;
            let split = if is_eval[pid as usize] {
                Split::Eval
            } else {
                Split::Train
            };
            schedules
                .iter()
                .enumerate()
                .map(|(sid, schedule)| {
                    let (invariant, dependent) = featurize(&pipeline, schedule, &config.oracle.machine)?;
                    let measurements = oracle_runtime(
                        &oracle,
                        &pipeline,
                        schedule,
                        &config.noise,
                        derive_seed(pseed ^ 0x5eed, sid as u64),
                    )?;
                    Ok(ScheduledSample {
                        pipeline_id: pid,
                        schedule_id: sid as u64,
                        split,
                        graph: pipeline.graph.clone(),
                        invariant,
                        dependent,
                        measurements,
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    let samples: Vec<ScheduledSample> = per_pipeline.into_iter().flatten().collect();
    Ok(Dataset {
        header: DatasetHeader {
            format: DATASET_FORMAT.into(),
            format_version: DATASET_VERSION,
            feature_widths: [INVARIANT_WIDTH, DEPENDENT_WIDTH],
            repeats: config.noise.repeats,
            generator_config_hash: config.hash(),
            num_records: samples.len(),
        },
        samples,
    })
}
