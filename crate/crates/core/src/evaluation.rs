//! Evaluation of checkpoints on a dataset split.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::dataset::{Dataset, ScheduledSample, Split};
use crate::error::{Error, Result};
use crate::metrics::{metrics, pairwise_ranking, Metrics, RankingReport};

pub const REPORT_FORMAT: &str = "sched-perf-report";
pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub kind: String,
    pub metrics: Metrics,
    pub ranking: RankingReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub format: String,
    pub format_version: u32,
    pub split: Split,
    pub n_samples: usize,
    pub model: ModelReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub baseline: Option<ModelReport>,
}

impl EvalReport {
    /// Pretty JSON; equal reports give equal bytes.
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Internal(format!("report encoding: {e}")))
    }
}

/// Predictions grouped by pipeline, as `(prediction, truth)` pairs in
/// schedule order.
pub fn ranking_groups(samples: &[&ScheduledSample], predictions: &[f64]) -> Vec<(u64, Vec<(f64, f64)>)> {
    let mut groups: BTreeMap<u64, Vec<(u64, f64, f64)>> = BTreeMap::new();
    for (s, &p) in samples.iter().zip(predictions) {
        groups
            .entry(s.pipeline_id)
            .or_default()
            .push((s.schedule_id, p, s.mean_runtime()));
    }
    groups
        .into_iter()
        .map(|(id, mut v)| {
            v.sort_by_key(|&(sid, _, _)| sid);
            (id, v.into_iter().map(|(_, p, t)| (p, t)).collect())
        })
        .collect()
}

/// Metrics and ranking of one checkpoint on `samples`.
pub fn evaluate_checkpoint(ckpt: &Checkpoint, samples: &[&ScheduledSample]) -> Result<ModelReport> {
    let predictions = ckpt.predict(samples)?;
    let truths: Vec<f64> = samples.iter().map(|s| s.mean_runtime()).collect();
    Ok(ModelReport {
        kind: ckpt.model.kind().into(),
        metrics: metrics(&predictions, &truths)?,
        ranking: pairwise_ranking(&ranking_groups(samples, &predictions)),
    })
}

pub fn evaluate(
    ckpt: &Checkpoint,
    dataset: &Dataset,
    split: Split,
    baseline: Option<&Checkpoint>,
) -> Result<EvalReport> {
    let samples = dataset.split(split);
    if samples.is_empty() {
        return Err(Error::Invalid(format!("dataset has no {split:?} samples")));
    }
    let model = evaluate_checkpoint(ckpt, &samples)?;
    let baseline = baseline.map(|b| evaluate_checkpoint(b, &samples)).transpose()?;
    Ok(EvalReport {
        format: REPORT_FORMAT.into(),
        format_version: REPORT_VERSION,
        split,
        n_samples: samples.len(),
        model,
        baseline,
    })
}
