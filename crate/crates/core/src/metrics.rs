//! Accuracy metrics: percentage error, coefficient of determination and
//! pairwise ranking within pipelines.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mean_pct_error: f64,
    pub max_pct_error: f64,
    pub r_squared: f64,
    pub n_samples: usize,
}

/// Mean and max of `100 |yhat - y| / y`.
pub fn percent_errors(predictions: &[f64], truths: &[f64]) -> Result<(f64, f64)> {
    if predictions.len() != truths.len() {
        return Err(Error::dim("prediction count", truths.len(), predictions.len()));
    }
    if truths.is_empty() {
        return Err(Error::Invalid("percent error of an empty set".into()));
    }
    if truths.iter().any(|&t| !(t > 0.0)) {
        return Err(Error::Invalid("percent error needs positive truths".into()));
    }
    let mut sum = 0.0;
    let mut max: f64 = 0.0;
    for (&p, &t) in predictions.iter().zip(truths) {
        let e = 100.0 * (p - t).abs() / t;
        sum += e;
        max = max.max(e);
    }
    Ok((sum / truths.len() as f64, max))
}

/// `1 - SS_res / SS_tot`.
pub fn r_squared(predictions: &[f64], truths: &[f64]) -> Result<f64> {
    if predictions.len() != truths.len() {
        return Err(Error::dim("prediction count", truths.len(), predictions.len()));
    }
    if truths.len() < 2 {
        return Err(Error::Undefined("R² needs at least two samples".into()));
    }
    let mean = truths.iter().sum::<f64>() / truths.len() as f64;
    let ss_tot: f64 = truths.iter().map(|t| (t - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(Error::Undefined("R² of constant truths (zero variance)".into()));
    }
    let ss_res: f64 = predictions.iter().zip(truths).map(|(p, t)| (t - p).powi(2)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

pub fn metrics(predictions: &[f64], truths: &[f64]) -> Result<Metrics> {
    let (mean_pct_error, max_pct_error) = percent_errors(predictions, truths)?;
    Ok(Metrics {
        mean_pct_error,
        max_pct_error,
        r_squared: r_squared(predictions, truths)?,
        n_samples: truths.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRanking {
    pub group_id: u64,
    pub n_pairs: usize,
    pub n_correct: usize,
    pub pct_correct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingReport {
    pub groups: Vec<GroupRanking>,
    /// Unweighted mean of the per-group percentages.
    pub average_pct_correct: f64,
    pub skipped_groups: Vec<u64>,
}

/// Pairwise ordering accuracy of one group of `(prediction, truth)` pairs.
/// Truth ties are dropped; prediction ties count as wrong.
pub fn rank_group(group_id: u64, pairs: &[(f64, f64)]) -> GroupRanking {
    let mut n_pairs = 0;
    let mut n_correct = 0;
    for a in 0..pairs.len() {
        for b in a + 1..pairs.len() {
            let (pa, ta) = pairs[a];
            let (pb, tb) = pairs[b];
            if ta == tb {
                continue;
            }
            n_pairs += 1;
            if pa != pb && (pa < pb) == (ta < tb) {
                n_correct += 1;
            }
        }
    }
    let pct_correct = if n_pairs == 0 {
        0.0
    } else {
        100.0 * n_correct as f64 / n_pairs as f64
    };
    GroupRanking {
        group_id,
        n_pairs,
        n_correct,
        pct_correct,
    }
}

/// Ranks every group with at least two schedules; smaller groups are listed
/// in `skipped_groups`.
pub fn pairwise_ranking(groups: &[(u64, Vec<(f64, f64)>)]) -> RankingReport {
    let mut ranked = Vec::new();
    let mut skipped = Vec::new();
    for (id, pairs) in groups {
        if pairs.len() < 2 {
            log::warn!("ranking: group {id} has {} schedule(s), skipped", pairs.len());
            skipped.push(*id);
            continue;
        }
        ranked.push(rank_group(*id, pairs));
    }
    let average = if ranked.is_empty() {
        0.0
    } else {
        ranked.iter().map(|g| g.pct_correct).sum::<f64>() / ranked.len() as f64
    };
    RankingReport {
        groups: ranked,
        average_pct_correct: average,
        skipped_groups: skipped,
    }
}
