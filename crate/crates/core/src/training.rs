//! Loss, optimizer and training loop.

use std::collections::HashMap;

use ndarray::Array1;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, ScheduledSample, Split};
use crate::error::{Error, Result};
use crate::features::NormStats;
use crate::metrics::r_squared;
use crate::model::{Batch, PreparedSample, Regressor};
use crate::synth::rng_for;

/// Components of the per-sample loss `xi * alpha * beta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub xi: f64,
    pub alpha: f64,
    pub beta: f64,
    pub loss: f64,
    /// Derivative of `loss` with respect to the prediction.
    pub dloss: f64,
}

/// Prediction-error term of the loss.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum XiMode {
    /// `|yhat / mean - 1|`.
    #[default]
    Relative,
    /// `|yhat / mean|`, minimized by predicting zero.
    Literal,
}

/// Loss terms from summary statistics of a sample's measurements.
pub fn loss_terms(yhat: f64, mean: f64, std: f64, best: f64, beta_epsilon: f64, mode: XiMode) -> Result<LossTerms> {
    if !(mean > 0.0) || !(best > 0.0) {
        return Err(Error::Invalid(format!(
            "loss needs positive run times (mean {mean}, best {best})"
        )));
    }
    if !(yhat > 0.0) || !yhat.is_finite() {
        return Err(Error::Invalid(format!("prediction must be positive, got {yhat}")));
    }
    let alpha = best / mean;
    let beta = 1.0 / std.max(beta_epsilon * mean);
    let (xi, dxi) = match mode {
        XiMode::Relative => {
            let d = (yhat - mean) / mean;
            (d.abs(), d.signum() * f64::from(d != 0.0) / mean)
        }
        XiMode::Literal => ((yhat / mean).abs(), 1.0 / mean),
    };
    Ok(LossTerms {
        xi,
        alpha,
        beta,
        loss: xi * alpha * beta,
        dloss: dxi * alpha * beta,
    })
}

/// Loss of one prediction for `sample`, given the best (smallest) mean run
/// time among its pipeline's schedules.
pub fn compute_loss(
    yhat: f64,
    sample: &ScheduledSample,
    best: f64,
    beta_epsilon: f64,
    mode: XiMode,
) -> Result<LossTerms> {
    if sample.measurements.is_empty() {
        return Err(Error::Invalid("sample has no measurements".into()));
    }
    if sample.measurements.iter().any(|&m| !(m > 0.0)) {
        return Err(Error::Invalid("non-positive measurement".into()));
    }
    loss_terms(
        yhat,
        sample.mean_runtime(),
        sample.std_runtime(),
        best,
        beta_epsilon,
        mode,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub beta_epsilon: f64,
    pub adagrad_epsilon: f64,
    pub xi: XiMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.0075,
            weight_decay: 0.0001,
            epochs: 40,
            batch_size: 32,
            seed: 1,
            beta_epsilon: 1e-3,
            adagrad_epsilon: 1e-10,
            xi: XiMode::Relative,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            ("learning_rate", self.learning_rate),
            ("weight_decay", self.weight_decay),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!(
                    "{name} must be finite and non-negative, got {v}"
                )));
            }
        }
        for (name, v) in [
            ("beta_epsilon", self.beta_epsilon),
            ("adagrad_epsilon", self.adagrad_epsilon),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        Ok(())
    }

    pub fn hash(&self) -> String {
        crate::hash_json(self)
    }
}

/// Adagrad with L2 weight decay folded into the gradient.
#[derive(Debug, Clone)]
pub struct Adagrad {
    accumulators: Vec<Vec<f64>>,
}

impl Adagrad {
    pub fn new<M: Regressor>(model: &M) -> Self {
        Self {
            accumulators: model.learnables().iter().map(|(_, d, _)| vec![0.0; d.len()]).collect(),
        }
    }

    pub fn accumulators(&self) -> &[Vec<f64>] {
        &self.accumulators
    }

    pub fn step<M: Regressor>(&mut self, model: &mut M, grads: &M, config: &TrainConfig) -> Result<()> {
        let g = grads.learnables();
        let params = model.learnables_mut();
        if g.len() != params.len() || params.len() != self.accumulators.len() {
            return Err(Error::dim("optimizer tensors", self.accumulators.len(), params.len()));
        }
        for (((theta, decay), (_, grad, _)), acc) in params.into_iter().zip(&g).zip(&mut self.accumulators) {
            let wd = if decay { config.weight_decay } else { 0.0 };
            adagrad_step(theta, grad, acc, wd, config.learning_rate, config.adagrad_epsilon)?;
        }
        Ok(())
    }
}

/// One Adagrad update of a flat tensor.
pub fn adagrad_step(
    theta: &mut [f64],
    grad: &[f64],
    acc: &mut [f64],
    weight_decay: f64,
    learning_rate: f64,
    epsilon: f64,
) -> Result<()> {
    if theta.len() != grad.len() || theta.len() != acc.len() {
        return Err(Error::dim(
            "optimizer tensor length",
            theta.len(),
            grad.len().min(acc.len()),
        ));
    }
    for ((t, &g), a) in theta.iter_mut().zip(grad).zip(acc.iter_mut()) {
        let g = g + weight_decay * *t;
        *a += g * g;
        *t -= learning_rate * g / (a.sqrt() + epsilon);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub eval_loss: Option<f64>,
    pub eval_r2: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<M> {
    /// Parameters of the epoch with the lowest eval loss (train loss when
    /// there is no eval split).
    pub model: M,
    pub norm: NormStats,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
}

/// Best (smallest) mean run time per pipeline.
pub fn best_runtimes<'a>(samples: impl IntoIterator<Item = &'a PreparedSample>) -> HashMap<u64, f64> {
    let mut best = HashMap::new();
    for s in samples {
        let e = best.entry(s.pipeline_id).or_insert(f64::INFINITY);
        if s.mean_runtime < *e {
            *e = s.mean_runtime;
        }
    }
    best
}

/// Fits normalization on the training split.
pub fn fit_norm(dataset: &Dataset) -> Result<NormStats> {
    let train = dataset.split(Split::Train);
    NormStats::fit(train.iter().map(|s| (s.invariant.view(), s.dependent.view())))
}

pub fn prepare(samples: &[&ScheduledSample], norm: &NormStats) -> Result<Vec<PreparedSample>> {
    samples.par_iter().map(|s| PreparedSample::new(s, norm)).collect()
}

/// Eval-mode predictions in chunks of `chunk` graphs, in input order.
pub fn predict_all<M: Regressor>(model: &M, samples: &[PreparedSample], chunk: usize) -> Result<Vec<f64>> {
    let parts: Vec<Vec<f64>> = samples
        .par_chunks(chunk.max(1))
        .map(|c| Ok(model.predict(&Batch::from_samples(c)?)?.to_vec()))
        .collect::<Result<_>>()?;
    Ok(parts.concat())
}

/// Mean loss of eval-mode predictions.
pub fn mean_loss(
    predictions: &[f64],
    samples: &[PreparedSample],
    best: &HashMap<u64, f64>,
    config: &TrainConfig,
) -> Result<f64> {
    let mut total = 0.0;
    for (&y, s) in predictions.iter().zip(samples) {
        total += loss_terms(
            y,
            s.mean_runtime,
            s.std_runtime,
            best[&s.pipeline_id],
            config.beta_epsilon,
            config.xi,
        )?
        .loss;
    }
    Ok(total / samples.len().max(1) as f64)
}

/// One optimizer step on a batch; returns the mean batch loss.
pub fn train_step<M: Regressor>(
    model: &mut M,
    optimizer: &mut Adagrad,
    samples: &[&PreparedSample],
    best: &HashMap<u64, f64>,
    config: &TrainConfig,
) -> Result<f64> {
    let batch = Batch::from_samples(samples.iter().copied())?;
    let (y, trace) = model.forward_train(&batch)?;
    let n = samples.len() as f64;
    let mut dy = Array1::zeros(samples.len());
    let mut total = 0.0;
    for (k, s) in samples.iter().enumerate() {
        let t = loss_terms(
            y[k],
            s.mean_runtime,
            s.std_runtime,
            best[&s.pipeline_id],
            config.beta_epsilon,
            config.xi,
        )?;
        total += t.loss;
        dy[k] = t.dloss / n;
    }
    let grads = model.backward(&trace, dy.view())?;
    model.update_running_stats(&trace);
    optimizer.step(model, &grads, config)?;
    Ok(total / n)
}

/// Trains `model` on the train split of `dataset`, selecting the epoch with
/// the lowest eval loss.
pub fn train<M: Regressor>(model: M, dataset: &Dataset, config: &TrainConfig) -> Result<TrainOutcome<M>> {
    train_with_callback(model, dataset, config, |_| {})
}

pub fn train_with_callback<M: Regressor>(
    mut model: M,
    dataset: &Dataset,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome<M>> {
    config.validate()?;
    let train_pipelines = dataset.pipeline_ids(Split::Train);
    if train_pipelines.len() < 2 {
        return Err(Error::Invalid(format!(
            "training needs at least 2 training pipelines, found {}",
            train_pipelines.len()
        )));
    }
    let norm = fit_norm(dataset)?;
    let train_set = prepare(&dataset.split(Split::Train), &norm)?;
    let eval_set = prepare(&dataset.split(Split::Eval), &norm)?;
    let mut best = best_runtimes(&train_set);
    best.extend(best_runtimes(&eval_set));

    let mut optimizer = Adagrad::new(&model);
    let mut rng = rng_for(config.seed, 6);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut log = Vec::with_capacity(config.epochs);
    let mut best_model = model.clone();
    let mut best_score = f64::INFINITY;
    let mut best_epoch = 0;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let samples: Vec<&PreparedSample> = chunk.iter().map(|&i| &train_set[i]).collect();
            sum += train_step(&mut model, &mut optimizer, &samples, &best, config)?;
            batches += 1;
        }
        let train_loss = sum / batches as f64;
        if !train_loss.is_finite() {
            return Err(Error::Internal(format!("training diverged at epoch {epoch}")));
        }
        let (eval_loss, eval_r2) = if eval_set.is_empty() {
            (None, None)
        } else {
            let preds = predict_all(&model, &eval_set, 256)?;
            let truths: Vec<f64> = eval_set.iter().map(|s| s.mean_runtime).collect();
            (
                Some(mean_loss(&preds, &eval_set, &best, config)?),
                r_squared(&preds, &truths).ok(),
            )
        };
        let entry = EpochLog {
            epoch,
            train_loss,
            eval_loss,
            eval_r2,
        };
        log::info!(
            "epoch {epoch}: train loss {train_loss:.6}, eval loss {}, eval R² {}",
            eval_loss.map_or("-".into(), |v| format!("{v:.6}")),
            eval_r2.map_or("-".into(), |v| format!("{v:.4}"))
        );
        on_epoch(&entry);
        let score = eval_loss.unwrap_or(train_loss);
        if score < best_score {
            best_score = score;
            best_epoch = epoch;
            best_model = model.clone();
        }
        log.push(entry);
    }
    Ok(TrainOutcome {
        model: best_model,
        norm,
        log,
        best_epoch,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adagrad_first_step() {
        let mut theta = vec![1.0, -2.0];
        let mut acc = vec![0.0, 0.0];
        adagrad_step(&mut theta, &[1.0, 1.0], &mut acc, 0.0, 0.0075, 1e-10).unwrap();
        assert!((theta[0] - (1.0 - 0.0075)).abs() < 1e-12);
        assert!((theta[1] - (-2.0 - 0.0075)).abs() < 1e-12);
        assert_eq!(acc, vec![1.0, 1.0]);
    }

    #[test]
    fn adagrad_zero_gradient_no_decay_is_noop() {
        let mut theta = vec![0.3, -0.7];
        let mut acc = vec![0.0; 2];
        adagrad_step(&mut theta, &[0.0, 0.0], &mut acc, 0.0, 0.0075, 1e-10).unwrap();
        assert_eq!(theta, vec![0.3, -0.7]);
    }

    #[test]
    fn adagrad_shape_mismatch() {
        assert!(adagrad_step(&mut [0.0], &[0.0, 1.0], &mut [0.0], 0.0, 0.1, 1e-10).is_err());
    }

    #[test]
    fn literal_xi() {
        let t = loss_terms(12.0, 10.0, 0.0, 5.0, 1e-3, XiMode::Literal).unwrap();
        assert!((t.xi - 1.2).abs() < 1e-15);
    }

    #[test]
    fn rejects_non_positive_prediction() {
        assert!(loss_terms(0.0, 10.0, 0.0, 5.0, 1e-3, XiMode::Relative).is_err());
    }
}
