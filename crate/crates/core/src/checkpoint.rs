//! Versioned JSON checkpoints: model tensors, normalization statistics and
//! the hash of the training configuration.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::ScheduledSample;
use crate::error::{Error, Result};
use crate::features::{NormStats, DEPENDENT_WIDTH, INVARIANT_WIDTH};
use crate::model::{BaselineParams, ModelParams, PreparedSample, Regressor};
use crate::training::predict_all;

pub const CHECKPOINT_FORMAT: &str = "sched-perf-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum ModelState {
    Gcn(ModelParams),
    Baseline(BaselineParams),
}

impl ModelState {
    pub fn kind(&self) -> &'static str {
        match self {
            ModelState::Gcn(_) => "gcn",
            ModelState::Baseline(_) => "baseline",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (inv, dep) = match self {
            ModelState::Gcn(p) => {
                p.validate()?;
                (p.arch.invariant_width, p.arch.dependent_width)
            }
            ModelState::Baseline(p) => {
                p.validate()?;
                if p.arch.input != INVARIANT_WIDTH + DEPENDENT_WIDTH {
                    return Err(Error::Incompatible {
                        what: "baseline input width",
                        left: p.arch.input.to_string(),
                        right: (INVARIANT_WIDTH + DEPENDENT_WIDTH).to_string(),
                    });
                }
                return Ok(());
            }
        };
        if (inv, dep) != (INVARIANT_WIDTH, DEPENDENT_WIDTH) {
            return Err(Error::Incompatible {
                what: "feature widths",
                left: format!("checkpoint [{inv}, {dep}]"),
                right: format!("[{INVARIANT_WIDTH}, {DEPENDENT_WIDTH}]"),
            });
        }
        Ok(())
    }

    pub fn predict(&self, samples: &[PreparedSample]) -> Result<Vec<f64>> {
        match self {
            ModelState::Gcn(p) => predict_all(p, samples, 256),
            ModelState::Baseline(p) => predict_all(p, samples, 256),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub format_version: u32,
    pub model: ModelState,
    pub norm_stats: NormStats,
    pub train_config_hash: String,
    pub best_epoch: usize,
}

impl Checkpoint {
    pub fn new(model: ModelState, norm_stats: NormStats, train_config_hash: String, best_epoch: usize) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            format_version: CHECKPOINT_VERSION,
            model,
            norm_stats,
            train_config_hash,
            best_epoch,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::Incompatible {
                what: "checkpoint format",
                left: self.format.clone(),
                right: CHECKPOINT_FORMAT.into(),
            });
        }
        if self.format_version != CHECKPOINT_VERSION {
            return Err(Error::Incompatible {
                what: "checkpoint version",
                left: format!("file v{}", self.format_version),
                right: format!("supported v{CHECKPOINT_VERSION}"),
            });
        }
        self.model.validate()?;
        self.norm_stats.validate()
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::Internal(format!("checkpoint encoding: {e}")))
    }

    pub fn from_json(text: &str, path: &Path) -> Result<Self> {
        #[derive(Deserialize)]
        struct Probe {
            format: Option<String>,
            format_version: Option<u32>,
        }
        let format_error = |message: String| Error::Format {
            path: path.to_path_buf(),
            record: 0,
            message,
        };
        // Check the version before the full decode so mismatches name both versions.
        let probe: Probe = serde_json::from_str(text).map_err(|e| format_error(e.to_string()))?;
        if probe.format.as_deref() != Some(CHECKPOINT_FORMAT) {
            return Err(Error::Incompatible {
                what: "checkpoint format",
                left: probe.format.unwrap_or_else(|| "<missing>".into()),
                right: CHECKPOINT_FORMAT.into(),
            });
        }
        if probe.format_version != Some(CHECKPOINT_VERSION) {
            return Err(Error::Incompatible {
                what: "checkpoint version",
                left: probe
                    .format_version
                    .map_or_else(|| "<missing>".into(), |v| format!("file v{v}")),
                right: format!("supported v{CHECKPOINT_VERSION}"),
            });
        }
        let ckpt: Checkpoint = serde_json::from_str(text).map_err(|e| format_error(e.to_string()))?;
        ckpt.validate()?;
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, path)
    }

    /// Normalizes `samples` with the stored statistics.
    pub fn prepare(&self, samples: &[&ScheduledSample]) -> Result<Vec<PreparedSample>> {
        crate::training::prepare(samples, &self.norm_stats)
    }

    pub fn predict(&self, samples: &[&ScheduledSample]) -> Result<Vec<f64>> {
        self.model.predict(&self.prepare(samples)?)
    }
}

/// Wraps a trained model of either kind.
pub trait IntoState: Regressor {
    fn into_state(self) -> ModelState;
}

impl IntoState for ModelParams {
    fn into_state(self) -> ModelState {
        ModelState::Gcn(self)
    }
}

impl IntoState for BaselineParams {
    fn into_state(self) -> ModelState {
        ModelState::Baseline(self)
    }
}
