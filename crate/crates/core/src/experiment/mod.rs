//! Losses, metrics, the training loop and the analysis sweeps.

pub mod metrics;
pub mod sweep;
pub mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datamodel::DataError;
use crate::diffcore::DiffError;

pub use metrics::{argmax_rows, coarse_precision, precision_at_k, regression_seconds, rmse, MetricReport, TimeDistance};
pub use sweep::{
    compare_heads, run_ablations, sweep_bins, sweep_context, SweepConfig, SweepOutput, CONTEXT_LAYERS, CONTEXT_WINDOWS,
};
pub use train::{
    default_report_bins, evaluate, evaluate_at, model_id, predict, train, train_with, validation_bins, EpochRecord, Predictions, StopReason, TrainOutcome,
};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("{predicted} predictions against {truth} true values")]
    LengthMismatch { predicted: usize, truth: usize },
    #[error("empty input: {0}")]
    Empty(String),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("{0}")]
    Unsupported(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Diff(#[from] DiffError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Decoupled L2 coefficient.
    pub weight_decay: f64,
    pub max_epochs: usize,
    /// Epochs without a new best validation score before stopping.
    pub patience: usize,
    /// Shuffling seed.
    pub seed: u64,
    /// Wall-clock cap checked after each epoch. Runs that hit it are not
    /// reproducible.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub time_limit_secs: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            learning_rate: 1e-4,
            weight_decay: 1e-4,
            max_epochs: 500,
            patience: 20,
            seed: 0,
            time_limit_secs: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: &str| Err(ExperimentError::InvalidConfig(m.into()));
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return bad("batch size, epochs and patience must be positive");
        }
        if !(self.learning_rate > 0.0) || !(self.weight_decay >= 0.0) {
            return bad("learning rate must be positive and weight decay non-negative");
        }
        if self.time_limit_secs.is_some_and(|t| !(t > 0.0)) {
            return bad("time limit must be positive");
        }
        Ok(())
    }
}
