//! Config-driven experiment pipeline: scenario preparation, forecaster data harvest and training,
//! control training, evaluation, manifests and run comparison.

mod compare;
mod config;
mod pipeline;

use thiserror::Error;

pub use compare::{compare, median, CompareOutput, TableRow};
pub use config::{ExperimentConfig, PredictorConfig};
pub use pipeline::{
    derive_seed, prepare, read_action_log, read_cumulative, read_summary, read_volume, run,
    stage_evaluate, stage_train_control, stage_train_predictor, write_manifest, Manifest, Prepared, SummaryRow,
    ActionLogRow,
};

/// Failure tagged with the pipeline stage that produced it.
#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("[config] {0}")]
    Config(String),
    #[error("[{stage}] {message}")]
    Stage { stage: &'static str, message: String },
}

impl ExperimentError {
    pub fn stage(stage: &'static str, err: impl std::fmt::Display) -> Self {
        ExperimentError::Stage { stage, message: err.to_string() }
    }

    /// Short tag naming the failing stage.
    pub fn tag(&self) -> &'static str {
        match self {
            ExperimentError::Config(_) => "config",
            ExperimentError::Stage { stage, .. } => stage,
        }
    }
}
