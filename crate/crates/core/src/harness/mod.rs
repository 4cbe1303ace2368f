//! Training loop, evaluation protocol, run persistence and reporting.

pub mod compare;
pub mod config;
pub mod evaluate;
pub mod metrics;
pub mod render;
pub mod train;

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::agent::LearnError;
use crate::qnet::{CheckpointError, NetError};
use crate::world::LayoutError;

pub use compare::{compare_runs, improvement, RunSummary};
pub use config::{ConfigError, ExplorationConfig, Profile, ReplayConfig, RunConfig};
pub use evaluate::{evaluate, load_policy, run_eval_episode, EpisodeLog, Policy};
pub use metrics::{read_metrics_csv, EvalEpisodeRow, MetricsRecord};
pub use render::{render_run, render_svg};
pub use train::{checkpoint_path, record_evaluation, train, RunInfo, TrainOptions, TrainSummary};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Layout(#[from] LayoutError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Learn(LearnError),
    #[error("numerical fault: {0}")]
    NumericalFault(String),
    #[error("{0}")]
    Mismatch(String),
}

impl HarnessError {
    /// Process exit status for the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::NumericalFault(_) => 3,
            _ => 1,
        }
    }

    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub(crate) fn format(path: &Path, message: impl ToString) -> Self {
        HarnessError::Format {
            path: path.to_path_buf(),
            message: message.to_string(),
        }
    }
}

impl From<LearnError> for HarnessError {
    fn from(e: LearnError) -> Self {
        match e {
            LearnError::NumericalFault { .. } => HarnessError::NumericalFault(e.to_string()),
            other => HarnessError::Learn(other),
        }
    }
}

pub(crate) fn read_to_string(path: &Path) -> Result<String, HarnessError> {
    std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))
}

pub(crate) fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), HarnessError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| HarnessError::io(path, e))
}
