//! End-to-end orchestration: load inputs, evaluate the (prompt x task)
//! matrix against a backend, persist records, and derive rank and analysis
//! artifacts from a completed run directory.

mod config;
mod report;
mod run;
mod store;

pub use config::{
    AnalysisConfig, ChoiceFormatPolicy, DecisionSet, LoadedInputs, RunConfig, BACKEND_URL_ENV,
};
pub use report::{
    load_run, run_ablate, run_correlate, run_rank, run_report, GroupImprovement, LoadedRun, PromptRankRow,
    RankRow,
};
pub use run::{run_dir_for, run_eval, FailureCause, PairOutcome, PairRecord, RunRecord};
pub use store::{Manifest, PromptInfo, RunDir};

use std::path::Path;

use thiserror::Error;

use crate::analysis::AnalysisError;
use crate::metrics::MetricError;
use crate::scoring::ScoreError;
use crate::task::TaskError;
use crate::template::TemplateError;

/// Exit status for a clean run.
pub const EXIT_OK: i32 = 0;
/// Exit status for invalid configuration or input files.
pub const EXIT_VALIDATION: i32 = 1;
/// Exit status when the scoring backend could not be reached.
pub const EXIT_BACKEND: i32 = 2;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("io error on {path}: {message}")]
    Io { path: String, message: String },
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error("no completed run at {0}")]
    MissingRun(String),
    #[error("malformed run file {path}: {message}")]
    CorruptRun { path: String, message: String },
}

impl HarnessError {
    pub(crate) fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        HarnessError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        }
    }

    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Score(ScoreError::BackendUnavailable(_)) => EXIT_BACKEND,
            _ => EXIT_VALIDATION,
        }
    }
}
