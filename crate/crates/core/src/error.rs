use std::path::PathBuf;

use crate::network::MlpModel;
use crate::problems::ProblemId;
use crate::trainer::TrainingLog;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch: expected {expected} coordinates, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("point {point:?} is outside the domain of {problem}")]
    OutsideDomain { problem: ProblemId, point: Vec<f64> },

    #[error("point {point:?} is not on the boundary of {problem}")]
    NotOnBoundary { problem: ProblemId, point: Vec<f64> },

    #[error("{0} has no manufactured exact solution")]
    NoExactSolution(ProblemId),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("training diverged at iteration {}: non-finite value at sample {:?}", .0.iteration, .0.sample)]
    Diverged(Box<Divergence>),

    #[error("unknown preset `{0}` (see `list-presets`)")]
    UnknownPreset(String),

    #[error("unknown diagnostic experiment `{0}`")]
    UnknownExperiment(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("missing or corrupt run metadata in {dir}: {reason}")]
    RunMetadata { dir: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// State captured when a loss or gradient stops being finite.
#[derive(Debug)]
pub struct Divergence {
    pub iteration: usize,
    /// Coordinates of the offending sample, empty when it could not be isolated.
    pub sample: Vec<f64>,
    /// Last parameters that produced a finite loss.
    pub last_good: Option<MlpModel>,
    pub log: Option<TrainingLog>,
}

impl Error {
    pub(crate) fn diverged(iteration: usize, sample: Vec<f64>) -> Self {
        Error::Diverged(Box::new(Divergence {
            iteration,
            sample,
            last_good: None,
            log: None,
        }))
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
