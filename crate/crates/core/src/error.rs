use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse failure class, used by the command line front end to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Validation,
    Io,
    Statistical,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Validation => 2,
            ErrorKind::Io => 3,
            ErrorKind::Statistical => 4,
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("ensemble is empty")]
    EmptyEnsemble,
    #[error("variance needs at least two predictions, got one")]
    SingleSample,
    #[error("grid mismatch: {0}")]
    MetaMismatch(String),
    #[error("invalid volume: {0}")]
    InvalidVolume(String),
    #[error("invalid organ set: {0}")]
    InvalidOrganSet(String),
    #[error("infeasible partition config: {0}")]
    InfeasibleConfig(String),
    #[error("case index {case} out of range for plan with {n_cases} cases")]
    CaseOutOfRange { case: usize, n_cases: usize },
    #[error("uncertainty map has no foreground channels")]
    NoForegroundChannels,
    #[error("consensus label {label} exceeds organ count {organs}")]
    OrganIndexOutOfRange { label: u8, organs: usize },
    #[error("boundary radius must be at least 1")]
    InvalidRadius,
    #[error("need at least {need} score vectors, got {got}")]
    TooFewSamples { got: usize, need: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("covariance is not positive-definite even after ridge {ridge:e}")]
    SingularCovariance { ridge: f64 },
    #[error("non-finite score in case {0}")]
    NonFiniteScore(String),
    #[error("level {0} is not inside (0, 1)")]
    LevelOutOfRange(f64),
    #[error("evaluation needs both ID and OOD samples")]
    OneClassOnly,
    #[error("case {case_id}: no predictions for holdout learner {learner}")]
    MissingHoldoutPredictions { case_id: String, learner: usize },
    #[error("invalid config: {0}")]
    ConfigInvalid(String),
    #[error("partition plan not found at {0}")]
    MissingPlan(PathBuf),
    #[error("manifest not found at {0}")]
    MissingManifest(PathBuf),
    #[error("malformed file {path}: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Io { .. } | Error::MissingPlan(_) | Error::MissingManifest(_) => ErrorKind::Io,
            Error::SingularCovariance { .. } | Error::TooFewSamples { .. } => {
                ErrorKind::Statistical
            }
            _ => ErrorKind::Validation,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl ToString) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.to_string(),
        }
    }
}
