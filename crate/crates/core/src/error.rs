use thiserror::Error;

/// Errors raised by filtering, training, and experiment orchestration.
#[derive(Debug, Error)]
pub enum FilterError {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("invalid ensemble: {0}")]
    InvalidEnsemble(String),

    #[error("invalid weights: {0}")]
    InvalidWeights(String),

    #[error("{0} is not supported by this model")]
    Unsupported(&'static str),

    #[error("all importance weights vanished at step {step}")]
    DegenerateWeights { step: usize },

    #[error("matrix is not positive definite in {0}")]
    NotPositiveDefinite(&'static str),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid network layout: {0}")]
    InvalidLayout(String),

    #[error("training diverged at outer iteration {iteration}")]
    Diverged { iteration: usize },

    #[error("EnKF block must be frozen before it is applied")]
    UnfrozenBlock,

    #[error("grid posterior has vanishing mass; max log-density {max_log_density} at {location:?}")]
    VanishingNormalizer {
        max_log_density: f64,
        location: Vec<f64>,
    },

    #[error("grid posterior is not normalized (mass {0})")]
    Unnormalized(f64),

    #[error("empty input to {0}")]
    Empty(&'static str),

    #[error("spec validation failed at `{path}`: {message}")]
    Validation { path: String, message: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("malformed parameter file: {0}")]
    ParamFormat(String),
}

pub type Result<T> = std::result::Result<T, FilterError>;

impl FilterError {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        FilterError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub fn validation(path: impl Into<String>, message: impl Into<String>) -> Self {
        FilterError::Validation {
            path: path.into(),
            message: message.into(),
        }
    }
}
