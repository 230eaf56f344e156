use thiserror::Error;

/// Errors produced by the modeling, evaluation, and I/O layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("length mismatch: {left} vs {right} ({context})")]
    LengthMismatch {
        left: usize,
        right: usize,
        context: &'static str,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("no profile for user '{0}'")]
    MissingProfile(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("training diverged at epoch {epoch}: loss {loss}")]
    TrainingDiverged {
        epoch: usize,
        loss: f64,
        trace: Vec<f64>,
    },

    #[error("no eligible negatives for query '{0}'")]
    NoNegatives(String),

    #[error("infeasible generator config: {0}")]
    Infeasible(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
