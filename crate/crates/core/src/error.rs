use thiserror::Error;

/// Errors surfaced by tensor math, models, environments, and run orchestration.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("rollout produced a non-finite prediction at step {step}")]
    RolloutNaN { step: usize },

    #[error("training diverged at epoch {epoch}; parameters rolled back to last finite epoch")]
    TrainDiverged { epoch: usize },

    #[error("dataset quota unreachable after {attempts} attempts: {achieved}")]
    QuotaUnreachable { attempts: usize, achieved: String },

    #[error("malformed dataset line {line}: {reason}")]
    DatasetParse { line: usize, reason: String },

    #[error("checkpoint incompatible with dataset: {0}")]
    Incompatible(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input rather than a failed run.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::InvalidArgument(_) | Error::ShapeMismatch { .. } | Error::Incompatible(_)
        )
    }
}
