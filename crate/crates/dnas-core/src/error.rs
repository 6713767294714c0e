use thiserror::Error;

/// Errors surfaced by the tensor engine, the network builders and the
/// search/cost pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: String, detail: String },

    #[error("invalid argument: {0}")]
    InvalidArg(String),

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("missing cost entry for stage {stage}, candidate {candidate}")]
    MissingCost { stage: String, candidate: String },

    #[error("missing latency entry for stage {stage}, candidate {candidate}")]
    MissingLatency { stage: String, candidate: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed file {path}: {detail}")]
    Malformed { path: String, detail: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn shape(op: &str, detail: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            op: op.to_string(),
            detail: detail.into(),
        }
    }
}
