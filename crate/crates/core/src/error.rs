use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed {what}: {reason}")]
    Format { what: &'static str, reason: String },

    #[error("json error in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("record `{id}`: {reason}")]
    InvalidRecord { id: String, reason: String },

    #[error("coordinate ({row}, {col}) outside {height}x{width} grid")]
    OutOfBounds {
        row: usize,
        col: usize,
        height: usize,
        width: usize,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite values in {0}")]
    NonFinite(String),

    #[error("degenerate feature vector at patch ({0}, {1})")]
    DegenerateFeature(usize, usize),

    #[error("record `{0}` has no ground-truth mask; simulated oracle needs one")]
    MissingGroundTruth(String),

    #[error("feedback session: {0}")]
    Session(String),

    #[error("run aborted: {reason} (resume with token `{token}`)")]
    Aborted { reason: String, token: String },

    #[error("invariant violated: {0}")]
    Invariant(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Format {
            what,
            reason: reason.into(),
        }
    }
}
