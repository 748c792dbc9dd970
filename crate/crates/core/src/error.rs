use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed issue export at issue index {index}: {reason}")]
    MalformedExport { index: usize, reason: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("git {command}: {message}")]
    Git { command: String, message: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("unlinked defect {0}: no commit mentions its key")]
    UnlinkedDefect(String),

    #[error("coldstart unavailable for project {0}: no other project supplies a proportion")]
    ColdStartUnavailable(String),

    #[error("defect {0} has no usable ground-truth affected versions")]
    MissingGroundTruth(String),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("malformed input: {0}")]
    Malformed(String),

    #[error("{0}")]
    Invalid(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
