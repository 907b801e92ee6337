//! Error types shared across the crate.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A precondition or input-validation failure.
    #[error("validation error: {0}")]
    Validation(String),

    /// A manifest or annotation record that does not parse.
    #[error("parse error in {path} at line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    /// An API contract violated by the caller (e.g. exporting from an unfrozen model).
    #[error("contract error: {0}")]
    Contract(String),

    /// Caption or n-gram that carries no usable signal for matching.
    #[error("no evidence: {0}")]
    NoEvidence(String),

    /// Cosine similarity against a zero-norm embedding.
    #[error("undefined similarity: {0}")]
    UndefinedSimilarity(String),

    /// A pipeline stage failed; earlier stage artifacts remain on disk for resume.
    #[error("stage '{stage}' failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn in_stage(self, stage: &str) -> Self {
        Error::Stage {
            stage: stage.to_string(),
            source: Box::new(self),
        }
    }
}
