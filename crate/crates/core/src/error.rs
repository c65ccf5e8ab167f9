use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the contrascope library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("vector norm below 1e-12")]
    ZeroVector,

    #[error("invalid embedding: {0}")]
    InvalidEmbedding(String),

    #[error("invalid document id {0:?}")]
    InvalidId(String),

    #[error("duplicate document id {0:?}")]
    DuplicateId(String),

    #[error("format error in {path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("embedding space {0:?} not present")]
    MissingSpace(String),

    #[error("embedding space {0:?} already exists")]
    SpaceExists(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("query {0:?} has no relevance judgments")]
    UnknownQuery(String),

    #[error("validation set is empty")]
    EmptyValidationSet,

    #[error("degenerate pair in batch (item {item}, partner {partner}): difference norm below 1e-12")]
    DegeneratePair { item: usize, partner: usize },

    #[error("temperature must be positive and finite, got {0}")]
    InvalidTemperature(f64),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format { path: path.into(), msg: msg.into() }
    }

    /// True for errors caused by bad inputs or configuration rather than
    /// failures while running (I/O, numerical breakdown).
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Io(_) | Error::DegeneratePair { .. } | Error::ZeroVector)
    }
}

pub type Result<T> = std::result::Result<T, Error>;
