use std::path::PathBuf;

use crate::numeric::NumericError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: line {line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("knowledge graph is empty")]
    EmptyGraph,
    #[error("no entity annotations and the fallback tagger is disabled")]
    NoAnnotations,
    #[error("image features: {0}")]
    Features(String),
    #[error("record {record}: {message}")]
    Dataset { record: String, message: String },
    #[error("config: {0}")]
    Config(String),
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error("normalisation undefined: minimum value {0} is not positive")]
    NonPositiveMinimum(f64),
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
