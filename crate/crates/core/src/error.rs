use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Location inside a line-delimited input file, used in validation errors.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Location {
    pub path: PathBuf,
    pub line: usize,
}

impl std::fmt::Display for Location {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}", self.path.display(), self.line)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{location}: malformed record: {message}")]
    Malformed { location: Location, message: String },

    #[error("{location}: duplicate {kind} id {id:?}")]
    DuplicateId {
        location: Location,
        kind: &'static str,
        id: String,
    },

    #[error("{location}: document {doc:?} references unknown dataset {dataset:?}")]
    DanglingDataset {
        location: Location,
        doc: String,
        dataset: String,
    },

    #[error("unknown dataset {0:?}")]
    UnknownDataset(String),

    #[error("document {0:?} has no token_texts; surface forms are required here")]
    MissingTokenTexts(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{location}: record {doc:?} has invalid nll {value} at position {position}")]
    InvalidNll {
        location: Location,
        doc: String,
        position: usize,
        value: f64,
    },

    #[error("{location}: record {doc:?} has {got} scored positions, expected {expected}")]
    LengthMismatch {
        location: Location,
        doc: String,
        expected: usize,
        got: usize,
    },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("insufficient data: need at least {needed} observations, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("degenerate design: {0}")]
    Degenerate(String),

    #[error("index file {path}: {message}")]
    IndexFormat { path: PathBuf, message: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("json error: {0}")]
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
