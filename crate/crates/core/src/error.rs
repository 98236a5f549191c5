use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("degenerate edge: both endpoints are the same vector")]
    DegenerateEdge,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("class {class} not present; available classes: {available:?}")]
    MissingClass { class: u16, available: Vec<u16> },

    #[error("malformed feature file at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("invalid feature data at row {row}: {message}")]
    Data { row: usize, message: String },

    #[error("pool is empty")]
    EmptyPool,

    #[error("{class} class has no samples to compare against")]
    ClassUnavailable { class: &'static str },

    #[error("AUC is undefined: {0}")]
    UndefinedAuc(String),

    #[error("no queries in {0}")]
    NoQueries(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn csv(path: impl Into<PathBuf>, source: csv::Error) -> Self {
        Error::Csv {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }
}
