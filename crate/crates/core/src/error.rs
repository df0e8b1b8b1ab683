use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("non-numeric cell {value:?} in column {column} (row {row})")]
    NonNumeric { column: String, row: usize, value: String },

    #[error("missing value in column {column} (row {row})")]
    MissingValue { column: String, row: usize },

    #[error("foreign value in binary column {column} (row {row}): {value}")]
    ForeignBinaryValue { column: String, row: usize, value: f64 },

    #[error("length mismatch: {what} (expected {expected}, got {actual})")]
    LengthMismatch {
        what: String,
        expected: usize,
        actual: usize,
    },

    #[error("unknown column {0:?}")]
    UnknownColumn(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("no row is out-of-bag for any tree (ntree too small)")]
    NoOutOfBagRows,

    #[error("elimination step kept no variables (threshold {threshold})")]
    EmptySurvivors { threshold: f64 },

    #[error("design matrix for the {component} component is rank deficient ({rank} < {columns})")]
    RankDeficient {
        component: &'static str,
        rank: usize,
        columns: usize,
    },

    #[error("goodness-of-fit table has {0} bins after pooling; need at least 2")]
    TooFewBins(usize),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }
}
