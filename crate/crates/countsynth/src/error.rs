//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid schema: {0}")]
    InvalidSchema(String),

    #[error("invalid table: {0}")]
    InvalidTable(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A microdata record carried a label that is not in the schema.
    #[error("record {record}: unknown category {label:?} for variable {variable:?}")]
    UnknownCategory {
        record: usize,
        variable: String,
        label: String,
    },

    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("ensemble holds no replicates")]
    EmptyEnsemble,

    /// A conditional metric whose conditioning set is empty. Distinct from a
    /// metric that evaluates to zero.
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit code used by the CLI: 2 for validation and I/O problems,
    /// 3 for undefined-metric conditions.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::UndefinedMetric(_) => 3,
            _ => 2,
        }
    }
}
