use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("ingestion error at row {row}, column `{column}`: {message}")]
    Ingestion {
        row: usize,
        column: String,
        message: String,
    },

    #[error("degenerate arm: {0}")]
    DegenerateArm(String),

    #[error("shape mismatch: expected {expected} columns, got {actual}")]
    Shape { expected: usize, actual: usize },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("mode error: {0}")]
    Mode(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable machine-readable tag.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Schema(_) => "schema",
            Error::Validation(_) => "validation",
            Error::Ingestion { .. } => "ingestion",
            Error::DegenerateArm(_) => "degenerate_arm",
            Error::Shape { .. } => "shape",
            Error::Empty(_) => "empty",
            Error::Config(_) => "config",
            Error::Mode(_) => "mode",
            Error::Numeric(_) => "numeric",
            Error::Io { .. } => "io",
            Error::Csv(_) => "csv",
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Io { .. } => 3,
            Error::Schema(_) | Error::Ingestion { .. } | Error::Csv(_) => 4,
            Error::Validation(_)
            | Error::DegenerateArm(_)
            | Error::Shape { .. }
            | Error::Empty(_) => 5,
            Error::Mode(_) => 6,
            Error::Numeric(_) => 7,
        }
    }
}
