use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised by the estimation library.
///
/// The CLI maps these onto exit codes through [`Error::category`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite log-likelihood for respondent {respondent}")]
    NonFinite { respondent: usize },

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: empty file")]
    EmptyFile { path: PathBuf },

    #[error("{path}: row {row} has {found} columns, expected {expected}")]
    RaggedRow {
        path: PathBuf,
        row: usize,
        found: usize,
        expected: usize,
    },

    #[error("{path}: row {row}, column {column}: value {value:?} is not 0 or 1")]
    NonBinaryCell {
        path: PathBuf,
        row: usize,
        column: usize,
        value: String,
    },

    #[error("{path}: malformed CSV: {message}")]
    Csv { path: PathBuf, message: String },

    #[error("{path}: unsupported schema version {found} (this build reads version {supported})")]
    SchemaVersion {
        path: PathBuf,
        found: u32,
        supported: u32,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("unknown {kind} {name:?}; available: {available}")]
    UnknownStrategy {
        kind: &'static str,
        name: String,
        available: String,
    },

    #[error("incomplete report: missing {0}")]
    IncompleteReport(String),
}

/// Coarse classification used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Category {
    Usage,
    Data,
    Numerical,
}

impl Error {
    pub fn category(&self) -> Category {
        match self {
            Error::Config(_)
            | Error::Dimension(_)
            | Error::UnknownStrategy { .. }
            | Error::IncompleteReport(_) => Category::Usage,
            Error::Domain(_) | Error::NonFinite { .. } | Error::Numerical(_) => Category::Numerical,
            Error::InvalidParams(_)
            | Error::Io { .. }
            | Error::EmptyFile { .. }
            | Error::RaggedRow { .. }
            | Error::NonBinaryCell { .. }
            | Error::Csv { .. }
            | Error::SchemaVersion { .. }
            | Error::Format { .. } => Category::Data,
        }
    }
}
