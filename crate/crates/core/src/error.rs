use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Configuration problems, each naming the offending field.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("{field} = {value} is out of range: {reason}")]
    OutOfRange {
        field: &'static str,
        value: String,
        reason: &'static str,
    },
    #[error("incompatible options: {0}")]
    IncompatibleOptions(String),
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("size mismatch: expected {expected} samples, got {got}")]
    SizeMismatch { expected: usize, got: usize },
    #[error("non-positive determinant at grid point (i={i}, j={j})")]
    NonPositiveDeterminant { i: usize, j: usize },
    #[error("tensor is not positive definite at grid point (i={i}, j={j})")]
    NonSpd { i: usize, j: usize },
    #[error("singular tensor at grid point (i={i}, j={j})")]
    Singular { i: usize, j: usize },
    #[error("non-finite value after step {step}")]
    NonFinite {
        step: usize,
        last_good: Option<Box<crate::diagnostics::DiagnosticsRecord>>,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed diagnostics file {path}: {reason}")]
    CorruptCsv { path: PathBuf, reason: String },
    #[error("corrupt snapshot {path}: {reason}")]
    CorruptSnapshot { path: PathBuf, reason: String },
    #[error("run {index} failed: {source}")]
    Rung {
        index: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Grid coordinates of a flat sample index on an `n × n` grid.
    pub(crate) fn at(n: usize, idx: usize) -> (usize, usize) {
        (idx % n, idx / n)
    }
}
