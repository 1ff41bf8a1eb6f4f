use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes are incompatible with the requested operation.
    #[error("{0}")]
    Dimension(String),

    /// A caller broke a documented precondition.
    #[error("{0}")]
    Contract(String),

    #[error("{0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: required dataset file is missing")]
    MissingFile { path: PathBuf },

    #[error("{path}: expected {expected} rows, found {found}")]
    RowCount {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("{path}:{line}: expected {expected} columns, found {found}")]
    ColumnCount {
        path: PathBuf,
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("{path}:{line}: non-numeric cell '{cell}'")]
    NonNumeric { path: PathBuf, line: usize, cell: String },

    #[error("{path}: malformed document: {msg}")]
    Malformed { path: PathBuf, msg: String },

    #[error("{path}: unsupported format version {found} (this build reads version {supported})")]
    Version { path: PathBuf, found: u64, supported: u64 },

    #[error("tensor '{name}': expected shape {expected:?}, found {found:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("cholesky factorization failed for component {component} after jitter {jitter:e}")]
    Conditioning { component: usize, jitter: f64 },

    #[error("random search: every trial diverged, no trainable configuration")]
    NoTrainableConfig,
}

impl Error {
    /// Stable, machine-parsable category used by the command-line front end.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Dimension(_) | Error::ShapeMismatch { .. } => "dimension",
            Error::Contract(_) => "contract",
            Error::Config(_) => "config",
            Error::Io { .. }
            | Error::MissingFile { .. }
            | Error::RowCount { .. }
            | Error::ColumnCount { .. }
            | Error::NonNumeric { .. }
            | Error::Malformed { .. } => "io",
            Error::Version { .. } => "version",
            Error::NonFiniteLoss { .. } => "divergence",
            Error::Conditioning { .. } => "conditioning",
            Error::NoTrainableConfig => "search",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

macro_rules! dim_err {
    ($($arg:tt)*) => { $crate::error::Error::Dimension(format!($($arg)*)) };
}
pub(crate) use dim_err;
