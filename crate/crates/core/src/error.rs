use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the engine can report.
///
/// Variants are grouped by the exit-code class they map to; see [`Error::exit_code`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("I/O error: {0}")]
    Stream(#[from] std::io::Error),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("no records for machine {0:?}")]
    EmptySeries(String),

    #[error("feature {0:?} has no observed values")]
    UnrecoverableFeature(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("malformed input: {0}")]
    Format(String),

    #[error("non-finite value {context}")]
    Numeric { context: String },

    #[error("line search stalled after {iterations} iterations (best objective {best_value})")]
    Stall {
        iterations: usize,
        best: Vec<f64>,
        best_value: f64,
    },

    #[error("grid search failed: every candidate errored")]
    SearchFailed,

    #[error("internal invariant violated: {0}")]
    Internal(String),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn numeric(context: impl Into<String>) -> Self {
        Error::Numeric {
            context: context.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable process exit code: 2 usage/config, 3 data, 4 numeric, 5 internal.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Shape(_) => 2,
            Error::Io { .. }
            | Error::Stream(_)
            | Error::EmptySeries(_)
            | Error::UnrecoverableFeature(_)
            | Error::InsufficientData(_)
            | Error::EmptyInput(_)
            | Error::Format(_) => 3,
            Error::Numeric { .. } | Error::Stall { .. } | Error::SearchFailed => 4,
            Error::Internal(_) => 5,
        }
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        if e.is_io_error() {
            match e.into_kind() {
                csv::ErrorKind::Io(io) => Error::Stream(io),
                other => Error::Format(format!("{other:?}")),
            }
        } else {
            Error::Format(e.to_string())
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}
