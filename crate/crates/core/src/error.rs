use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("{0} is empty")]
    EmptyInput(String),

    #[error("dimension mismatch: expected {expected}, got {actual} ({what})")]
    Dimension {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid split: {0}")]
    Split(String),

    #[error("homophily ratio undefined on a graph without edges")]
    NoEdges,

    #[error("signal has zero norm")]
    ZeroSignal,

    #[error("signal has zero degree-weighted norm (all mass on isolated nodes)")]
    ZeroDegreeWeight,

    #[error("negative radicand {radicand:e} in scaling factor at hop {hop}, column {column}")]
    NegativeRadicand { hop: usize, column: usize, radicand: f64 },

    #[error("non-finite value during {0}")]
    NonFinite(String),

    #[error("target homophily {target} unreachable; closest achieved ratio {closest}")]
    Unreachable { target: f64, closest: f64 },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by the filesystem or malformed input files.
    pub fn is_io(&self) -> bool {
        matches!(
            self,
            Error::Io { .. } | Error::Parse { .. } | Error::Format { .. } | Error::EmptyInput(_)
        )
    }
}
