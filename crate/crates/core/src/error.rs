use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error{}: {message}", location.as_ref().map(|l| format!(" in {}", l.display())).unwrap_or_default())]
    Parse {
        location: Option<PathBuf>,
        message: String,
    },

    #[error("degenerate face {face}: {reason}")]
    DegenerateFace { face: usize, reason: String },

    #[error("index {index} out of range for {len} entries ({context})")]
    IndexOutOfRange {
        index: usize,
        len: usize,
        context: &'static str,
    },

    #[error("dimension mismatch in {op}: expected {expected}, got {actual}")]
    DimensionMismatch {
        op: &'static str,
        expected: String,
        actual: String,
    },

    #[error("eigensolver did not converge: {0}")]
    ConvergenceFailure(String),

    #[error("requested {k} eigenpairs but mesh has only {n} vertices (need k < n)")]
    KTooLarge { k: usize, n: usize },

    #[error("spectrum too narrow for WKS: energy range {range:.3e} <= 4 sigma = {four_sigma:.3e}")]
    InsufficientSpectrum { range: f64, four_sigma: f64 },

    #[error("linear system for row {row} is singular (condition estimate {condition:.3e})")]
    SingularSystem { row: usize, condition: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("non-finite loss on pair {pair} at epoch {epoch}")]
    NonFiniteLoss { epoch: usize, pair: String },

    #[error("backward called twice on the same tape")]
    TapeConsumed,

    #[error("{0}")]
    InvalidInput(String),

    #[error("cache: {0}")]
    Cache(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn parse(location: Option<&std::path::Path>, message: impl Into<String>) -> Self {
        Error::Parse {
            location: location.map(|p| p.to_path_buf()),
            message: message.into(),
        }
    }

    pub(crate) fn dims(op: &'static str, expected: impl ToString, actual: impl ToString) -> Self {
        Error::DimensionMismatch {
            op,
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
