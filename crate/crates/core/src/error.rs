//! Error type shared across the toolkit.

use thiserror::Error;

/// Errors produced by kernel evaluation, decomposition, fitting, and I/O.
#[derive(Debug, Error)]
pub enum Error {
    /// A point or parameter lies outside the kernel's domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// Dimension or shape mismatch between inputs.
    #[error("shape error: {0}")]
    Shape(String),

    /// A linear-algebra or conditioning failure.
    #[error("numerical error: {message}")]
    Numerical {
        message: String,
        /// Diagonal jitter that was applied (or attempted) before failing.
        jitter: Option<f64>,
        /// Worst (most negative or smallest) eigenvalue encountered.
        worst_eigenvalue: Option<f64>,
    },

    /// An index or truncation level outside the valid range.
    #[error("range error: {0}")]
    Range(String),

    /// Too few samples for the requested statistic.
    #[error("sample size error: {0}")]
    SampleSize(String),

    /// An enumeration exceeded its configured budget.
    #[error("budget error: {0}")]
    Budget(String),

    /// Malformed configuration or data file.
    #[error("parse error: {0}")]
    Parse(String),

    /// Invalid command-line usage.
    #[error("usage error: {0}")]
    Usage(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn numerical(message: impl Into<String>) -> Self {
        Error::Numerical {
            message: message.into(),
            jitter: None,
            worst_eigenvalue: None,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
