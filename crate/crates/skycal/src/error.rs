//! Error types shared across the crate.

use thiserror::Error;

/// Coarse failure category, used by callers (e.g. the CLI) to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    /// Bad inputs: malformed files, violated preconditions, schema mismatches.
    Validation,
    /// Numerical breakdown: ill-conditioning, non-finite values, failed factorizations.
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed record in a CSV input. `line` is 1-based and counts the header.
    #[error("{path}:{line}: column '{column}': {message}")]
    Csv {
        path: String,
        line: usize,
        column: String,
        message: String,
    },

    #[error("validation error: {0}")]
    Validation(String),

    /// Cholesky failed even after the jitter escalation policy ran out.
    #[error("matrix not positive definite after jitter escalation (final jitter {final_jitter:.3e}): {context}")]
    IllConditioned { final_jitter: f64, context: String },

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Format { path: String, message: String },
}

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::IllConditioned { .. } | Error::Numerical(_) => ErrorCategory::Numerical,
            _ => ErrorCategory::Validation,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
