//! Error type shared across the crate.

use thiserror::Error;

/// Errors produced by corpus ingestion, preprocessing, and training.
#[derive(Debug, Error)]
pub enum Error {
    /// A corpus line failed to parse. Carries the 1-based line number.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// An input violated a documented contract.
    #[error("validation error: {0}")]
    Validation(String),

    /// A user's text normalized to nothing; the caller decides drop policy.
    #[error("user '{user_id}' is empty after preprocessing")]
    EmptyAfterPreprocessing { user_id: String },

    /// Vectors or matrices of incompatible dimensions were combined.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
