//! Error type shared across the crate.

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller violated a shape contract (mismatched vector/matrix sizes).
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A matrix that must be positive definite failed to factor; the message
    /// names the offending matrix.
    #[error("numerical degeneracy: {0}")]
    Degenerate(String),

    /// Invalid model or script configuration.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Invalid input data (audio, labels, predictions).
    #[error("invalid input: {0}")]
    Input(String),

    /// Training could not produce a usable class model.
    #[error("training error: {0}")]
    Training(String),

    /// A file did not conform to its documented format.
    #[error("parse error: {0}")]
    Parse(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
