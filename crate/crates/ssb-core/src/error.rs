//! Library error type. Variants map onto distinct process exit codes in the CLI,
//! so the set is deliberately coarse: argument/domain problems, runtime numeric
//! failures, and I/O-shaped failures with context.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SsbError {
    /// Caller passed a value outside the documented domain (shape mismatch,
    /// step out of range, invalid config field).
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A numeric quantity left its valid domain at runtime (NaN, negative
    /// variance, division blowup) outside of training.
    #[error("numeric domain error: {0}")]
    Domain(String),

    /// Sampling produced a non-finite value at the given reverse step.
    #[error("non-finite value during generation at step {step}: {detail}")]
    Generation { step: usize, detail: String },

    /// Training loss became non-finite; carries the iteration for triage.
    #[error("non-finite loss at training iteration {iteration}")]
    NonFiniteLoss { iteration: usize },

    /// Filesystem failure with the path that caused it.
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// Dataset directory or manifest is malformed.
    #[error("dataset error: {0}")]
    Dataset(String),

    /// Checkpoint bytes are malformed or inconsistent with their header.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

impl SsbError {
    /// Shorthand for `Io` with path context.
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        SsbError::Io { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, SsbError>;
