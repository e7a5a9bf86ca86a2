//! Error type shared across the toolkit.

use thiserror::Error;

/// Errors produced by detectors, samplers, training, and the CLI.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration (bad kind names, inconsistent shapes, bad ranges).
    #[error("configuration error: {0}")]
    Config(String),

    /// Input outside the operation's domain (off-alphabet symbol, length mismatch).
    #[error("domain error: {0}")]
    Domain(String),

    /// Numerical failure (singular system, rank deficiency).
    #[error("numerical error: {0}")]
    Numerical(String),

    /// Search space exceeds the exhaustive-enumeration guard.
    #[error("refusing to enumerate: {0}")]
    TooLarge(String),

    /// Loss or gradient became non-finite; carries the offending sample index.
    #[error("non-finite loss at sample {sample}")]
    NonFinite { sample: usize },

    /// Checkpoint failed its checksum or is structurally damaged.
    #[error("integrity error: {0}")]
    Integrity(String),

    /// Invariant that should be unreachable for valid inputs.
    #[error("internal error: {0}")]
    Internal(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
