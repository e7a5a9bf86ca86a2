//! MIMO detection toolkit.
//!
//! Implements two learned detectors (a plain fully connected network and an
//! unfolded projected-gradient detection network) with a self-contained
//! training engine, classical baselines (zero forcing, exhaustive maximum
//! likelihood, approximate message passing, sphere decoding, M-Best soft
//! sphere decoding), exact Bayes posterior oracles, and a Monte Carlo
//! evaluation and runtime-benchmark harness.

pub mod baselines;
pub mod channel;
pub mod cli;
pub mod constellation;
pub mod error;
pub mod evaluation;
pub mod linalg;
pub mod neural;
pub mod pipeline;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
