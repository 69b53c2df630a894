//! Error types shared across the crate.

use thiserror::Error;

/// Errors produced by dataset construction, curation, loss kernels,
/// training, and probes.
#[derive(Error, Debug)]
pub enum CoreError {
    /// A value fell outside the domain declared for it (factor domains,
    /// zero vectors under cosine similarity, non-unit quaternions, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// A caller violated an API precondition (shape mismatch, misaligned
    /// augmentation pairs, unknown factor name, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Malformed external data. `offset` is the byte position at which
    /// parsing failed, when known.
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: u64, message: String },

    /// Set curation could not be satisfied (for example an empty matching
    /// pool for the requested inactive assignment).
    #[error("curation error: {0}")]
    Curation(String),

    /// Invalid configuration detected before any compute.
    #[error("config error: {0}")]
    Config(String),

    /// A numerical computation produced a non-finite intermediate or
    /// result. Never silently propagated as NaN.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// A probe could not be evaluated (degenerate inputs, divergence).
    #[error("probe error: {0}")]
    Probe(String),

    /// Training aborted; the last good checkpoint (if any) is retained.
    #[error("training aborted at step {step}: {message}")]
    TrainAbort { step: u64, message: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(String),

    #[cfg(feature = "shapes3d")]
    #[error("hdf5 error: {0}")]
    Hdf5(#[from] hdf5::Error),
}

pub type Result<T> = std::result::Result<T, CoreError>;

impl From<serde_json::Error> for CoreError {
    fn from(e: serde_json::Error) -> Self {
        CoreError::Serde(e.to_string())
    }
}

impl From<bincode::Error> for CoreError {
    fn from(e: bincode::Error) -> Self {
        CoreError::Serde(e.to_string())
    }
}
