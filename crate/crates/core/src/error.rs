use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the monitoring pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch: expected {expected} coordinates, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("non-finite value at time {t}, coordinate {coord}")]
    NonFinite { t: usize, coord: usize },

    #[error("out-of-order observation: expected time {expected}, got {got}")]
    TimeIndex { expected: usize, got: usize },

    #[error("closed-end horizon of {horizon} observations exceeded")]
    HorizonExceeded { horizon: usize },

    #[error("index out of range: {0}")]
    Index(String),

    #[error("phase-I estimation failed: {0}")]
    PhaseOne(String),

    #[error("monitor state: {0}")]
    State(String),

    #[error("covariance factorization failed: {0}")]
    Factorization(String),

    #[error("too few replications: {reps} draws cannot resolve the {alpha} tail")]
    TooFewReplications { reps: usize, alpha: f64 },

    #[error("critical-value cache key mismatch in {path}: {detail}")]
    KeyMismatch { path: PathBuf, detail: String },

    #[error("corrupt cache file {path}: {detail}")]
    CorruptCache { path: PathBuf, detail: String },

    #[error("experiment failed: {0}")]
    Experiment(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
