use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the hedge library.
#[derive(Debug, Error)]
pub enum HedgeError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: String, got: String },

    #[error("invalid incidence matrix: {0}")]
    InvalidIncidence(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("time {s} outside [{lo}, {hi}]")]
    TimeOutOfRange { s: f64, lo: f64, hi: f64 },

    #[error("eigensolver did not converge after {iterations} iterations")]
    EigenNonConvergence { iterations: usize },

    #[error("conditional variance {var:e} at s = {s} is below the floor; score is singular")]
    ScoreSingular { s: f64, var: f64 },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("drift blow-up at step {step}: state became non-finite")]
    DriftBlowUp { step: usize },

    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("retries exhausted after {0} attempts; target shape infeasible")]
    RetriesExhausted(usize),

    #[error("infeasible degree sequence: {0}")]
    InfeasibleDegrees(String),

    #[error("{}: no such file or directory", .0.display())]
    NotFound(PathBuf),

    #[error("checks failed: {0}")]
    ChecksFailed(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, HedgeError>;

pub(crate) fn shape_err(expected: (usize, usize), got: (usize, usize)) -> HedgeError {
    HedgeError::DimensionMismatch {
        expected: format!("{}x{}", expected.0, expected.1),
        got: format!("{}x{}", got.0, got.1),
    }
}
