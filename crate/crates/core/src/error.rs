use thiserror::Error;

/// Errors raised by the security-index toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: String,
        expected: usize,
        got: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("component {0} is not an attackable component (actuator or unprotected sensor)")]
    NotAComponent(usize),

    #[error("attack signal drives protected sensor channel {channel} at step {step}")]
    ProtectedChannel { channel: usize, step: usize },

    #[error("not enough data: {have} samples, at least {need} required ({why})")]
    InsufficientData {
        have: usize,
        need: usize,
        why: String,
    },

    #[error(
        "input is not persistently exciting of order {order} after {attempts} attempts \
         (rank {rank} < {needed}); use a longer data length N"
    )]
    NotPersistentlyExciting {
        order: usize,
        rank: usize,
        needed: usize,
        attempts: usize,
    },

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn dim_err(what: impl Into<String>, expected: usize, got: usize) -> Error {
    Error::Dimension {
        what: what.into(),
        expected,
        got,
    }
}
