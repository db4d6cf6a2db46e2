use thiserror::Error;

#[derive(Debug, Error)]
pub enum MdError {
    #[error("invalid task: {0}")]
    InvalidTask(String),

    #[error("index {index} out of range 1..={len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("entry {value} at position {position} is not a valid token")]
    InvalidToken { position: usize, value: i8 },

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid schedule [{t0}, {t1}]: need 0 <= t0 <= t1 <= 1")]
    InvalidSchedule { t0: f64, t1: f64 },

    #[error("masking rate t = 0 with a non-empty mask")]
    ZeroRateWithMask,

    #[error("f* is only defined in the Signal regime")]
    NotSignalRegime,

    #[error("exact enumeration infeasible: n' = {n_prime} exceeds {max}")]
    EnumerationInfeasible { n_prime: usize, max: usize },

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("root bracketing failed for k = {k}: p(lo) = {p_lo:e}, p(hi) = {p_hi:e}")]
    Bracketing { k: usize, p_lo: f64, p_hi: f64 },

    #[error("sample bound is unbounded: E[t] * rho_k^2 = 0")]
    UnboundedSampleBound,

    #[error("training diverged at step {step}: {detail}")]
    Diverged { step: u64, detail: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("checkpoint format: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, MdError>;
