use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid time {0}: must be finite and nonnegative")]
    InvalidTime(f64),
    #[error("time {t} outside allowed window [{lo}, {hi}]")]
    TimeOutOfWindow { t: f64, lo: f64, hi: f64 },
    #[error("guidance {0:?} outside the unit cube")]
    GuidanceOutOfRange(Vec<f64>),
    #[error("point {x:?} outside the evaluation cube of half-width {half_width}")]
    OutsideDomain { x: Vec<f64>, half_width: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("numerical abort at step {step} (sample {sample}): {detail}")]
    NumericalAbort {
        step: usize,
        sample: usize,
        detail: String,
    },
    #[error("training diverged at step {step}: loss = {loss}")]
    Diverged { step: usize, loss: f64 },
    #[error("validation failure: {0}")]
    Validation(String),
    #[error("matrix is not symmetric positive definite: {0}")]
    NotSpd(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("manifest parse error: {0}")]
    Manifest(String),
}
