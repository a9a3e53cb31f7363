use crate::latent::LatentShape;
use thiserror::Error;

/// Errors surfaced by schedule construction, sampling, watermarking and
/// metric aggregation.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid range: {0}")]
    InvalidRange(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: LatentShape, got: LatentShape },

    #[error("timestep {t} out of range [{min}, {max}]")]
    TimestepOutOfRange { t: usize, min: usize, max: usize },

    #[error("degenerate schedule: alpha_bar[{t}] = {alpha_bar:e} is below the division guard")]
    DegenerateSchedule { t: usize, alpha_bar: f64 },

    #[error("sigma too large at t={t}: sigma^2 = {sigma_sq} exceeds 1 - alpha_bar[t-1] = {limit}")]
    SigmaTooLarge { t: usize, sigma_sq: f64, limit: f64 },

    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("message length {len} exceeds capacity {capacity}")]
    MessageTooLong { len: usize, capacity: usize },

    #[error("insufficient samples: need at least {needed}, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error("empty record set: {0}")]
    EmptyRecordSet(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),
}

pub type Result<T> = std::result::Result<T, Error>;
