use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("unsupported derivative order {order} (maximum supported is {max})")]
    UnsupportedOrder { order: u8, max: u8 },

    #[error("invalid window: {0}")]
    InvalidWindow(String),

    #[error("invalid time: {0}")]
    InvalidTime(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("state diverged at step {step} (value {value:e})")]
    Divergence { step: usize, value: f64 },

    #[error("degenerate sample: {0}")]
    DegenerateSample(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}
