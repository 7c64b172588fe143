use alloc::string::String;

/// Errors raised by the core engine.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("batch norm running statistics are not available (no train-mode pass and none loaded)")]
    MissingStatistics,
    #[error("non-finite weights in layer {layer} at step {step}")]
    NonFinite { layer: usize, step: usize },
    #[error("classifier loss diverged at epoch {epoch}")]
    Divergence { epoch: usize },
}

pub type Result<T> = core::result::Result<T, Error>;

macro_rules! shape_err {
    ($($arg:tt)*) => { $crate::error::Error::Shape(alloc::format!($($arg)*)) };
}
macro_rules! config_err {
    ($($arg:tt)*) => { $crate::error::Error::Config(alloc::format!($($arg)*)) };
}
pub(crate) use config_err;
pub(crate) use shape_err;
