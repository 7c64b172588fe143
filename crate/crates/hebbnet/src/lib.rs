//! Files, datasets and the command line around `hebbnet-core`.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod datasets;
pub mod error;
pub mod features;
pub mod formats;
pub mod metrics;
pub mod pipeline;

pub use error::{Error, Result};
