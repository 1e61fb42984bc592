//! Experiment harness, file formats and CLI plumbing around `ivbench-core`.

pub mod compare;
pub mod config;
pub mod error;
pub mod formats;
pub mod harness;
pub mod records;
pub mod scaling;

pub use config::{ExperimentConfig, Gates, Pipeline};
pub use error::{HarnessError, Result};
pub use records::RdRecord;
