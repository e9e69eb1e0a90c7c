//! Command-line trainer, file formats and experiment harness built on
//! `coforest-core`.

pub mod bench;
pub mod cli;
pub mod config;
pub mod csv_io;
pub mod datasets;
pub mod error;
pub mod executor;
pub mod model_io;
pub mod pipeline;
pub mod report;

pub use error::{AppError, Result};
