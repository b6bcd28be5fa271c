//! Dataset persistence and the `unpic` command-line pipeline.

pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;

pub use error::{CliError, Result};
