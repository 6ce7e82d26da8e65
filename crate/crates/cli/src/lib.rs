//! Command-line harness for `drmoe-core`: feature-file IO, JSON configs,
//! checkpoints and reports, and the ablation grid.

pub mod ablate;
pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;
pub mod io;
pub mod report;

pub use error::{CliError, Result};
