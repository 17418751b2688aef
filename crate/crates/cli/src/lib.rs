//! Command-line front end: run configuration, checkpoints, reports and analyses.

pub mod analysis;
pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;
pub mod report;
pub mod svg;

pub use checkpoint::{Checkpoint, Stage};
pub use config::RunConfig;
pub use error::{CliError, Result};
