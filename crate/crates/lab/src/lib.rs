//! Sweep driver, result files and command line for the PON equalization lab.
//!
//! The numerical work lives in `ponlab_core`; this crate reads configs,
//! schedules (model, ROP) points over a worker pool and writes CSV results,
//! checkpoints and dataset dumps.

use std::path::Path;

pub mod config;
pub mod experiment;
pub mod io;
pub mod sweep;

#[derive(Debug, thiserror::Error)]
pub enum LabError {
    #[error(transparent)]
    Core(#[from] ponlab_core::Error),
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("format: {0}")]
    Format(String),
}

impl LabError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io { path: path.display().to_string(), source }
    }
}
