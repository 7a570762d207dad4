//! Command-line front end for the mknn engine: configuration, dataset
//! files, the `generate`/`run`/`verify`/`bench` modes and their CSV output.

pub mod config;
pub mod dataset;
pub mod driver;
pub mod output;

use std::path::{Path, PathBuf};

use mknn_core::engine::EngineError;
use mknn_core::workload::WorkloadError;
use thiserror::Error;

pub use config::{RunConfig, Study, ThQuad};
pub use driver::{execute, run_study, BenchRow, Mode, Outcome};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config{}: {msg}", line.map_or(String::new(), |l| format!(" line {l}")))]
    Config { line: Option<usize>, msg: String },
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}:{line}: {msg}", path.display())]
    Dataset { path: PathBuf, line: usize, msg: String },
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Workload(#[from] WorkloadError),
}

impl HarnessError {
    pub fn config(line: Option<usize>, msg: String) -> Self {
        HarnessError::Config { line, msg }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        HarnessError::Io { path: path.to_path_buf(), source }
    }

    pub fn dataset(path: &Path, line: usize, msg: String) -> Self {
        HarnessError::Dataset { path: path.to_path_buf(), line, msg }
    }
}
