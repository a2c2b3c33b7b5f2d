//! Scenario runner: reads a scenario file, runs traces, Monte Carlo
//! ensembles, sampling-period design, EDP sweeps or the DEP check, and writes
//! plot-ready CSV plus a `summary.json` that echoes the resolved config.

pub mod commands;
pub mod config;
mod output;

use std::path::PathBuf;

use thiserror::Error;

pub use commands::{run_command, Command, Report, RunOptions};
pub use config::ScenarioConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("infeasible design: {0}")]
    Infeasible(String),
    #[error(transparent)]
    Core(#[from] onestate::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    /// 2 for configuration problems, 3 for an infeasible design, 1 otherwise.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Infeasible(_) => 3,
            _ => 1,
        }
    }
}
