//! Library side of the `heavytail-ou` binary: configuration, the six
//! experiments and their CSV and JSON outputs.

pub mod commands;
pub mod config;
pub mod output;

use std::path::PathBuf;

pub use config::{Experiment, RunConfig};

#[derive(Debug)]
pub enum CliError {
    /// Unreadable or invalid configuration (exit code 2).
    Config(String),
    /// A check ran and failed (exit code 1).
    Failed(String),
    /// Anything else that stopped the run (exit code 1).
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Failed(_) | CliError::Runtime(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Failed(m) => write!(f, "check failed: {m}"),
            CliError::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<heavytail_core::Error> for CliError {
    fn from(e: heavytail_core::Error) -> Self {
        use heavytail_core::Error as E;
        match e {
            E::InvalidInput(_) | E::OutOfRegime(_) => CliError::Config(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(format!("i/o: {e}"))
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Runtime(format!("csv: {e}"))
    }
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

/// Loads the config, applies overrides and runs the experiment. Returns the
/// output directory.
pub fn run(experiment: Experiment, config: &std::path::Path, overrides: &Overrides) -> Result<PathBuf, CliError> {
    let mut cfg = RunConfig::load(config)?;
    if let Some(e) = cfg.experiment {
        if e != experiment {
            return Err(CliError::Config(format!(
                "config is for experiment '{}' but '{}' was requested",
                e.name(),
                experiment.name()
            )));
        }
    }
    cfg.experiment = Some(experiment);
    if let Some(seed) = overrides.seed {
        cfg.seeds.master = seed;
    }
    if let Some(out) = &overrides.out {
        cfg.output_dir = out.clone();
    }
    commands::execute(&cfg)?;
    Ok(cfg.output_dir)
}
