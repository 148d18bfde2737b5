//! Experiment runner behind the `volterra-lab` binary.

use std::path::PathBuf;
use std::time::Instant;

use thiserror::Error;
use volterra_lab::LabError;

pub mod config;
pub mod experiments;
pub mod report;

pub use config::{ConfigFile, Experiment, ExperimentConfig, Overrides};
pub use report::CsvTable;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Lab(#[from] LabError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    /// 2 for validation failures, 3 for numerical aborts, 1 for I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Lab(e) if e.is_numerical() => 3,
            CliError::Lab(_) => 2,
            CliError::Io { .. } => 1,
        }
    }
}

pub fn version() -> String {
    format!("v{}", env!("CARGO_PKG_VERSION"))
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub out: PathBuf,
    pub tables: Vec<CsvTable>,
    pub wall_seconds: f64,
}

/// Runs one experiment and writes its tables and `manifest.json` into the
/// configured output directory.
pub fn run(cfg: &ExperimentConfig) -> Result<RunSummary, CliError> {
    cfg.validate()?;
    let started_at = chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true);
    let clock = Instant::now();
    let tables = experiments::execute(cfg)?;
    let wall_seconds = clock.elapsed().as_secs_f64();
    std::fs::create_dir_all(&cfg.out).map_err(|source| CliError::Io {
        path: cfg.out.clone(),
        source,
    })?;
    for t in &tables {
        report::write_table(&cfg.out, t)?;
    }
    let manifest = report::Manifest {
        experiment: cfg.experiment.name().into(),
        config: serde_json::to_value(cfg.to_file()).map_err(|e| CliError::Config(e.to_string()))?,
        seed: cfg.seed,
        version: version(),
        started_at,
        wall_seconds,
        outputs: tables.iter().map(|t| format!("{}.csv", t.name)).collect(),
    };
    report::write_manifest(&cfg.out, &manifest)?;
    Ok(RunSummary {
        out: cfg.out.clone(),
        tables,
        wall_seconds,
    })
}
