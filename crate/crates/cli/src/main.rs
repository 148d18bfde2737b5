use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use volterra_lab_cli::{run, CliError, ConfigFile, Experiment, ExperimentConfig, Overrides};

/// Run one volterra-lab experiment and write its CSV tables and manifest.
#[derive(Debug, Parser)]
#[command(name = "volterra-lab", version)]
struct Args {
    experiment: Experiment,
    /// TOML file with optional `seed`, `out` and per-experiment tables.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    n_paths: Option<usize>,
    /// Comma-separated truncation levels.
    #[arg(long, value_delimiter = ',')]
    n_list: Option<Vec<usize>>,
    #[arg(long)]
    phi: Option<String>,
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long)]
    n_grid: Option<usize>,
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    reg_degree: Option<usize>,
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("VLAB_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Config(format!("VLAB_THREADS must be a positive integer, got '{raw}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(format!("VLAB_THREADS: {e}")))
}

fn main_inner(args: Args) -> Result<(), CliError> {
    configure_threads()?;
    let file = match &args.config {
        Some(path) => ConfigFile::load(path)?,
        None => ConfigFile::default(),
    };
    let mut cfg = ExperimentConfig::from_file(args.experiment, &file);
    cfg.apply(&Overrides {
        seed: args.seed,
        out: args.out,
        n_paths: args.n_paths,
        n_list: args.n_list,
        phi: args.phi,
        horizon: args.horizon,
        n_grid: args.n_grid,
        preset: args.preset,
        reg_degree: args.reg_degree,
    })?;
    let summary = run(&cfg)?;
    for t in &summary.tables {
        println!("{}", summary.out.join(format!("{}.csv", t.name)).display());
    }
    log::info!("{} finished in {:.2} s", cfg.experiment, summary.wall_seconds);
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = Args::parse();
    match main_inner(args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("volterra-lab: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
