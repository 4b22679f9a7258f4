#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::RunConfig;

#[derive(Debug)]
pub enum CliError {
    /// Bad configuration or input; exit code 2.
    Config(String),
    /// Library error; numerical failures exit with 3, everything else with 2.
    Core(poolsmooth::Error),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "configuration error: {msg}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<poolsmooth::Error> for CliError {
    fn from(e: poolsmooth::Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Core(poolsmooth::Error::Io(e.to_string()))
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) if e.is_numerical() => 3,
            _ => 2,
        }
    }
}

#[derive(Parser)]
#[command(name = "poolsmooth", version, about = "Kernel regression with pooled responses")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Run configuration (`key = value` lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Master seed; overrides `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for replications and resamples.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Monte Carlo study: replications.csv, curves.csv, quartiles.csv.
    Simulate,
    /// Fit curves to data: curve.csv, plus cv_trace.csv and pseudo.csv when relevant.
    Fit,
    /// Cross-validated bandwidths: bandwidth.csv and cv_trace.csv.
    Bandwidth,
    /// Asymptotic bias and variance over the grid: theory.csv.
    Theory,
    /// Pool bootstrap bands: bands.csv.
    Bootstrap,
}

fn load(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
            RunConfig::parse(&text)?
        }
        None => RunConfig::default(),
    };
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if cli.jobs == 0 {
        return Err(CliError::Config("flag `--jobs`: must be at least 1".into()));
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = load(cli)?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    std::fs::write(cfg.output_dir.join("resolved-config"), cfg.render())?;
    match cli.command {
        Command::Simulate => commands::simulate(&cfg, cli.jobs),
        Command::Fit => commands::fit(&cfg, cli.jobs),
        Command::Bandwidth => commands::bandwidth(&cfg, cli.jobs),
        Command::Theory => commands::theory(&cfg),
        Command::Bootstrap => commands::bootstrap(&cfg, cli.jobs),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("poolsmooth: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
