//! `sdecal`: simulate, estimate and run Monte Carlo experiments from a JSON
//! config.
//!
//! Exit codes: 0 on success, 2 for configuration or input errors, 3 for
//! numerical failures.

mod commands;
mod config;
mod models;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use config::{Command, Overrides, RunConfig};

#[derive(Debug)]
pub enum CliError {
    /// Bad configuration or input; the message names the offending key.
    Config(String),
    Numerical(sdecal::Error),
}

impl From<sdecal::Error> for CliError {
    fn from(e: sdecal::Error) -> Self {
        if e.is_input_error() {
            CliError::Config(e.to_string())
        } else {
            CliError::Numerical(e)
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "sdecal", version, about = "Drift and diffusion estimation for SDEs from high-frequency data")]
struct Args {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the simulation seed and the experiment seed base.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `simulation.epsilon`, or the experiment grid with a single value.
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    gap_exponent: Option<f64>,
    #[arg(long)]
    replications: Option<usize>,
    /// Worker threads for experiments (default: available cores).
    #[arg(long)]
    threads: Option<usize>,
}

fn execute(args: &Args) -> Result<(), CliError> {
    let overrides = Overrides {
        seed: args.seed,
        out: args.out.clone(),
        epsilon: args.epsilon,
        gap_exponent: args.gap_exponent,
        replications: args.replications,
    };
    let cfg = RunConfig::load(&args.config)?.resolve(&overrides)?;
    let (model, theta) = models::build(&cfg.model)?;
    if let Some(n) = args.threads {
        if n == 0 {
            return Err(CliError::Config("`--threads`: must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("`--threads`: {e}")))?;
    }
    commands::write_resolved(&cfg)?;
    match cfg.command {
        Command::Simulate => commands::simulate(&cfg, &model, &theta),
        Command::EstimateDrift => commands::estimate_drift(&cfg, &model),
        Command::EstimateDiffusion => commands::estimate_diffusion(&cfg, &model),
        Command::Experiment => commands::experiment(&cfg, model, theta).map(|_| ()),
    }
}

fn main() -> ExitCode {
    let args = Args::parse();
    match execute(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Numerical(e)) => {
            eprintln!("numerical error: {}: {e}", e.name());
            ExitCode::from(3)
        }
    }
}
