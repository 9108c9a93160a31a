//! `nlskam`: configuration-driven runs of the KAM and normal-form pipeline.
//!
//! Exit status 0 on success, 1 when a checked point fails (resonance,
//! excluded parameter, unstable run), 2 for usage, configuration and
//! missing-input errors.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::Context;
use crate::config::ExperimentConfig;
use crate::output::OutputDir;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn usage(message: String) -> Self {
        CliError { code: 2, message }
    }
}

impl From<nlskam::Error> for CliError {
    fn from(e: nlskam::Error) -> Self {
        CliError { code: if e.is_domain_failure() { 1 } else { 2 }, message: e.to_string() }
    }
}

#[derive(Parser)]
#[command(name = "nlskam", version, about = "Finite-truncation KAM and partial normal form for NLS on the torus")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct RunArgs {
    /// TOML experiment configuration.
    config: PathBuf,
    /// Override a config value, e.g. `--set model.eps=1e-4`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Worker threads; results do not depend on it.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Melnikov conditions of the first KAM round for every sampled w.
    Check(RunArgs),
    /// KAM iteration for the first admissible w.
    Kam(RunArgs),
    /// Partial normal form around the torus found by `kam`.
    Nf(RunArgs),
    /// Distance to the torus up to time δ^{−M}.
    Stability(RunArgs),
    /// Excluded fraction of the sampling box over a grid of κ.
    Measure(RunArgs),
    /// Plot-ready summaries of the other outputs.
    ReportData(RunArgs),
}

fn run(cli: Cli) -> Result<bool, CliError> {
    let (args, cmd): (&RunArgs, fn(&Context) -> Result<bool, CliError>) = match &cli.command {
        Command::Check(a) => (a, commands::check),
        Command::Kam(a) => (a, commands::kam),
        Command::Nf(a) => (a, commands::nf),
        Command::Stability(a) => (a, commands::stability),
        Command::Measure(a) => (a, commands::measure),
        Command::ReportData(a) => (a, commands::report_data),
    };
    if args.jobs == 0 {
        return Err(CliError::usage("--jobs must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(args.jobs)
        .build_global()
        .map_err(|e| CliError::usage(e.to_string()))?;
    let cfg = ExperimentConfig::load(&args.config, &args.set)?;
    let out = OutputDir::new(cfg.output_dir.clone(), cfg.hash())?;
    cmd(&Context { cfg, out })
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
