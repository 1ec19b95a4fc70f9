//! `edgeprior`: synthesize blurred measurements, estimate with the
//! edge-preserving hierarchical prior, run discretization diagnostics, and
//! tabulate run reports.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numerical failure,
//! 4 failed check.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::Suite;
use crate::config::ExperimentConfig;
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "edgeprior", version, about)]
struct Cli {
    /// JSON experiment configuration; every field has a default.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides `out`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed for both the measurement noise and the sampler.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Print the resolved configuration and exit.
    #[arg(long, global = true)]
    print_config: bool,
    /// Re-check written outputs (synthesize).
    #[arg(long, global = true)]
    verify: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write truth, measurement and provenance files.
    Synthesize,
    /// Run the sampler on a measurement and write the CM estimate and report.
    Estimate {
        /// Measurement file; defaults to `<out>/measurement.json`.
        #[arg(long)]
        measurement: Option<PathBuf>,
    },
    /// Run discretization diagnostics.
    Diagnose {
        #[arg(long, value_enum, default_value = "all")]
        suite: Suite,
    },
    /// Tabulate run reports; defaults to `<out>/report.json`.
    Report { inputs: Vec<PathBuf> },
}

fn resolve(cli: &Cli) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
        cfg.mcmc.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = resolve(&cli)?;
    if cli.print_config {
        println!(
            "{}",
            serde_json::to_string_pretty(&cfg).expect("config serializes")
        );
        return Ok(());
    }
    match cli.command {
        None => Err(CliError::Config(
            "no subcommand given (synthesize, estimate, diagnose, report)".into(),
        )),
        Some(Command::Synthesize) => commands::synthesize(&cfg, cli.verify),
        Some(Command::Estimate { measurement }) => {
            let m = measurement.unwrap_or_else(|| cfg.out.join("measurement.json"));
            commands::estimate(&cfg, &m).map(|_| ())
        }
        Some(Command::Diagnose { suite }) => commands::diagnose(&cfg, suite).map(|_| ()),
        Some(Command::Report { inputs }) => commands::report(&cfg, &inputs),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
