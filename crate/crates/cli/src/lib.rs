//! Command-line front end: loads a run configuration, executes one command
//! and writes its report and plot-ready CSV files.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use commands::{run, RunSummary};
pub use config::{Command, RunConfig};
pub use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "esperiod", version, about = "Periodic solutions of time-periodic ODEs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Sub,
}

#[derive(Debug, Subcommand)]
pub enum Sub {
    /// Integrate a system and sample it on a uniform grid.
    Simulate(RunArgs),
    /// Locate a periodic solution through the return map.
    FindPeriodic(RunArgs),
    /// Check a contraction certificate on a box.
    Certify(RunArgs),
    /// Evaluate every condition and bound of an extremum-seeking loop.
    EsAnalyze(RunArgs),
    /// Compute the periodic solution of an extremum-seeking loop.
    EsSolve(RunArgs),
    /// Find a limit cycle of a planar system through its scalar reduction.
    Planar(RunArgs),
    /// Van der Pol cascade: limit-cycle period and convergence of the driven state.
    DemoCascade(RunArgs),
}

#[derive(Debug, Clone, Default, clap::Args)]
pub struct RunArgs {
    /// TOML run configuration.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
    /// `section.key=value`, applied after the config file.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

impl Sub {
    pub fn split(&self) -> (Command, &RunArgs) {
        match self {
            Self::Simulate(a) => (Command::Simulate, a),
            Self::FindPeriodic(a) => (Command::FindPeriodic, a),
            Self::Certify(a) => (Command::Certify, a),
            Self::EsAnalyze(a) => (Command::EsAnalyze, a),
            Self::EsSolve(a) => (Command::EsSolve, a),
            Self::Planar(a) => (Command::Planar, a),
            Self::DemoCascade(a) => (Command::DemoCascade, a),
        }
    }
}

/// Config file, then overrides, then `--out`/`--seed`, then defaults.
pub fn load_config(command: Command, args: &RunArgs) -> Result<RunConfig, CliError> {
    let base = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let mut cfg = base.with_overrides(&args.overrides)?;
    if let Some(out) = &args.out {
        cfg.output_dir = Some(out.clone());
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    cfg.resolve(command)
}

/// Runs the parsed command line and returns the process exit code.
pub fn execute(cli: &Cli) -> u8 {
    let (command, args) = cli.command.split();
    let outcome = load_config(command, args).and_then(|cfg| run(&cfg));
    match outcome {
        Ok(summary) => {
            println!("{}: {}", command.name(), summary.status);
            for f in &summary.files {
                println!("  wrote {}", f.display());
            }
            summary.exit_code
        }
        Err(e) => {
            eprintln!("esperiod {}: {e}", command.name());
            e.exit_code()
        }
    }
}
