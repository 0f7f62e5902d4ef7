//! Command-line front end: `estimate`, `simulate`, `falsify`, `coverage` and
//! `diagnose`, each driven by a JSON run configuration.

mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use commands::{ExitCode, EXIT_ESTIMAND_FAILURE, EXIT_INVALID, EXIT_OK, EXIT_VIOLATED};
pub use config::{Overrides, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "trialfusion", version, about = "Treatment-effect estimation from trial plus external data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate the configured estimands, with optional bootstrap intervals.
    Estimate(CommonArgs),
    /// Draw a sample from a scenario and print its conditions and true values.
    Simulate(CommonArgs),
    /// Compare control-arm outcome means between trial and external data.
    Falsify(CommonArgs),
    /// Repeat sample, estimate and bootstrap to measure bias and coverage.
    Coverage(CommonArgs),
    /// Positivity audit, covariate support and control-arm comparison.
    Diagnose(CommonArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// JSON run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Input CSV (overrides the config).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Built-in scenario name or scenario file.
    #[arg(long)]
    pub scenario: Option<String>,
    /// Sample size drawn from the scenario.
    #[arg(long)]
    pub n: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads for replicate loops.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Bootstrap replicates; 0 disables the bootstrap.
    #[arg(long)]
    pub bootstrap: Option<usize>,
}

impl CommonArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            data: self.data.clone(),
            scenario: self.scenario.clone(),
            n: self.n,
            out: self.out.clone(),
            seed: self.seed,
            threads: self.threads,
            bootstrap: self.bootstrap,
        }
    }

    /// Config file (if any) with flag overrides applied.
    pub fn resolve(&self) -> crate::Result<RunConfig> {
        let mut config = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        config.apply(&self.overrides());
        Ok(config)
    }
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> ExitCode {
    let (name, args) = match &cli.command {
        Command::Estimate(a) => ("estimate", a),
        Command::Simulate(a) => ("simulate", a),
        Command::Falsify(a) => ("falsify", a),
        Command::Coverage(a) => ("coverage", a),
        Command::Diagnose(a) => ("diagnose", a),
    };
    let config = match args.resolve() {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_INVALID;
        }
    };
    let body = || match name {
        "estimate" => commands::cmd_estimate(&config),
        "simulate" => commands::cmd_simulate(&config),
        "falsify" => commands::cmd_falsify(&config),
        "coverage" => commands::cmd_coverage(&config),
        _ => commands::cmd_diagnose(&config),
    };
    let result = match config.threads {
        Some(t) => match rayon::ThreadPoolBuilder::new().num_threads(t).build() {
            Ok(pool) => pool.install(body),
            Err(e) => {
                eprintln!("error: could not start {t} worker threads: {e}");
                return EXIT_INVALID;
            }
        },
        None => body(),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_INVALID
        }
    }
}
