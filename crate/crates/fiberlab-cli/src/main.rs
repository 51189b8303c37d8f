//! Experiment harness for the tabular gated-objective laboratory.
//!
//! Subcommands: `gen` (synthetic batch/policy files), `sweep`
//! (objective traces under parameterized drift), `simplex-map` (regime map
//! over the three-token constraint surface), `verify` (the full check
//! suite), `equivalence`, and `gradcheck`.
//!
//! Exit codes: 0 on success, 1 when a check fails, 2 on configuration
//! errors.

mod config;
mod gen;
mod gradcheck;
mod output;
mod simplex;
mod sweep;
mod verify;

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::ExperimentConfig;

#[derive(Parser)]
#[command(name = "fiberlab", about = "Tabular ratio-gating laboratory", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// JSON experiment configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Seed override; the seed fully determines all randomness.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Method label (ppo | grpo | gspo | apc | fiberpo | fiberpo-domain);
    /// restricts the sweep to a single objective column.
    #[arg(long, global = true)]
    method: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded batch and policy pair as JSON files.
    Gen,
    /// Emit objective traces under parameterized drift as CSV.
    Sweep,
    /// Emit the joint regime map on the probability simplex as CSV.
    SimplexMap,
    /// Run the verification suite and write a JSON report.
    Verify {
        /// Deliberately break a named component to prove the suite catches
        /// it (supported: non-reflecting-kernel).
        #[arg(long)]
        inject_fault: Option<String>,
    },
    /// Run the trust-region equivalence harness and write a JSON report.
    Equivalence,
    /// Run first-order and Jacobian gradient checks and write a JSON report.
    Gradcheck,
}

/// A configuration problem: maps to exit code 2.
#[derive(Debug)]
struct ConfigError(String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

fn load_config(cli: &Cli) -> anyhow::Result<ExperimentConfig> {
    let mut config = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
            serde_json::from_str::<ExperimentConfig>(&text)
                .map_err(|e| ConfigError(format!("{}: {e}", path.display())))?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(method) = &cli.method {
        method
            .parse::<fiberlab::rgf::Method>()
            .map_err(|e| ConfigError(e.to_string()))?;
    }
    for label in &config.methods {
        label
            .parse::<fiberlab::rgf::Method>()
            .map_err(|e| ConfigError(e.to_string()))?;
    }
    Ok(config)
}

fn run(cli: &Cli) -> anyhow::Result<bool> {
    let config = load_config(cli)?;
    match &cli.command {
        Command::Gen => {
            gen::run(&config, &cli.out)?;
            Ok(true)
        }
        Command::Sweep => {
            sweep::run(&config, &cli.out, cli.method.as_deref())?;
            Ok(true)
        }
        Command::SimplexMap => {
            simplex::run(&config, &cli.out)?;
            Ok(true)
        }
        Command::Verify { inject_fault } => verify::run(&config, &cli.out, inject_fault.as_deref()),
        Command::Equivalence => gradcheck::run_equivalence(&config, &cli.out),
        Command::Gradcheck => gradcheck::run_gradcheck(&config, &cli.out),
    }
}

fn is_config_error(err: &anyhow::Error) -> bool {
    if err.downcast_ref::<ConfigError>().is_some() {
        return true;
    }
    matches!(
        err.downcast_ref::<fiberlab::Error>(),
        Some(fiberlab::Error::InvalidConfig(_)) | Some(fiberlab::Error::NonFinite(_))
    )
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(err) => {
            eprintln!("error: {err:#}");
            if is_config_error(&err) {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
