//! `divflow` — config-driven front-end for the solver and its
//! verification harness.
//!
//! Experiments are described by one JSON file (grid / potential / noise /
//! solver / experiment blocks); flags only select the file, the output
//! directory, and an optional seed override. Exit codes: 0 success,
//! 2 validation error, 3 numerical failure; failures print a
//! machine-readable record to stderr and write `error.json` when the
//! output directory exists.

use clap::{Args, Parser, Subcommand};
use divflow::config::ExperimentKind;
use divflow::experiment::{self, ErrorRecord};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "divflow", version, about = "divergence-form SPDE solver and verifier")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Path to the JSON config (a manifest.json is also accepted)
    #[arg(long)]
    config: PathBuf,
    /// Override the config's output directory
    #[arg(long)]
    output: Option<PathBuf>,
    /// Override the config's RNG seed (also honored via DIVFLOW_SEED)
    #[arg(long)]
    seed_override: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run a solve experiment (ensemble trajectories + summaries)
    Solve(RunArgs),
    /// Run the diagnostic battery over a τ-refinement ladder
    Verify(RunArgs),
    /// Run coupled-noise refinement ladders (λ, ε, τ)
    Converge(RunArgs),
    /// Tabulate the configured potential and its derived maps
    PotentialTable(RunArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (args, expected) = match &cli.command {
        Command::Solve(a) => (a, ExperimentKind::Solve),
        Command::Verify(a) => (a, ExperimentKind::Verify),
        Command::Converge(a) => (a, ExperimentKind::Converge),
        Command::PotentialTable(a) => (a, ExperimentKind::PotentialTable),
    };
    match run_checked(args, expected) {
        Ok(outcome) => {
            println!("wrote {} file(s) to {}", outcome.files.len(), outcome.output_dir.display());
            ExitCode::SUCCESS
        }
        Err(err) => {
            let record = ErrorRecord::from_error(&err);
            eprintln!("{}", serde_json::to_string(&record).unwrap_or_else(|_| err.to_string()));
            ExitCode::from(err.exit_code() as u8)
        }
    }
}

fn run_checked(
    args: &RunArgs,
    expected: ExperimentKind,
) -> divflow::Result<experiment::RunOutcome> {
    // the table subcommand inspects any config's potential block; the
    // others must match the declared experiment kind
    if expected == ExperimentKind::PotentialTable {
        return experiment::run_as(
            &args.config,
            args.output.as_deref(),
            args.seed_override,
            Some(expected),
        );
    }
    let config = divflow::config::RunConfig::from_file(&args.config)?;
    if config.experiment.kind != expected {
        return Err(divflow::Error::Config(format!(
            "config declares experiment kind {:?} but the {:?} subcommand was invoked",
            config.experiment.kind, expected
        )));
    }
    experiment::run(&args.config, args.output.as_deref(), args.seed_override)
}
