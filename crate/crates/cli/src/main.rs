//! `fieldsense` command-line tool.
//!
//! Exit codes: 0 success, 1 usage or config error, 2 the target is not
//! estimable from the sensors, 3 a simulation step failed.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use fieldsense::ErrorClass;

use crate::commands::Outputs;
use crate::config::RunConfig;

#[derive(Parser)]
#[command(
    name = "fieldsense",
    version,
    about = "Precision bounds and protocols for distributed field sensing"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute the bound, optimal weights and dual certificate.
    Solve(Args),
    /// Simulate the protocol and compare its variance with theory.
    Simulate(Args),
    /// Sweep the two-step protocol over total times.
    Sweep(Args),
    /// Search for sensor positions minimizing the bound.
    Place(Args),
}

#[derive(clap::Args)]
struct Args {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Override every seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for output files (overrides `out_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Suppress the report on stdout.
    #[arg(long)]
    quiet: bool,
}

fn run(command: Command) -> Result<()> {
    let (Command::Solve(args)
    | Command::Simulate(args)
    | Command::Sweep(args)
    | Command::Place(args)) = &command;
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.set_seed(seed);
    }
    let out = Outputs {
        dir: args.out.clone().or_else(|| cfg.out_dir.clone()),
        quiet: args.quiet,
    };
    match command {
        Command::Solve(_) => commands::solve(&cfg, &out),
        Command::Simulate(_) => commands::simulate(&cfg, &out),
        Command::Sweep(_) => commands::sweep(&cfg, &out),
        Command::Place(_) => commands::place(&cfg, &out),
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if let Some(err) = cause.downcast_ref::<fieldsense::Error>() {
            return match err.class() {
                ErrorClass::Input => 1,
                ErrorClass::Infeasible => 2,
                ErrorClass::Simulation => 3,
            };
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
