//! `ssbench`: dataset generation, training, attacks, defenses, evaluation
//! and reporting from the command line.
//!
//! Exit codes: 0 on success, 1 on usage or configuration errors, 2 when the
//! run itself fails.

mod commands;
mod config;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::Flags;

#[derive(Debug, Parser)]
#[command(
    name = "ssbench",
    version,
    about = "Transferable point cloud attack benchmark"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the synthetic shape dataset.
    GenData(Flags),
    /// Train a classifier or the autoencoder.
    Train(Flags),
    /// Craft adversarial examples against one victim.
    Attack(Flags),
    /// Apply a defense to a directory of clouds.
    Defend(Flags),
    /// Run the victim x transfer x attack x defense matrix.
    Eval(Flags),
    /// Vary one attack parameter and report transferability per value.
    Sweep(Flags),
    /// Re-emit a saved report as CSV, JSON or SVG.
    Report(Flags),
}

impl Command {
    fn split(self) -> (&'static str, Flags) {
        match self {
            Command::GenData(f) => ("gen-data", f),
            Command::Train(f) => ("train", f),
            Command::Attack(f) => ("attack", f),
            Command::Defend(f) => ("defend", f),
            Command::Eval(f) => ("eval", f),
            Command::Sweep(f) => ("sweep", f),
            Command::Report(f) => ("report", f),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let (name, flags) = cli.command.split();
    let env_seed = std::env::var("SSBENCH_SEED").ok();
    let cfg = match config::resolve(&flags, name, env_seed.as_deref()) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(1);
        }
    };
    match commands::run(name, &cfg) {
        Ok(()) => ExitCode::SUCCESS,
        Err(commands::Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(commands::Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
