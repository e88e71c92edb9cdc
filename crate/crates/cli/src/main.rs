#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::{CommandKind, Config, Overrides};
use crate::error::CliError;

#[derive(Parser)]
#[command(
    name = "bbm-lab",
    version,
    about = "Simulate critical branching Brownian motion and check its limit theorems",
    after_help = config::help()
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML configuration file (format bbm-config/1)
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Master seed
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,

    /// Replicate count for the running command
    #[arg(long, global = true, value_name = "N")]
    reps: Option<u64>,

    /// Time parameter for the running command (horizon or observation time)
    #[arg(long = "t", global = true, value_name = "REAL")]
    t: Option<f64>,

    /// Output directory
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Comma-separated suites for `verify`
    #[arg(long, global = true, value_name = "NAME[,..]", value_delimiter = ',')]
    suite: Option<Vec<String>>,

    /// Worker threads; 0 uses every core, 1 runs sequentially
    #[arg(long, global = true, value_name = "N", env = "BBM_LAB_WORKERS")]
    workers: Option<usize>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Run replicates; write population dumps, stopping lines and run statistics
    Simulate,
    /// Run verification suites; exit 1 if any check fails
    Verify,
    /// Tabulate limit constants for catalog functionals
    Constants,
    /// Build a fluctuation ensemble and test its limit law
    Fluctuations,
    /// Compare stopping-line moments with their closed form
    StoppingLine,
}

impl Command {
    fn kind(self) -> CommandKind {
        match self {
            Command::Simulate => CommandKind::Simulate,
            Command::Verify => CommandKind::Verify,
            Command::Constants => CommandKind::Constants,
            Command::Fluctuations => CommandKind::Fluctuations,
            Command::StoppingLine => CommandKind::StoppingLine,
        }
    }
}

fn run(cli: Cli) -> Result<bool, CliError> {
    let kind = cli.command.kind();
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    cfg.apply(
        kind,
        &Overrides {
            seed: cli.seed,
            reps: cli.reps,
            t: cli.t,
            out: cli.out,
            suites: cli.suite,
            workers: cli.workers,
        },
    )?;
    let outcome = commands::run(kind, &cfg)?;
    println!("manifest {}", outcome.manifest_hash);
    Ok(outcome.pass)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("bbm-lab: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
