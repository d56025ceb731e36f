//! Command-line front end: data generation, estimation, calibration,
//! solving, evaluation and sensitivity sweeps driven by a JSON config.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use crate::commands::Command;
use crate::config::RunConfig;
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "pgrtb", version, about = "Price and allocate guaranteed ad contracts alongside real-time bidding")]
struct Args {
    #[arg(value_enum)]
    command: Command,
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Random seed; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated slot ids to process.
    #[arg(long, value_delimiter = ',')]
    slots: Option<Vec<String>>,
}

fn run(args: &Args) -> Result<(), CliError> {
    let mut config = RunConfig::load(&args.config)?;
    if let Some(out) = &args.out {
        config.out = Some(out.clone());
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    commands::run(args.command, &config, args.slots.as_deref())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) if e.use_stderr() => {
            eprintln!("{}", CliError::config(e.to_string().trim_end()).to_json());
            return ExitCode::from(error::EXIT_INVALID_CONFIG as u8);
        }
        Err(e) => {
            // --help and --version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.code as u8)
        }
    }
}
