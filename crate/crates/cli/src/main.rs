//! `gatedpose` executable: synth, maskgen, train, infer, traj and eval.
//!
//! Exit codes: 0 on success, 1 on a usage error, 2 on a data or validation
//! error.

mod args;
mod commands;
mod config;
mod manifest;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

use args::{Cli, Command};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(anyhow::Error),
}

impl CliError {
    pub fn data(msg: impl std::fmt::Display) -> Self {
        CliError::Data(anyhow::anyhow!("{msg}"))
    }
}

impl<E: Into<anyhow::Error>> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError::Data(e.into())
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}\n\nFor more information, try '--help'.");
            ExitCode::from(1)
        }
        Err(CliError::Data(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let name = cli.command.name();
    let file = match &cli.config {
        Some(path) => config::load_section(path, name)?,
        None => Default::default(),
    };
    let started = std::time::Instant::now();
    let (settings, record) = match &cli.command {
        Command::Synth(a) => {
            let s = config::resolve(file, a)?;
            let r = commands::synth::run(&s)?;
            (serde_json::to_value(s)?, r)
        }
        Command::Maskgen(a) => {
            let s = config::resolve(file, a)?;
            let r = commands::maskgen::run(&s)?;
            (serde_json::to_value(s)?, r)
        }
        Command::Train(a) => {
            let s = config::resolve(file, a)?;
            let r = commands::train::run(&s)?;
            (serde_json::to_value(s)?, r)
        }
        Command::Infer(a) => {
            let s = config::resolve(file, a)?;
            let r = commands::infer::run(&s)?;
            (serde_json::to_value(s)?, r)
        }
        Command::Traj(a) => {
            let s = config::resolve(file, a)?;
            let r = commands::traj::run(&s)?;
            (serde_json::to_value(s)?, r)
        }
        Command::Eval(a) => {
            let s = config::resolve(file, a)?;
            let r = commands::eval::run(&s)?;
            (serde_json::to_value(s)?, r)
        }
    };
    manifest::write(name, settings, record, started.elapsed())?;
    Ok(())
}
