//! The `tumorctl` command-line front end.
//!
//! Every subcommand reads an optional scenario file (see [`ScenarioConfig`]),
//! prints `key = value` lines or a table to stdout and, with `--out DIR`,
//! writes CSV artifacts. Exit codes: 0 success, 1 invalid input, 2 numerical
//! failure (or failed verification), 3 infeasible terminal constraint.

mod commands;
mod config;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::{IntegratorKind, ScenarioConfig, SolverChoice};

use crate::error::{Error, Result};

pub const EXIT_OK: u8 = 0;
pub const EXIT_INVALID: u8 = 1;
pub const EXIT_NUMERICAL: u8 = 2;
pub const EXIT_INFEASIBLE: u8 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "tumorctl",
    version,
    about = "Tumor-immune therapy simulation, equilibria and optimal dosing"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Integrate the model and report the nearest treatment-free equilibrium.
    Simulate(CommonArgs),
    /// Tabulate treatment-free equilibria and their stability.
    Equilibria(CommonArgs),
    /// Compute an optimal therapy schedule.
    Optimize(CommonArgs),
    /// Check a candidate schedule against the necessary optimality conditions.
    Verify(VerifyArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Scenario file with `key = value` lines.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory for CSV artifacts; nothing is written without it.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Parameter overrides applied after the scenario file.
    #[arg(long)]
    pub params: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Candidate schedule (`t,u_I,u_C,u_R`, days).
    #[arg(long)]
    pub schedule: PathBuf,
    /// Candidate state trajectory; re-integrated from the schedule if absent.
    #[arg(long)]
    pub trajectory: Option<PathBuf>,
    /// Candidate costates; integrated backward from the horizon if absent.
    #[arg(long)]
    pub costates: Option<PathBuf>,
}

pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Infeasible { .. } => EXIT_INFEASIBLE,
        Error::BlowUp { .. }
        | Error::StepUnderflow { .. }
        | Error::NotConverged { .. }
        | Error::NonFinite(_) => EXIT_NUMERICAL,
        _ => EXIT_INVALID,
    }
}

fn load_config(args: &CommonArgs) -> Result<ScenarioConfig> {
    let mut cfg = match &args.config {
        Some(path) => ScenarioConfig::load(path)?,
        None => ScenarioConfig::default(),
    };
    if let Some(path) = &args.params {
        cfg.apply_param_file(path)?;
    }
    Ok(cfg)
}

fn dispatch(command: &Command, stdout: &mut dyn Write) -> Result<u8> {
    match command {
        Command::Simulate(args) => {
            commands::simulate(&load_config(args)?, args.out.as_deref(), stdout)
        }
        Command::Equilibria(args) => {
            commands::equilibria(&load_config(args)?, args.out.as_deref(), stdout)
        }
        Command::Optimize(args) => {
            commands::optimize(&load_config(args)?, args.out.as_deref(), stdout)
        }
        Command::Verify(args) => commands::verify(&load_config(&args.common)?, args, stdout),
    }
}

/// Parses `args` (program name first) and runs the subcommand.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = write!(stderr, "{}", e.render());
            return if e.use_stderr() {
                EXIT_INVALID
            } else {
                EXIT_OK
            };
        }
    };
    match dispatch(&cli.command, stdout) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            exit_code(&e)
        }
    }
}
