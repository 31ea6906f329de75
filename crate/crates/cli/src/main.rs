use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand, ValueEnum};
use thiserror::Error;

mod commands;
mod output;

#[derive(Debug, Error)]
pub enum CliError {
    /// Unreadable input, bad configuration, or a scenario that fails validation.
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Solve(String),
    #[error("{0}")]
    Output(String),
    #[error("{0}")]
    SuiteFailed(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Solve(_) | CliError::Output(_) => 2,
            CliError::SuiteFailed(_) => 3,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "rbsde",
    version,
    about = "Doubly reflected BSDE lab on a binomial lattice"
)]
pub struct Cli {
    /// Write the JSON report here (atomically) and tables next to it as .csv.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Omit the generation timestamp so reruns are byte-identical.
    #[arg(long, global = true)]
    pub no_timestamp: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SchemeArg {
    Projection,
    Penalized,
    Picard,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScheduleMode {
    /// Use the `--penalty-schedule` pairs as given.
    Simultaneous,
    /// Raise `m` through `--levels`, then `n`.
    Sequential,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a scenario file against the standing assumptions.
    Validate {
        scenario: PathBuf,
        /// Semimartingale witness file to check between the barriers.
        #[arg(long)]
        witness: Option<PathBuf>,
    },
    /// Solve the reflected equation on the lattice.
    Solve {
        scenario: PathBuf,
        #[arg(long, value_enum, default_value_t = SchemeArg::Projection)]
        scheme: SchemeArg,
        /// Override the scenario's step count.
        #[arg(long)]
        steps: Option<usize>,
        /// `m1:n1,m2:n2,...`; the penalized scheme uses the last pair.
        #[arg(long)]
        penalty_schedule: Option<String>,
        /// Weight of the Picard contraction norm.
        #[arg(long)]
        gamma: Option<f64>,
    },
    /// Penalization table against the projection solution.
    Penalize {
        scenario: PathBuf,
        #[arg(long)]
        penalty_schedule: Option<String>,
        #[arg(long, value_enum, default_value_t = ScheduleMode::Simultaneous)]
        mode: ScheduleMode,
        /// Comma-separated penalty levels for the sequential mode.
        #[arg(long, value_delimiter = ',', default_values_t = [1.0, 4.0, 16.0, 64.0, 256.0, 1024.0])]
        levels: Vec<f64>,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Compare the solution with the value of the associated stopping game.
    Dynkin {
        scenario: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Randomized comparison suite.
    Verify {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Pairs generated per ordering mode.
        #[arg(long, default_value_t = 25)]
        count: usize,
        /// Rerun a single item by its index.
        #[arg(long)]
        only: Option<usize>,
    },
    /// Root value error against a fine reference lattice.
    Convergence {
        scenario: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = [8usize, 16, 32, 64])]
        step_counts: Vec<usize>,
        /// Defaults to four times the finest step count.
        #[arg(long)]
        reference_steps: Option<usize>,
    },
    /// Solutions with one datum truncated at increasing levels.
    Truncation {
        scenario: PathBuf,
        /// One of lower_cap, upper_floor, terminal_cap, terminal_floor,
        /// driver_cap, or all.
        #[arg(long, default_value = "all")]
        mode: String,
        #[arg(long, value_delimiter = ',', default_values_t = [0.5, 1.0, 2.0, 4.0, 8.0])]
        levels: Vec<f64>,
        #[arg(long)]
        steps: Option<usize>,
    },
}

fn main() -> ExitCode {
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
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("rbsde: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
