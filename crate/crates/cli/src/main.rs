//! `uials`: structural checks, gain design, simulation, ALS estimation and
//! identifiability diagnostics for systems with unknown inputs.

mod config;
mod error;
mod pipeline;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::RunConfig;
use error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "uials",
    version,
    about = "Unknown-input ALS identifiability toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Validate the system and check strong detectability.
    Analyze(Opts),
    /// Design a stabilizing, input-decoupling gain pair (F, L).
    Design(Opts),
    /// Simulate the plant and filter; write trajectories as CSV.
    Simulate(Opts),
    /// Estimate (Q, R) by autocovariance least squares.
    Estimate(Opts),
    /// Rank diagnostics, null-space witnesses and an equivalent (Q', R').
    Witness(Opts),
    /// Run every stage and write report.json and summary.txt.
    Report(Opts),
}

#[derive(Debug, Args)]
struct Opts {
    /// System JSON (A, B, G, C, D and optionally Q, R).
    #[arg(long)]
    system: Option<PathBuf>,
    /// Gains JSON (F, L) or `auto` to design them.
    #[arg(long)]
    gains: Option<String>,
    /// Autocovariance window N.
    #[arg(short = 'N', long = "window")]
    window: Option<usize>,
    /// Simulated data length.
    #[arg(long)]
    nd: Option<usize>,
    /// Unknown input: zero | step:T:l1,.. | sine:a1,..:period:phase | walk:var:seed | file:path
    #[arg(long)]
    input: Option<String>,
    /// Process-noise covariance JSON.
    #[arg(long)]
    q: Option<PathBuf>,
    /// Measurement-noise covariance JSON.
    #[arg(short = 'r', long = "r")]
    r: Option<PathBuf>,
    /// none | minnorm | tik:<lambda>
    #[arg(long)]
    reg: Option<String>,
    /// joint | q-only | r-only
    #[arg(long)]
    problem: Option<String>,
    /// Step along the witness direction for the equivalent pair.
    #[arg(long, allow_hyphen_values = true)]
    alpha: Option<f64>,
    /// Root seed for design and simulation.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// JSON config; its values override the flags.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl Opts {
    fn into_config(self) -> Result<RunConfig, CliError> {
        let flags = RunConfig {
            system: self.system,
            gains: self.gains,
            window: self.window,
            nd: self.nd,
            input: self.input,
            q: self.q,
            r: self.r,
            reg: self.reg,
            problem: self.problem,
            alpha: self.alpha,
            seed: self.seed,
            out: self.out,
        };
        match self.config {
            Some(path) => Ok(flags.overlay(RunConfig::from_file(&path)?)),
            None => Ok(flags),
        }
    }
}

type Stage = fn(&RunConfig) -> Result<String, CliError>;

fn run(cmd: Command) -> Result<String, CliError> {
    let (f, opts): (Stage, Opts) = match cmd {
        Command::Analyze(o) => (pipeline::analyze, o),
        Command::Design(o) => (pipeline::design, o),
        Command::Simulate(o) => (pipeline::simulate_cmd, o),
        Command::Estimate(o) => (pipeline::estimate, o),
        Command::Witness(o) => (pipeline::witness, o),
        Command::Report(o) => (pipeline::report, o),
    };
    f(&opts.into_config()?)
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
    match run(cli.command) {
        Ok(text) => {
            println!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
