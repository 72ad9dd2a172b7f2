//! `rnqg` command-line runner.
//!
//! Exit codes: 0 success, 2 configuration or usage error, 3 numerical or
//! controller failure.

mod commands;
mod config;
mod manifest;
mod stats;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "rnqg", version, about = "RNQG / SDRE synthesis, training and pendulum simulation")]
pub struct Cli {
    /// JSON config with optional sections plant, weights, noise, sim, train.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Noise seed for `simulate`, sampling seed for `train`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory; every file a command writes goes under it.
    #[arg(long, global = true, default_value = "results")]
    pub out: PathBuf,
    /// Suppress progress and tables on stdout.
    #[arg(long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one closed-loop simulation; writes the trajectory CSV and metrics JSON.
    Simulate(SimulateArgs),
    /// Train a value-function weight schedule for an approximate controller.
    Train(TrainArgs),
    /// Seed sweep over cases and controllers; median / IQR table.
    Compare(CompareArgs),
    /// Print the gain, Riccati solution and diagnostics at one state.
    Gain(GainArgs),
    /// Solve AᵀP + PA − PBR⁻¹BᵀP + Q = 0.
    CareSolve(CareArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ControllerArg {
    Sdre,
    SdreApprox,
    H2hinf,
    Rnqg,
    RnqgApprox,
}

impl From<ControllerArg> for rnqg::simulate::ControllerKind {
    fn from(c: ControllerArg) -> Self {
        use rnqg::simulate::ControllerKind as K;
        match c {
            ControllerArg::Sdre => K::Sdre,
            ControllerArg::SdreApprox => K::SdreApprox,
            ControllerArg::H2hinf => K::H2hinf,
            ControllerArg::Rnqg => K::Rnqg,
            ControllerArg::RnqgApprox => K::RnqgApprox,
        }
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Benchmark case 1, 2 or 3; omit to run the config's `sim` section as is.
    #[arg(long)]
    pub case: Option<i64>,
    #[arg(long, value_enum)]
    pub controller: ControllerArg,
    /// Weight schedule written by `train` (approximate controllers only).
    #[arg(long)]
    pub schedule: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Which approximation the stage cost is built for.
    #[arg(long, value_enum, default_value = "sdre-approx")]
    pub controller: ControllerArg,
    /// File name of the schedule under `--out`.
    #[arg(long)]
    pub name: Option<String>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Comma-separated case ids.
    #[arg(long, default_value = "1,2,3")]
    pub cases: String,
    /// Comma-separated controllers, or `all`.
    #[arg(long, default_value = "all")]
    pub controllers: String,
    /// Seeds as a list and/or ranges: `1-10`, `3,5,8`.
    #[arg(long, default_value = "1-10")]
    pub seeds: String,
    #[arg(long)]
    pub sdre_schedule: Option<PathBuf>,
    #[arg(long)]
    pub rnqg_schedule: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Args)]
pub struct GainArgs {
    /// Comma-separated state; angle suffixes allowed (`20deg,0,0.01,0`).
    #[arg(long, allow_hyphen_values = true)]
    pub state: String,
    #[arg(long, value_enum, default_value = "sdre")]
    pub controller: ControllerArg,
    #[arg(long, value_enum, default_value = "json")]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct CareArgs {
    /// Matrices as row-major literals, rows separated by `;`: `0,1;0,0`.
    #[arg(long, allow_hyphen_values = true)]
    pub a: String,
    #[arg(long, allow_hyphen_values = true)]
    pub b: String,
    #[arg(long, allow_hyphen_values = true)]
    pub q: String,
    #[arg(long, allow_hyphen_values = true)]
    pub r: String,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
