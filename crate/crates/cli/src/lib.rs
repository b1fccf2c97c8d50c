//! Command-line front end: scenario ingestion, the five analysis commands and
//! their artifacts.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub mod commands;
pub mod error;
pub mod manifest;

pub use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(
    name = "tlroa",
    version,
    about = "Reverse-time stability boundaries for a reduced-order wind power plant PLL model"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a series R-L grid equivalent to an impedance scan.
    Fit(FitArgs),
    /// Simulate the configured fault scenario.
    Simulate(CommonArgs),
    /// Compute the time-limited region of attraction of the post-fault regime.
    Tlroa(TlroaArgs),
    /// Critical clearing time against a saved boundary.
    Cct(CctArgs),
    /// Label a state-space grid by forward simulation.
    RoaGrid(RoaGridArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Scenario file (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory. Defaults to the scenario's `output_dir`, then `out`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Scan CSV with header `f_hz,re_ohm,im_ohm`. Taken from the scenario's
    /// `[grid.scan]` table when omitted.
    #[arg(long)]
    pub scan: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// PLL nominal frequency (Hz).
    #[arg(long)]
    pub f_nominal: Option<f64>,
    /// Half width of the fit window (Hz).
    #[arg(long)]
    pub half_window: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TlroaArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Reverse-time horizon (s). Defaults to `roa.horizon_s`.
    #[arg(long)]
    pub horizon: Option<f64>,
}

#[derive(Debug, Args)]
pub struct CctArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Boundary CSV written by `tlroa`; its JSON sidecar must sit next to it.
    #[arg(long)]
    pub boundary: PathBuf,
}

#[derive(Debug, Args)]
#[command(allow_negative_numbers = true)]
pub struct RoaGridArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Angle range `LO,HI` (rad).
    #[arg(
        long,
        value_delimiter = ',',
        allow_hyphen_values = true,
        required = true
    )]
    pub x1: Vec<f64>,
    /// Integrator state range `LO,HI` (rad/s).
    #[arg(
        long,
        value_delimiter = ',',
        allow_hyphen_values = true,
        required = true
    )]
    pub x3: Vec<f64>,
    /// Grid points per axis `N1,N3`.
    #[arg(long, value_delimiter = ',', default_values_t = [41, 41])]
    pub n: Vec<usize>,
    /// Forward horizon (s). Defaults to `roa.horizon_s` plus 0.5 s.
    #[arg(long)]
    pub horizon: Option<f64>,
}

/// Runs one command and returns the manifest it wrote.
pub fn run(cli: Cli) -> CliResult<manifest::RunManifest> {
    match cli.command {
        Command::Fit(a) => commands::fit(&a),
        Command::Simulate(a) => commands::simulate(&a),
        Command::Tlroa(a) => commands::tlroa(&a),
        Command::Cct(a) => commands::cct(&a),
        Command::RoaGrid(a) => commands::roa_grid(&a),
    }
}
