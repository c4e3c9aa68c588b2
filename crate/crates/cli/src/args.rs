use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pgw_core::Exponent;
use pgw_core::io::Metric;
use pgw_core::verify::Suite;

#[derive(Debug, Parser)]
#[command(name = "pgw", version, about = "Partial Gromov-Wasserstein distances between finite metric measure spaces")]
pub struct Cli {
    /// Worker threads for parallel restarts and checks.
    #[arg(long, global = true, env = "PGW_THREADS")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve one distance and print its value.
    Compute(ComputeArgs),
    /// Compute the robust metric by bisection.
    Robust(RobustArgs),
    /// Run numerical checks and emit a JSON report array.
    Verify(VerifyArgs),
    /// Tabulate PGW and sPGW over a grid of eps as JSON lines.
    Sweep(SweepArgs),
    /// Brute-force global search on tiny instances.
    Oracle(OracleArgs),
}

#[derive(Debug, Args)]
pub struct Spaces {
    pub space_x: PathBuf,
    pub space_y: PathBuf,

    /// Divide weights by their sum on load.
    #[arg(long)]
    pub normalize: bool,

    /// Metric for CSV point clouds. JSON files carry their own.
    #[arg(long, value_parser = parse_metric)]
    pub metric: Option<Metric>,

    /// Single-column CSV of weights for the first space.
    #[arg(long)]
    pub weights_x: Option<PathBuf>,

    /// Single-column CSV of weights for the second space.
    #[arg(long)]
    pub weights_y: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SolverArgs {
    #[arg(long, default_value_t = 16)]
    pub restarts: usize,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Distance {
    Gw,
    Pgw,
    Spgw,
    Mpgw,
}

#[derive(Debug, Args)]
pub struct ComputeArgs {
    #[command(flatten)]
    pub spaces: Spaces,

    #[arg(long, value_enum)]
    pub distance: Distance,

    /// Exponent in [1, inf]; `inf` is accepted.
    #[arg(long, default_value = "2", value_parser = parse_exponent)]
    pub p: Exponent,

    #[arg(long, value_parser = parse_nonneg)]
    pub eps1: Option<f64>,

    /// Defaults to --eps1.
    #[arg(long, value_parser = parse_nonneg)]
    pub eps2: Option<f64>,

    #[arg(long, value_parser = parse_nonneg)]
    pub delta: Option<f64>,

    #[command(flatten)]
    pub solver: SolverArgs,

    /// Write the full result as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RobustArgs {
    #[command(flatten)]
    pub spaces: Spaces,

    #[arg(long, default_value_t = 1.0)]
    pub k: f64,

    #[arg(long, default_value = "2", value_parser = parse_exponent)]
    pub p: Exponent,

    #[arg(long, default_value_t = 1e-4)]
    pub bracket_tol: f64,

    #[command(flatten)]
    pub solver: SolverArgs,

    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long, default_value = "all", value_parser = parse_suite)]
    pub suite: Suite,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub spaces: Spaces,

    #[arg(long, default_value = "2", value_parser = parse_exponent)]
    pub p: Exponent,

    /// Comma-separated ascending values of eps; `inf` is accepted.
    #[arg(long, default_value = "0,0.125,0.25,0.5,1,2,4,8", value_parser = parse_grid)]
    pub eps_grid: Grid,

    #[command(flatten)]
    pub solver: SolverArgs,

    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Family {
    Exact,
    Relaxed,
    Symmetric,
    Mass,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[command(flatten)]
    pub spaces: Spaces,

    #[arg(long, value_enum, default_value = "exact")]
    pub family: Family,

    #[arg(long, default_value = "2", value_parser = parse_exponent)]
    pub p: Exponent,

    #[arg(long, value_parser = parse_nonneg)]
    pub eps1: Option<f64>,

    /// Defaults to --eps1.
    #[arg(long, value_parser = parse_nonneg)]
    pub eps2: Option<f64>,

    #[arg(long, value_parser = parse_nonneg)]
    pub delta: Option<f64>,

    /// Lattice steps per unit of mass.
    #[arg(long, default_value_t = 100)]
    pub resolution: usize,
}

/// Newtype so clap treats the whole list as one value.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid(pub Vec<f64>);

fn parse_ext(s: &str) -> Result<f64, String> {
    let t = s.trim();
    if t.eq_ignore_ascii_case("inf") || t.eq_ignore_ascii_case("infinity") {
        return Ok(f64::INFINITY);
    }
    t.parse::<f64>().map_err(|_| format!("not a number: {s:?}"))
}

fn parse_nonneg(s: &str) -> Result<f64, String> {
    let v = parse_ext(s)?;
    if v.is_nan() || v < 0.0 {
        return Err(format!("must be >= 0, got {s}"));
    }
    Ok(v)
}

fn parse_grid(s: &str) -> Result<Grid, String> {
    let v = s.split(',').map(parse_nonneg).collect::<Result<Vec<_>, _>>()?;
    if v.windows(2).any(|w| w[1] < w[0]) {
        return Err("grid must be ascending".into());
    }
    Ok(Grid(v))
}

fn parse_exponent(s: &str) -> Result<Exponent, String> {
    s.parse().map_err(|e: pgw_core::Error| e.to_string())
}

fn parse_suite(s: &str) -> Result<Suite, String> {
    s.parse().map_err(|e: pgw_core::Error| e.to_string())
}

fn parse_metric(s: &str) -> Result<Metric, String> {
    s.parse().map_err(|e: pgw_core::Error| e.to_string())
}
