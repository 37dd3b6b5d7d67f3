use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "etsynth", version, about = "Synthesize event-triggered communication strategies")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load a scenario and check its invariants.
    Validate {
        /// Scenario file, or the name of a bundled scenario.
        scenario: String,
    },
    /// Build the abstract MDP for a scenario.
    Abstract(AbstractArgs),
    /// Compute the Pareto front of an abstraction.
    Pareto(ParetoArgs),
    /// Pick a strategy from a Pareto front.
    Synth(SynthArgs),
    /// Simulate a strategy on the continuous system.
    Simulate(SimulateArgs),
    /// Simulate the always-communicating Kalman filter.
    Baseline(BaselineArgs),
    /// Summarize a run directory.
    Report {
        run_dir: PathBuf,
    },
    /// Write an abstraction as a PRISM model.
    ExportPrism {
        abstraction: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare an abstraction with its bisected refinement.
    Probe(ProbeArgs),
    /// Repeat the command recorded in a manifest.
    Rerun {
        manifest: PathBuf,
    },
}

#[derive(Debug, Clone, Args)]
pub struct SeedArg {
    #[arg(long, env = "ETSYNTH_SEED", default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct AbstractArgs {
    pub scenario: String,
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u8).range(1..=2))]
    pub method: u8,
    /// Angle and eigenvalue bins per axis, as `B` or `THETA,LAMBDA`.
    #[arg(long, default_value = "3")]
    pub bins: String,
    /// Monte-Carlo samples per (state, threshold) pair.
    #[arg(long, default_value_t = 500)]
    pub samples: usize,
    #[arg(long, default_value_t = 2000)]
    pub pool_cap: usize,
    #[arg(long, default_value_t = 400)]
    pub calibration_runs: usize,
    #[command(flatten)]
    pub seed: SeedArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ParetoArgs {
    pub abstraction: PathBuf,
    /// Weight-simplex resolution.
    #[arg(long, default_value_t = 40)]
    pub grid: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum QueryKind {
    MaxPtar,
    MinEnergy,
    MinColl,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    /// A front.json written by `pareto`.
    pub front: PathBuf,
    #[arg(long, value_enum)]
    pub query: QueryKind,
    /// Lower bound on p_tar for `min-energy`.
    #[arg(long)]
    pub ptar: Option<f64>,
    /// Upper bound on e_c for `min-coll`.
    #[arg(long)]
    pub energy: Option<f64>,
    /// Strategy name; derived from the query when omitted.
    #[arg(long)]
    pub name: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    pub scenario: String,
    pub strategy: PathBuf,
    #[arg(long, default_value_t = 3000)]
    pub runs: usize,
    #[command(flatten)]
    pub seed: SeedArg,
    /// Allowed |Δp_tar| and |Δp_coll| in percentage points.
    #[arg(long, default_value_t = 2.5)]
    pub tol_points: f64,
    /// Allowed relative e_c error.
    #[arg(long, default_value_t = 0.05)]
    pub tol_energy: f64,
    #[arg(long, default_value_t = 300)]
    pub trace_cap: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct BaselineArgs {
    pub scenario: String,
    #[arg(long, default_value_t = 3000)]
    pub runs: usize,
    #[command(flatten)]
    pub seed: SeedArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ProbeArgs {
    pub scenario: String,
    #[arg(long, default_value = "2")]
    pub bins: String,
    #[arg(long, default_value_t = 500)]
    pub samples: usize,
    #[arg(long, default_value_t = 2000)]
    pub pool_cap: usize,
    #[arg(long, default_value_t = 400)]
    pub calibration_runs: usize,
    #[command(flatten)]
    pub seed: SeedArg,
    #[arg(long)]
    pub out: PathBuf,
}

/// "3" → (3, 3); "2,4" → (2, 4).
pub fn parse_bins(text: &str) -> Option<(usize, usize)> {
    let parse = |s: &str| s.trim().parse::<usize>().ok().filter(|&b| b > 0);
    match text.split_once(',') {
        Some((t, l)) => Some((parse(t)?, parse(l)?)),
        None => parse(text).map(|b| (b, b)),
    }
}
