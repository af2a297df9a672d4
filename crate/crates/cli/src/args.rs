use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "effq", version, about = "Log-linear learning with synchronous Q-updates in identical-interest stochastic games")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a random irreducible game and save it as JSON.
    Gen(GenArgs),
    /// Solve for Q* by value iteration.
    Solve(SolveArgs),
    /// Run the learning dynamics over one or more seeds.
    Run(RunArgs),
    /// Stationary analysis of the stage-play chain with Q held fixed.
    Chain(ChainArgs),
    /// Coupled runs of the main and frozen-Q chains.
    Couple(CoupleArgs),
    /// Merge convergence reports into one summary table.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, default_value_t = 2)]
    pub agents: usize,
    #[arg(long, default_value_t = 2)]
    pub states: usize,
    /// Actions per agent (same for every agent).
    #[arg(long, default_value_t = 2, conflicts_with = "actions_per_agent")]
    pub actions: usize,
    /// Comma-separated action counts, one per agent; overrides --agents.
    #[arg(long, value_delimiter = ',')]
    pub actions_per_agent: Option<Vec<usize>>,
    #[arg(long, default_value_t = 0.8)]
    pub gamma: f64,
    /// Lower bound on every transition probability.
    #[arg(long)]
    pub min_prob: Option<f64>,
    #[arg(long, default_value_t = 0.0)]
    pub reward_low: f64,
    #[arg(long, default_value_t = 1.0)]
    pub reward_high: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(short, long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[arg(long)]
    pub game: PathBuf,
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
    #[arg(long, default_value_t = 1_000_000)]
    pub max_iter: usize,
    #[arg(short, long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub game: PathBuf,
    /// Q* table written by `solve`.
    #[arg(long)]
    pub qstar: Option<PathBuf>,
    /// Skip the comparison against Q* and the bound.
    #[arg(long)]
    pub no_compare: bool,
    #[arg(long)]
    pub stages: u64,
    #[arg(long)]
    pub tau: f64,
    /// `harmonic:c=<c>`, `constant:b=<b>` or `table:<path>`.
    #[arg(long, default_value = "harmonic:c=1")]
    pub schedule: String,
    /// Base seed; seed i of the experiment is `seed + i`.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of seeds.
    #[arg(long, default_value_t = 1)]
    pub seeds: usize,
    /// Log every k-th stage.
    #[arg(long, default_value_t = 100)]
    pub stride: u64,
    /// Fraction of logged stages forming the tail window.
    #[arg(long, default_value_t = effq_core::experiment::DEFAULT_TAIL_FRAC)]
    pub tail_frac: f64,
    /// Absolute slack added to the bound (default 0.1 ||Q*||).
    #[arg(long)]
    pub slack: Option<f64>,
    /// Start every run in this state instead of a random one.
    #[arg(long)]
    pub initial_state: Option<usize>,
    /// Output directory.
    #[arg(short, long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MarginalArg {
    Conditional,
    Joint,
}

#[derive(Debug, Args)]
pub struct ChainArgs {
    #[arg(long)]
    pub game: PathBuf,
    /// Q-table file (as written by `solve`); the zero table when omitted.
    #[arg(long)]
    pub q: Option<PathBuf>,
    #[arg(long)]
    pub tau: f64,
    /// Largest extended state space to materialize.
    #[arg(long, default_value_t = effq_core::chain::DEFAULT_BUDGET)]
    pub budget: usize,
    #[arg(long, default_value_t = 1e-14)]
    pub tol: f64,
    #[arg(long, default_value_t = 10_000_000)]
    pub max_iter: usize,
    #[arg(long, value_enum, default_value_t = MarginalArg::Conditional)]
    pub marginal: MarginalArg,
    /// Also write the stationary distribution as CSV.
    #[arg(long)]
    pub dist_out: Option<PathBuf>,
    #[arg(short, long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CoupleArgs {
    #[arg(long)]
    pub game: PathBuf,
    /// Frozen Q-table for the frozen modes; the zero table when omitted.
    #[arg(long)]
    pub q: Option<PathBuf>,
    #[arg(long)]
    pub tau: f64,
    /// Both chains use the frozen table (match-retention 1); the main chain
    /// starts uniformly at random and the fictional one from its stationary
    /// distribution.
    #[arg(long, conflicts_with = "beta_zero")]
    pub freeze_both: bool,
    /// The main chain updates with stepsize zero from a shared start.
    #[arg(long)]
    pub beta_zero: bool,
    /// Schedule of the live main chain.
    #[arg(long, default_value = "harmonic:c=1")]
    pub schedule: String,
    /// Epoch length T of the live mode.
    #[arg(long, default_value_t = 100)]
    pub epoch_length: usize,
    /// Epoch index k of the live mode; the coupled stages start at kT.
    #[arg(long, default_value_t = 10)]
    pub epoch: u64,
    #[arg(long, default_value_t = 10_000)]
    pub pairs: usize,
    /// Blocks of kappa stages to simulate.
    #[arg(long, default_value_t = 20)]
    pub blocks: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Pairs whose match indicators are written as CSV.
    #[arg(long, default_value_t = 3)]
    pub keep: usize,
    #[arg(short, long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Report files or directories searched recursively for `*.json`.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(short, long)]
    pub out: PathBuf,
}
