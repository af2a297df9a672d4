use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch in `{field}`: {detail}")]
    Shape { field: &'static str, detail: String },

    #[error("minimum transition probability {min_prob} is infeasible for {num_states} states (needs <= {max})", max = 1.0 / *num_states as f64)]
    InfeasibleMinProb { min_prob: f64, num_states: usize },

    #[error("value iteration did not converge within {iterations} iterations (last residual {last_residual:e})")]
    NotConverged { iterations: usize, last_residual: f64 },

    #[error("stepsize table has {len} entries, stage {t} requested")]
    ScheduleExhausted { t: u64, len: usize },

    #[error("invalid schedule spec `{0}`")]
    ScheduleSpec(String),

    #[error("extended state space |W| = {size} exceeds the budget of {budget} states")]
    BudgetExceeded { size: u128, budget: usize },

    #[error("game is not irreducible: kernel has a zero entry")]
    NotIrreducible,

    #[error("zero conditioning mass for state {0}")]
    ZeroMass(usize),

    #[error("expected {expected} snapshots, got {got}")]
    SnapshotCount { expected: usize, got: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// Short machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Shape { .. } => "shape",
            Error::InfeasibleMinProb { .. } => "infeasible",
            Error::NotConverged { .. } => "not_converged",
            Error::ScheduleExhausted { .. } => "schedule_exhausted",
            Error::ScheduleSpec(_) => "schedule_spec",
            Error::BudgetExceeded { .. } => "budget_exceeded",
            Error::NotIrreducible => "not_irreducible",
            Error::ZeroMass(_) => "zero_mass",
            Error::SnapshotCount { .. } => "snapshot_count",
            Error::Io { .. } => "io",
            Error::Parse { .. } => "parse",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
