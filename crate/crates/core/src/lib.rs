//! Log-linear learning with synchronous Q-updates in identical-interest
//! stochastic games.
//!
//! Agents play one stage at a time: a uniformly chosen agent redraws its
//! action from the softmax of the shared Q-table at the current state while
//! everyone else repeats the last joint action stored there. Between stages
//! every `(s, a)` entry is moved towards the one-step lookahead under the
//! joint actions last played at each state.
//!
//! The crate bundles the game model ([`game`]), exact oracles ([`solver`]),
//! stepsize schedules and epoch weights ([`schedule`]), the learning dynamics
//! ([`dynamics`]), analysis of the frozen-Q stage chain ([`chain`]) and
//! multi-seed experiments ([`experiment`]).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod chain;
pub mod dynamics;
pub mod error;
pub mod experiment;
pub mod game;
pub mod par;
pub mod sampling;
pub mod schedule;
pub mod solver;

pub use error::{Error, Result};
pub use game::{JointAction, JointSpace, QTable, RandomGameParams, StochasticGame};
pub use par::Exec;
pub use schedule::Schedule;

/// Version string written into every serialized artifact.
pub const FORMAT_VERSION: &str = "1.0";
