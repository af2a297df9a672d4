//! Multi-seed runs of the learning dynamics and their comparison with the
//! asymptotic error bound `tau ln|A| / (1 - gamma)`.
//!
//! The bound concerns a limsup, so each seed is summarized by the largest
//! error over a tail window of logged stages rather than by its endpoint.

use serde::{Deserialize, Serialize};

use crate::dynamics::{run, RunConfig, RunState, Trajectory};
use crate::error::{Error, Result};
use crate::game::{QTable, StochasticGame};
use crate::par::{self, Exec};
use crate::solver::theorem_bound;
use crate::FORMAT_VERSION;

/// One finished seed: its seed, final state and logged trajectory.
pub type SeedRun = (u64, RunState, Trajectory);

pub const DEFAULT_TAIL_FRAC: f64 = 0.1;

/// Slack added to the bound, as a multiple of `||Q*||_inf`.
pub const DEFAULT_SLACK_FACTOR: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// Shared run settings; the seed field is overridden per run.
    pub run: RunConfig,
    pub seeds: Vec<u64>,
    /// Fraction of logged stages, counted from the end, forming the tail.
    pub tail_frac: f64,
    /// Absolute slack; `None` means `DEFAULT_SLACK_FACTOR * ||Q*||_inf`.
    pub slack: Option<f64>,
}

impl ExperimentConfig {
    pub fn new(run: RunConfig, seeds: Vec<u64>) -> Self {
        Self {
            run,
            seeds,
            tail_frac: DEFAULT_TAIL_FRAC,
            slack: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tail_frac > 0.0 && self.tail_frac <= 1.0) {
            return Err(Error::invalid(format!("tail fraction {} must lie in (0, 1]", self.tail_frac)));
        }
        if self.seeds.is_empty() {
            return Err(Error::invalid("at least one seed is required"));
        }
        if let Some(s) = self.slack {
            if !(s >= 0.0) {
                return Err(Error::invalid("slack must be nonnegative"));
            }
        }
        Ok(())
    }
}

/// `base, base + 1, ..., base + count - 1`.
pub fn seed_range(base: u64, count: usize) -> Vec<u64> {
    (0..count as u64).map(|i| base.wrapping_add(i)).collect()
}

/// Number of logged rows in the tail window: `ceil(frac * rows)`, at least
/// one when there are rows.
pub fn tail_len(rows: usize, tail_frac: f64) -> usize {
    if rows == 0 {
        return 0;
    }
    ((rows as f64 * tail_frac).ceil() as usize).clamp(1, rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub logged_rows: usize,
    pub tail_rows: usize,
    /// Largest `||Q_t - Q*||_inf` over the tail window.
    pub tail_max_error: Option<f64>,
    /// `||Q_T - Q*||_inf` after the last stage.
    pub final_error: Option<f64>,
    /// Fraction of tail rows whose played profile is greedy for `Q*`.
    pub tail_opt_play_fraction: Option<f64>,
}

pub fn summarize_seed(seed: u64, traj: &Trajectory, final_q: &QTable, q_star: Option<&QTable>, tail_frac: f64) -> SeedSummary {
    let rows = traj.rows.len();
    let tail = tail_len(rows, tail_frac);
    let window = &traj.rows[rows - tail..];
    let (tail_max_error, tail_opt_play_fraction, final_error) = match q_star {
        Some(qs) if tail > 0 => {
            let max = window.iter().filter_map(|r| r.q_err).fold(0.0f64, f64::max);
            let hits = window.iter().filter(|r| r.opt_play == Some(true)).count();
            (Some(max), Some(hits as f64 / tail as f64), Some(final_q.sup_dist(qs)))
        }
        _ => (None, None, None),
    };
    SeedSummary {
        seed,
        logged_rows: rows,
        tail_rows: tail,
        tail_max_error,
        final_error,
        tail_opt_play_fraction,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub median: f64,
    pub min: f64,
    pub max: f64,
}

impl Spread {
    /// Median averages the two middle values for an even count.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        let median = if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) };
        Some(Self {
            median,
            min: v[0],
            max: v[n - 1],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub tail_max_error: Spread,
    pub final_error: Spread,
    pub tail_opt_play_fraction: Spread,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub spec_version: String,
    /// `"ok"`, `"no data"` (nothing logged) or `"no comparison"` (no `Q*`).
    pub status: String,
    pub num_states: usize,
    pub num_agents: usize,
    pub num_joint_actions: usize,
    pub gamma: f64,
    pub tau: f64,
    pub schedule: String,
    pub stages: u64,
    pub log_stride: u64,
    pub tail_frac: f64,
    /// `tau ln|A| / (1 - gamma)`.
    pub bound: f64,
    pub slack: Option<f64>,
    /// `||Q*||_inf`, the error of the initial table `Q_0 = 0`.
    pub initial_error: Option<f64>,
    pub per_seed: Vec<SeedSummary>,
    pub aggregate: Option<Aggregate>,
    /// Median tail max error over the initial error.
    pub contraction_ratio: Option<f64>,
    /// Median tail max error at most `bound + slack`.
    pub pass: Option<bool>,
}

impl ConvergenceReport {
    pub fn threshold(&self) -> Option<f64> {
        self.slack.map(|s| self.bound + s)
    }
}

/// Runs every seed of the experiment, in parallel under `Exec::Parallel`.
pub fn run_seeds(
    game: &StochasticGame,
    cfg: &ExperimentConfig,
    q_star: Option<&QTable>,
    exec: Exec,
) -> Result<Vec<SeedRun>> {
    cfg.validate()?;
    cfg.run.validate(game)?;
    par::map_range(exec, cfg.seeds.len(), |i| {
        let seed = cfg.seeds[i];
        let run_cfg = RunConfig { seed, ..cfg.run.clone() };
        run(game, &run_cfg, q_star).map(|(st, traj)| (seed, st, traj))
    })
    .into_iter()
    .collect()
}

/// Builds the report from finished runs.
pub fn convergence_report(
    game: &StochasticGame,
    cfg: &ExperimentConfig,
    q_star: Option<&QTable>,
    runs: &[SeedRun],
) -> ConvergenceReport {
    let per_seed: Vec<SeedSummary> = runs
        .iter()
        .map(|(seed, st, traj)| summarize_seed(*seed, traj, &st.q, q_star, cfg.tail_frac))
        .collect();
    let bound = theorem_bound(cfg.run.tau, game.num_joint_actions(), game.gamma());
    let initial_error = q_star.map(QTable::sup_norm);
    let slack = q_star.map(|qs| cfg.slack.unwrap_or(DEFAULT_SLACK_FACTOR * qs.sup_norm()));

    let collect = |f: fn(&SeedSummary) -> Option<f64>| -> Vec<f64> { per_seed.iter().filter_map(f).collect() };
    let aggregate = match (
        Spread::of(&collect(|s| s.tail_max_error)),
        Spread::of(&collect(|s| s.final_error)),
        Spread::of(&collect(|s| s.tail_opt_play_fraction)),
    ) {
        (Some(t), Some(f), Some(o)) => Some(Aggregate {
            tail_max_error: t,
            final_error: f,
            tail_opt_play_fraction: o,
        }),
        _ => None,
    };
    let has_rows = per_seed.iter().any(|s| s.logged_rows > 0);
    let status = if !has_rows {
        "no data"
    } else if q_star.is_none() {
        "no comparison"
    } else {
        "ok"
    };
    let pass = match (&aggregate, slack) {
        (Some(a), Some(sl)) => Some(a.tail_max_error.median <= bound + sl),
        _ => None,
    };
    let contraction_ratio = match (&aggregate, initial_error) {
        (Some(a), Some(e)) if e > 0.0 => Some(a.tail_max_error.median / e),
        _ => None,
    };
    ConvergenceReport {
        spec_version: FORMAT_VERSION.to_string(),
        status: status.to_string(),
        num_states: game.num_states(),
        num_agents: game.num_agents(),
        num_joint_actions: game.num_joint_actions(),
        gamma: game.gamma(),
        tau: cfg.run.tau,
        schedule: cfg.run.schedule.to_string(),
        stages: cfg.run.stages,
        log_stride: cfg.run.log_stride,
        tail_frac: cfg.tail_frac,
        bound,
        slack,
        initial_error,
        per_seed,
        aggregate,
        contraction_ratio,
        pass,
    }
}

/// `run_seeds` followed by `convergence_report`.
pub fn run_experiment(
    game: &StochasticGame,
    cfg: &ExperimentConfig,
    q_star: Option<&QTable>,
    exec: Exec,
) -> Result<(ConvergenceReport, Vec<SeedRun>)> {
    let runs = run_seeds(game, cfg, q_star, exec)?;
    Ok((convergence_report(game, cfg, q_star, &runs), runs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{random_game, RandomGameParams};
    use crate::schedule::Schedule;
    use crate::solver::solve_q_star;

    #[test]
    fn tail_window_sizes() {
        assert_eq!(tail_len(0, 0.1), 0);
        assert_eq!(tail_len(5, 0.1), 1);
        assert_eq!(tail_len(100, 0.1), 10);
        assert_eq!(tail_len(101, 0.1), 11);
        assert_eq!(tail_len(7, 1.0), 7);
    }

    #[test]
    fn median_conventions() {
        assert_eq!(Spread::of(&[3.0, 1.0, 2.0]).unwrap().median, 2.0);
        let s = Spread::of(&[4.0, 1.0, 2.0, 3.0]).unwrap();
        assert_eq!((s.median, s.min, s.max), (2.5, 1.0, 4.0));
        assert!(Spread::of(&[]).is_none());
    }

    #[test]
    fn config_validation() {
        let run = RunConfig::new(Schedule::harmonic(1.0).unwrap(), 0.1, 10, 0);
        let mut cfg = ExperimentConfig::new(run, vec![]);
        assert!(cfg.validate().is_err());
        cfg.seeds = vec![1];
        cfg.tail_frac = 0.0;
        assert!(cfg.validate().is_err());
        cfg.tail_frac = 1.0;
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn zero_stages_reports_no_data() {
        let g = random_game(&RandomGameParams::uniform(2, 2, 2, 5)).unwrap();
        let qs = solve_q_star(&g, 1e-10, 10_000).unwrap().q_star;
        let run = RunConfig::new(Schedule::harmonic(2.0).unwrap(), 0.05, 0, 0);
        let cfg = ExperimentConfig::new(run, seed_range(0, 3));
        let (report, runs) = run_experiment(&g, &cfg, Some(&qs), Exec::default()).unwrap();
        assert_eq!(runs.len(), 3);
        assert_eq!(report.status, "no data");
        assert_eq!(report.pass, None);
        assert!((report.bound - 0.05 * 4f64.ln() / 0.2).abs() < 1e-15);
    }

    #[test]
    fn parallel_and_sequential_agree() {
        let g = random_game(&RandomGameParams::uniform(2, 2, 2, 5)).unwrap();
        let qs = solve_q_star(&g, 1e-10, 10_000).unwrap().q_star;
        let mut run = RunConfig::new(Schedule::harmonic(2.0).unwrap(), 0.1, 5_000, 0);
        run.log_stride = 10;
        let cfg = ExperimentConfig::new(run, seed_range(11, 4));
        let (a, _) = run_experiment(&g, &cfg, Some(&qs), Exec::Sequential).unwrap();
        let (b, _) = run_experiment(&g, &cfg, Some(&qs), Exec::default()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.status, "ok");
        let agg = a.aggregate.unwrap();
        assert!(agg.tail_opt_play_fraction.min >= 0.0 && agg.tail_opt_play_fraction.max <= 1.0);
        assert_eq!(a.pass, Some(agg.tail_max_error.median <= a.bound + 0.1 * qs.sup_norm()));
    }
}
