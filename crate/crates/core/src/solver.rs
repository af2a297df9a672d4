//! Exact oracles: the Bellman optimality operator, value iteration for `Q*`,
//! greedy joint profiles and policy evaluation of fixed joint strategies.

use crate::error::{Error, Result};
use crate::game::{JointAction, QTable, StochasticGame};

/// Distribution tolerance for strategies.
pub const STRATEGY_TOL: f64 = 1e-12;

/// Hard cap on policy-evaluation sweeps.
const EVAL_MAX_ITER: usize = 10_000_000;

/// `(TQ)(s, a) = r(s, a) + gamma * sum_s' p(s' | s, a) * max_a' Q(s', a')`.
pub fn bellman_operator(game: &StochasticGame, q: &QTable) -> QTable {
    let values: Vec<f64> = (0..game.num_states()).map(|s| q.max_row(s)).collect();
    let mut out = QTable::zeros_like(game);
    apply_backup(game, &values, &mut out);
    out
}

/// `out(s, a) = r(s, a) + gamma * sum_s' p(s' | s, a) * values[s']`.
fn apply_backup(game: &StochasticGame, values: &[f64], out: &mut QTable) {
    let gamma = game.gamma();
    for s in 0..game.num_states() {
        let rewards = game.reward_row(s);
        for (a, (slot, &r)) in out.row_mut(s).iter_mut().zip(rewards).enumerate() {
            let cont: f64 = game
                .transition(s, JointAction(a))
                .iter()
                .zip(values)
                .map(|(p, v)| p * v)
                .sum();
            *slot = r + gamma * cont;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub q_star: QTable,
    pub iterations: usize,
    /// Sup-norm of the last value-iteration step.
    pub final_residual: f64,
}

/// Value iteration from `Q = 0`.
///
/// Stops once a step is at most `tol * min(1, (1 - gamma) / (2 gamma))`, which
/// puts the returned table within `tol / 2` of `Q*` in sup-norm. With
/// `gamma = 0` a single application is exact.
pub fn solve_q_star(game: &StochasticGame, tol: f64, max_iter: usize) -> Result<SolveResult> {
    if !(tol > 0.0) {
        return Err(Error::invalid("tolerance must be positive"));
    }
    let gamma = game.gamma();
    let mut q = QTable::zeros_like(game);
    if gamma == 0.0 {
        let next = bellman_operator(game, &q);
        let residual = next.sup_dist(&q);
        return Ok(SolveResult {
            q_star: next,
            iterations: 1,
            final_residual: residual,
        });
    }
    let threshold = tol * (1.0f64).min((1.0 - gamma) / (2.0 * gamma));
    let mut next = QTable::zeros_like(game);
    let mut values = vec![0.0; game.num_states()];
    let mut residual = f64::INFINITY;
    for iter in 1..=max_iter {
        for (s, v) in values.iter_mut().enumerate() {
            *v = q.max_row(s);
        }
        apply_backup(game, &values, &mut next);
        residual = next.sup_dist(&q);
        std::mem::swap(&mut q, &mut next);
        if residual <= threshold {
            return Ok(SolveResult {
                q_star: q,
                iterations: iter,
                final_residual: residual,
            });
        }
    }
    Err(Error::NotConverged {
        iterations: max_iter,
        last_residual: residual,
    })
}

/// Per-state argmax over joint actions; ties go to the lowest flat index.
pub fn greedy_profile(q: &QTable) -> Vec<JointAction> {
    (0..q.num_states()).map(|s| argmax(q.row(s))).collect()
}

/// Lowest index attaining the maximum.
pub fn argmax(row: &[f64]) -> JointAction {
    let mut best = 0;
    for (i, &x) in row.iter().enumerate().skip(1) {
        if x > row[best] {
            best = i;
        }
    }
    JointAction(best)
}

/// A Markov stationary joint strategy: one distribution over `A` per state.
#[derive(Debug, Clone, PartialEq)]
pub struct JointStrategy {
    probs: Vec<Vec<f64>>,
}

impl JointStrategy {
    pub fn new(probs: Vec<Vec<f64>>) -> Result<Self> {
        for (s, row) in probs.iter().enumerate() {
            if row.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
                return Err(Error::invalid(format!("strategy at state {s} has a negative or non-finite entry")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > STRATEGY_TOL {
                return Err(Error::invalid(format!("strategy at state {s} sums to {sum}")));
            }
        }
        Ok(Self { probs })
    }

    /// Deterministic play of `profile[s]` at every state.
    pub fn point_mass(profile: &[JointAction], num_actions: usize) -> Self {
        let probs = profile
            .iter()
            .map(|a| {
                let mut row = vec![0.0; num_actions];
                row[a.0] = 1.0;
                row
            })
            .collect();
        Self { probs }
    }

    pub fn state(&self, s: usize) -> &[f64] {
        &self.probs[s]
    }

    pub fn num_states(&self) -> usize {
        self.probs.len()
    }
}

/// Policy evaluation of a joint strategy.
///
/// Iterates `v <- r_pi + gamma P_pi v` from zero until the step is at most
/// `tol * min(1, (1 - gamma) / gamma)`, so both the fixed-point residual and
/// the distance to the true value are at most `tol`. Returns `v` and the
/// one-step lookahead `q(s, a) = r(s, a) + gamma sum_s' p(s' | s, a) v(s')`.
pub fn evaluate_joint_strategy(
    game: &StochasticGame,
    pi: &JointStrategy,
    tol: f64,
) -> Result<(Vec<f64>, QTable)> {
    if !(tol > 0.0) {
        return Err(Error::invalid("tolerance must be positive"));
    }
    let ns = game.num_states();
    let na = game.num_joint_actions();
    if pi.num_states() != ns || pi.probs.iter().any(|row| row.len() != na) {
        return Err(Error::Shape {
            field: "strategy",
            detail: format!("expected {ns} rows of length {na}"),
        });
    }
    let gamma = game.gamma();

    let mut expected_reward = vec![0.0; ns];
    let mut induced = vec![0.0; ns * ns];
    for s in 0..ns {
        for (a, &w) in pi.state(s).iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let a = JointAction(a);
            expected_reward[s] += w * game.reward(s, a);
            for (t, p) in game.transition(s, a).iter().enumerate() {
                induced[s * ns + t] += w * p;
            }
        }
    }

    let threshold = if gamma == 0.0 {
        tol
    } else {
        tol * (1.0f64).min((1.0 - gamma) / gamma)
    };
    let mut v = vec![0.0; ns];
    let mut next = vec![0.0; ns];
    let mut residual = f64::INFINITY;
    let mut converged = false;
    for _ in 0..EVAL_MAX_ITER {
        for s in 0..ns {
            let row = &induced[s * ns..(s + 1) * ns];
            let cont: f64 = row.iter().zip(&v).map(|(p, x)| p * x).sum();
            next[s] = expected_reward[s] + gamma * cont;
        }
        residual = next
            .iter()
            .zip(&v)
            .fold(0.0, |m, (x, y)| m.max((x - y).abs()));
        std::mem::swap(&mut v, &mut next);
        if residual <= threshold {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NotConverged {
            iterations: EVAL_MAX_ITER,
            last_residual: residual,
        });
    }
    let mut q = QTable::zeros_like(game);
    apply_backup(game, &v, &mut q);
    Ok((v, q))
}

/// Asymptotic error bound `tau ln|A| / (1 - gamma)` on the learned Q-function.
pub fn theorem_bound(tau: f64, joint_action_count: usize, gamma: f64) -> f64 {
    tau * (joint_action_count as f64).ln() / (1.0 - gamma)
}
