//! The learning engine: log-linear play in the stage game at the visited
//! state, followed by a synchronous model-based Q-update over every
//! (state, joint action) pair.
//!
//! Random draws happen in a fixed order. At initialization: the initial state
//! (when drawn), then one stored profile per state in state order (when
//! drawn). At every stage: the picked agent, that agent's action, the next
//! state. All draws come from one `ChaCha8Rng` seeded with the run seed.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::game::{JointAction, QTable, StochasticGame};
use crate::sampling::sample_index;
use crate::schedule::{epoch_weights, Schedule};
use crate::solver::greedy_profile;

/// Header of the trajectory CSV.
pub const TRAJECTORY_HEADER: &str = "t,state,joint_action,q_err_max,opt_play";

/// `sigma(z)[a] = exp(z[a] / tau) / sum_a' exp(z[a'] / tau)`, computed with
/// max-subtraction.
pub fn softmax_response(z: &[f64], tau: f64) -> Vec<f64> {
    let mut out = z.to_vec();
    softmax_in_place(&mut out, tau);
    out
}

/// In-place variant of [`softmax_response`].
pub fn softmax_in_place(z: &mut [f64], tau: f64) {
    debug_assert!(tau > 0.0);
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in z.iter_mut() {
        *x = ((*x - max) / tau).exp();
        total += *x;
    }
    for x in z.iter_mut() {
        *x /= total;
    }
}

/// Synchronous Q-update for every `(s, a)`:
/// `Q'(s,a) = Q(s,a) + beta (r(s,a) + gamma sum_s' p(s'|s,a) Q(s', a(s')) - Q(s,a))`
/// where `a(s')` is the stored last profile of `s'`.
pub fn q_update(game: &StochasticGame, q: &QTable, profiles: &[JointAction], beta: f64) -> QTable {
    let mut out = q.clone();
    let mut scratch = vec![0.0; game.num_states()];
    q_update_in_place(game, &mut out, profiles, beta, &mut scratch);
    out
}

pub(crate) fn q_update_in_place(
    game: &StochasticGame,
    q: &mut QTable,
    profiles: &[JointAction],
    beta: f64,
    scratch: &mut [f64],
) {
    for (s, slot) in scratch.iter_mut().enumerate() {
        *slot = q.get(s, profiles[s]);
    }
    let gamma = game.gamma();
    for s in 0..game.num_states() {
        let rewards = game.reward_row(s);
        for (a, (entry, &r)) in q.row_mut(s).iter_mut().zip(rewards).enumerate() {
            let cont: f64 = game
                .transition(s, JointAction(a))
                .iter()
                .zip(scratch.iter())
                .map(|(p, v)| p * v)
                .sum();
            *entry += beta * (r + gamma * cont - *entry);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitialState {
    Uniform,
    Fixed(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitialProfiles {
    /// One uniform draw from `A` per state.
    Uniform,
    /// Flat joint action 0 everywhere.
    Zero,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub schedule: Schedule,
    pub tau: f64,
    pub stages: u64,
    pub initial_state: InitialState,
    pub initial_profiles: InitialProfiles,
    pub seed: u64,
    pub log_stride: u64,
    /// Keep every Q-iterate and stored-profile map for epoch verification
    /// with this epoch length.
    pub record_epochs: Option<usize>,
}

impl RunConfig {
    pub fn new(schedule: Schedule, tau: f64, stages: u64, seed: u64) -> Self {
        Self {
            schedule,
            tau,
            stages,
            initial_state: InitialState::Uniform,
            initial_profiles: InitialProfiles::Uniform,
            seed,
            log_stride: 100,
            record_epochs: None,
        }
    }

    pub fn validate(&self, game: &StochasticGame) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::invalid(format!("temperature tau = {} must be positive", self.tau)));
        }
        if self.log_stride == 0 {
            return Err(Error::invalid("log stride must be at least 1"));
        }
        if let InitialState::Fixed(s) = self.initial_state {
            if s >= game.num_states() {
                return Err(Error::invalid(format!("initial state {s} out of range")));
            }
        }
        if self.record_epochs == Some(0) {
            return Err(Error::invalid("epoch length must be at least 1"));
        }
        Ok(())
    }
}

/// Everything the dynamics carry from one stage to the next.
#[derive(Debug, Clone)]
pub struct RunState {
    /// Index of the next stage to play.
    pub t: u64,
    /// Current state `s_t`.
    pub state: usize,
    /// Last joint action played at each state.
    pub profiles: Vec<JointAction>,
    pub q: QTable,
    rng: ChaCha8Rng,
    scratch: Vec<f64>,
}

impl PartialEq for RunState {
    fn eq(&self, other: &Self) -> bool {
        self.t == other.t
            && self.state == other.state
            && self.profiles == other.profiles
            && self.q == other.q
            && self.rng == other.rng
    }
}

/// What happened during one stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepOutcome {
    pub stage: u64,
    pub state: usize,
    pub agent: usize,
    pub played: JointAction,
    pub next_state: usize,
}

impl RunState {
    pub fn new(t: u64, state: usize, profiles: Vec<JointAction>, q: QTable, seed: u64) -> Self {
        let scratch = vec![0.0; q.num_states().max(q.num_actions())];
        Self {
            t,
            state,
            profiles,
            q,
            rng: ChaCha8Rng::seed_from_u64(seed),
            scratch,
        }
    }

    /// Stage-0 state: `Q = 0`, initial state and profiles per the config.
    pub fn initial(game: &StochasticGame, cfg: &RunConfig) -> Result<Self> {
        cfg.validate(game)?;
        let mut st = Self::new(0, 0, Vec::new(), QTable::zeros_like(game), cfg.seed);
        st.state = match cfg.initial_state {
            InitialState::Fixed(s) => s,
            InitialState::Uniform => st.rng.random_range(0..game.num_states()),
        };
        let na = game.num_joint_actions();
        st.profiles = match cfg.initial_profiles {
            InitialProfiles::Zero => vec![JointAction(0); game.num_states()],
            InitialProfiles::Uniform => (0..game.num_states())
                .map(|_| JointAction(st.rng.random_range(0..na)))
                .collect(),
        };
        Ok(st)
    }

    pub fn rng_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    /// Plays one stage with stepsize `beta`.
    pub fn step_with_beta(&mut self, game: &StochasticGame, tau: f64, beta: f64) -> StepOutcome {
        let space = game.joint_space();
        let s = self.state;
        let current = self.profiles[s];

        let agent = self.rng.random_range(0..space.num_agents());
        let k = space.sizes()[agent];
        let buf = &mut self.scratch[..k];
        for (slot, a) in buf.iter_mut().zip(space.unilateral(current, agent)) {
            *slot = self.q.get(s, a);
        }
        softmax_in_place(buf, tau);
        let choice = sample_index(buf, &mut self.rng);
        let played = space.with_coordinate(current, agent, choice);
        self.profiles[s] = played;

        let mut scratch = std::mem::take(&mut self.scratch);
        if scratch.len() < game.num_states() {
            scratch.resize(game.num_states(), 0.0);
        }
        q_update_in_place(game, &mut self.q, &self.profiles, beta, &mut scratch[..game.num_states()]);
        self.scratch = scratch;

        let next_state = sample_index(game.transition(s, played), &mut self.rng);
        let outcome = StepOutcome {
            stage: self.t,
            state: s,
            agent,
            played,
            next_state,
        };
        self.state = next_state;
        self.t += 1;
        outcome
    }
}

/// One stage of the dynamics with stepsize `beta_t` from the config.
pub fn step(state: &mut RunState, game: &StochasticGame, cfg: &RunConfig) -> Result<StepOutcome> {
    let beta = cfg.schedule.beta(state.t)?;
    Ok(state.step_with_beta(game, cfg.tau, beta))
}

/// One logged stage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryRow {
    pub t: u64,
    pub state: usize,
    pub joint_action: JointAction,
    /// `||Q_{t+1} - Q*||_inf` after the stage's update.
    pub q_err: Option<f64>,
    /// Played profile equals the greedy profile of `Q*` at the state.
    pub opt_play: Option<bool>,
}

/// Every Q-iterate and stored-profile map of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch_length: usize,
    /// `Q_0, Q_1, ...` (one more than the number of stages played).
    pub snapshots: Vec<QTable>,
    /// `a_t(.)` after the play of stage `t`.
    pub profiles: Vec<Vec<JointAction>>,
}

impl EpochLog {
    pub fn complete_epochs(&self) -> usize {
        self.profiles.len() / self.epoch_length
    }

    /// Snapshots `Q_{kT..=(k+1)T}` and profiles `a_{kT..(k+1)T}`.
    pub fn epoch(&self, k: usize) -> Option<(&[QTable], &[Vec<JointAction>])> {
        let len = self.epoch_length;
        let start = k * len;
        if start + len > self.profiles.len() {
            return None;
        }
        Some((&self.snapshots[start..=start + len], &self.profiles[start..start + len]))
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    pub rows: Vec<TrajectoryRow>,
    pub epochs: Option<EpochLog>,
}

impl Trajectory {
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{TRAJECTORY_HEADER}")?;
        for row in &self.rows {
            write!(out, "{},{},{},", row.t, row.state, row.joint_action)?;
            if let Some(e) = row.q_err {
                write!(out, "{e}")?;
            }
            out.write_all(b",")?;
            if let Some(o) = row.opt_play {
                write!(out, "{}", u8::from(o))?;
            }
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Runs `cfg.stages` stages from the initial state and logs every
/// `cfg.log_stride`-th stage.
pub fn run(game: &StochasticGame, cfg: &RunConfig, q_star: Option<&QTable>) -> Result<(RunState, Trajectory)> {
    let mut st = RunState::initial(game, cfg)?;
    let greedy = q_star.map(greedy_profile);
    let mut traj = Trajectory {
        rows: Vec::with_capacity((cfg.stages / cfg.log_stride + 1) as usize),
        epochs: cfg.record_epochs.map(|len| EpochLog {
            epoch_length: len,
            snapshots: vec![st.q.clone()],
            profiles: Vec::new(),
        }),
    };
    for _ in 0..cfg.stages {
        let out = step(&mut st, game, cfg)?;
        if let Some(log) = traj.epochs.as_mut() {
            log.snapshots.push(st.q.clone());
            log.profiles.push(st.profiles.clone());
        }
        if out.stage % cfg.log_stride == 0 {
            traj.rows.push(TrajectoryRow {
                t: out.stage,
                state: out.state,
                joint_action: out.played,
                q_err: q_star.map(|qs| st.q.sup_dist(qs)),
                opt_play: greedy.as_ref().map(|g| g[out.state] == out.played),
            });
        }
    }
    Ok((st, traj))
}

/// Largest entrywise gap between both sides of the epoch recursion
///
/// `Q~_{(k+1)} = (1 - alpha_(k)) Q~_(k) + alpha_(k) gamma sum_s' p(s'|s,a) V_(k+1)(s')`,
///
/// with `Q~ = Q - Q*` and
/// `V_(k+1)(s') = sum_t (alpha_t / alpha_(k)) (Q_t(s', a_t(s')) - max Q*(s', .))`.
///
/// `snapshots` holds `Q_{kT}, ..., Q_{(k+1)T}` and `profiles` holds
/// `a_{kT}(.), ..., a_{(k+1)T-1}(.)`.
pub fn verify_epoch_identity(
    game: &StochasticGame,
    snapshots: &[QTable],
    profiles: &[Vec<JointAction>],
    schedule: &Schedule,
    epoch_length: usize,
    q_star: &QTable,
    k: u64,
) -> Result<f64> {
    if snapshots.len() != epoch_length + 1 {
        return Err(Error::SnapshotCount {
            expected: epoch_length + 1,
            got: snapshots.len(),
        });
    }
    if profiles.len() != epoch_length {
        return Err(Error::SnapshotCount {
            expected: epoch_length,
            got: profiles.len(),
        });
    }
    let weights = epoch_weights(schedule, k, epoch_length)?;
    let ns = game.num_states();
    let best: Vec<f64> = (0..ns).map(|s| q_star.max_row(s)).collect();

    // weighted[s'] = sum_t alpha_t (Q_t(s', a_t(s')) - max Q*(s', .)) = alpha_(k) V(s')
    let mut weighted = vec![0.0; ns];
    for ((alpha, q_t), prof) in weights.alphas.iter().zip(snapshots).zip(profiles) {
        for (sp, w) in weighted.iter_mut().enumerate() {
            *w += alpha * (q_t.get(sp, prof[sp]) - best[sp]);
        }
    }
    let aggregate = weights.aggregate;
    let v: Vec<f64> = if aggregate > 0.0 {
        weighted.iter().map(|w| w / aggregate).collect()
    } else {
        vec![0.0; ns]
    };

    let start = &snapshots[0];
    let end = &snapshots[epoch_length];
    let gamma = game.gamma();
    let mut residual = 0.0f64;
    for s in 0..ns {
        for a in 0..game.num_joint_actions() {
            let a = JointAction(a);
            let lhs = end.get(s, a) - q_star.get(s, a);
            let cont: f64 = game.transition(s, a).iter().zip(&v).map(|(p, x)| p * x).sum();
            let rhs = (1.0 - aggregate) * (start.get(s, a) - q_star.get(s, a)) + aggregate * gamma * cont;
            residual = residual.max((lhs - rhs).abs());
        }
    }
    Ok(residual)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{random_game, RandomGameParams};
    use crate::solver::solve_q_star;

    fn one_state_two_actions(gamma: f64) -> StochasticGame {
        StochasticGame::from_tables(&[2], gamma, &[vec![0.0, 1.0]], &[vec![vec![1.0], vec![1.0]]]).unwrap()
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax_response(&[0.0, 0.0], 1.0), vec![0.5, 0.5]);
        let p = softmax_response(&[2f64.ln(), 0.0], 1.0);
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((p[1] - 1.0 / 3.0).abs() < 1e-15);
        let sharp = softmax_response(&[0.0, 1.0], 0.01);
        assert!(sharp[1] >= 1.0 - 1e-40);
        // Lower entry e^{-100} / (1 + e^{-100}) is still resolved.
        let expected = (-100f64).exp() / (1.0 + (-100f64).exp());
        assert!((sharp[0] - expected).abs() <= 1e-12 * expected);
        assert!(sharp[0] > 0.0);
    }

    #[test]
    fn softmax_handles_large_entries() {
        let p = softmax_response(&[1e6, 1e6 - 1.0, -1e6], 0.5);
        assert!(p.iter().all(|x| x.is_finite()));
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn q_update_examples() {
        let g = one_state_two_actions(0.5);
        let q = QTable::from_rows(&[vec![0.3, -0.2]]).unwrap();
        assert_eq!(q_update(&g, &q, &[JointAction(0)], 0.0), q);
        let zero = QTable::zeros(1, 2);
        assert_eq!(q_update(&g, &zero, &[JointAction(1)], 1.0).as_slice(), &[0.0, 1.0]);
        assert_eq!(q_update(&g, &zero, &[JointAction(1)], 0.5).as_slice(), &[0.0, 0.5]);
    }

    #[test]
    fn zero_stage_run_is_empty() {
        let g = one_state_two_actions(0.5);
        let cfg = RunConfig::new(Schedule::harmonic(2.0).unwrap(), 0.1, 0, 1);
        let (st, traj) = run(&g, &cfg, None).unwrap();
        assert!(traj.rows.is_empty());
        assert_eq!(st.q, QTable::zeros(1, 2));
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), format!("{TRAJECTORY_HEADER}\n"));
    }

    #[test]
    fn runs_are_deterministic() {
        let g = random_game(&RandomGameParams::uniform(2, 3, 2, 4)).unwrap();
        let cfg = RunConfig {
            log_stride: 7,
            ..RunConfig::new(Schedule::harmonic(2.0).unwrap(), 0.2, 5_000, 99)
        };
        let qs = solve_q_star(&g, 1e-10, 10_000).unwrap().q_star;
        let (a, ta) = run(&g, &cfg, Some(&qs)).unwrap();
        let (b, tb) = run(&g, &cfg, Some(&qs)).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta, tb);
        let mut ca = Vec::new();
        let mut cb = Vec::new();
        ta.write_csv(&mut ca).unwrap();
        tb.write_csv(&mut cb).unwrap();
        assert_eq!(ca, cb);
        let other = RunConfig { seed: 100, ..cfg };
        assert_ne!(run(&g, &other, Some(&qs)).unwrap().1, ta);
    }

    #[test]
    fn friction_changes_one_coordinate() {
        let g = random_game(&RandomGameParams::uniform(3, 3, 3, 8)).unwrap();
        let cfg = RunConfig::new(Schedule::harmonic(1.0).unwrap(), 0.3, 0, 5);
        let mut st = RunState::initial(&g, &cfg).unwrap();
        let space = g.joint_space();
        for _ in 0..5_000 {
            let before = st.profiles.clone();
            let s = st.state;
            let out = step(&mut st, &g, &cfg).unwrap();
            assert_eq!(out.state, s);
            for (x, (old, new)) in before.iter().zip(&st.profiles).enumerate() {
                if x != s {
                    assert_eq!(old, new);
                } else {
                    let diff = (0..space.num_agents())
                        .filter(|&i| space.coordinate(*old, i) != space.coordinate(*new, i))
                        .count();
                    assert!(diff <= 1);
                    if diff == 1 {
                        let i = (0..space.num_agents())
                            .find(|&i| space.coordinate(*old, i) != space.coordinate(*new, i))
                            .unwrap();
                        assert_eq!(i, out.agent);
                    }
                }
            }
        }
    }

    #[test]
    fn epoch_identity_unit_and_frozen() {
        let g = random_game(&RandomGameParams::uniform(2, 2, 2, 3)).unwrap();
        let qs = solve_q_star(&g, 1e-12, 100_000).unwrap().q_star;
        for (schedule, len, tol) in [
            (Schedule::harmonic(2.0).unwrap(), 1usize, 1e-12),
            (Schedule::constant(0.0).unwrap(), 5, 0.0),
        ] {
            let cfg = RunConfig {
                record_epochs: Some(len),
                ..RunConfig::new(schedule.clone(), 0.1, 40, 2)
            };
            let (_, traj) = run(&g, &cfg, None).unwrap();
            let log = traj.epochs.unwrap();
            for k in 0..log.complete_epochs() {
                let (snaps, profs) = log.epoch(k).unwrap();
                let r = verify_epoch_identity(&g, snaps, profs, &schedule, len, &qs, k as u64).unwrap();
                assert!(r <= tol, "k={k}: residual {r}");
            }
        }
    }

    #[test]
    fn epoch_identity_rejects_wrong_snapshot_count() {
        let g = one_state_two_actions(0.5);
        let q = QTable::zeros(1, 2);
        let err = verify_epoch_identity(
            &g,
            &[q.clone(), q.clone()],
            &[vec![JointAction(0)], vec![JointAction(0)]],
            &Schedule::harmonic(1.0).unwrap(),
            2,
            &q,
            0,
        );
        assert!(matches!(err, Err(Error::SnapshotCount { expected: 3, got: 2 })));
    }

    #[test]
    fn invalid_config_rejected() {
        let g = one_state_two_actions(0.5);
        let bad_tau = RunConfig::new(Schedule::harmonic(1.0).unwrap(), 0.0, 1, 1);
        assert!(run(&g, &bad_tau, None).is_err());
        let bad_state = RunConfig {
            initial_state: InitialState::Fixed(3),
            ..RunConfig::new(Schedule::harmonic(1.0).unwrap(), 0.1, 1, 1)
        };
        assert!(run(&g, &bad_state, None).is_err());
    }
}
