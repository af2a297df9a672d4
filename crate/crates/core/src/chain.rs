//! The stage-play Markov chain with the Q-table held fixed, and the tools
//! used to compare it with the live dynamics.
//!
//! An extended state is the current state together with the last joint
//! action stored at every state, `w = (s, a(.)) in W = S x A^|S|`. With Q
//! frozen, one stage of the dynamics moves `w` to `w'` where only the profile
//! at `s` may change, in at most one agent's coordinate:
//!
//! * agent `i` switches to `b` and the next state is `s'`:
//!   `(1/n) sigma(Q(s, ., a^{-i}(s)))[b] p(s' | s, a(s) with b)`;
//! * nobody changes: the sum of the above over agents that redraw their
//!   current action, times `p(s' | s, a(s))`.
//!
//! Flat extended index: `s * |A|^|S| + sum_j a(j) |A|^(|S|-1-j)`.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::dynamics::{q_update_in_place, softmax_in_place};
use crate::error::{Error, Result};
use crate::game::{JointAction, QTable, StochasticGame};
use crate::par::{self, Exec};
use crate::sampling::{sample_index, sample_weighted};
use crate::schedule::Schedule;

/// Default cap on `|W|` for operations that materialize the chain.
pub const DEFAULT_BUDGET: usize = 200_000;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ExtendedState {
    pub state: usize,
    pub profiles: Vec<JointAction>,
}

/// Indexing of `W = S x A^|S|`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExtendedSpace {
    num_states: usize,
    num_actions: usize,
    size: u128,
}

impl ExtendedSpace {
    pub fn new(num_states: usize, num_actions: usize) -> Self {
        let mut size = num_states as u128;
        for _ in 0..num_states {
            size = size.saturating_mul(num_actions as u128);
        }
        Self {
            num_states,
            num_actions,
            size,
        }
    }

    pub fn for_game(game: &StochasticGame) -> Self {
        Self::new(game.num_states(), game.num_joint_actions())
    }

    /// `|W| = |S| |A|^|S|` (saturating).
    pub fn size(&self) -> u128 {
        self.size
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    /// Errors when `|W|` exceeds `budget`.
    pub fn check_budget(&self, budget: usize) -> Result<usize> {
        if self.size > budget as u128 {
            return Err(Error::BudgetExceeded {
                size: self.size,
                budget,
            });
        }
        Ok(self.size as usize)
    }

    /// `|A|^(|S|-1-j)`, the weight of state `j`'s profile in the flat index.
    fn profile_weight(&self, j: usize) -> usize {
        self.num_actions.pow((self.num_states - 1 - j) as u32)
    }

    fn block(&self) -> usize {
        self.num_actions.pow(self.num_states as u32)
    }

    pub fn encode(&self, w: &ExtendedState) -> usize {
        let mut idx = w.state;
        for a in &w.profiles {
            idx = idx * self.num_actions + a.0;
        }
        idx
    }

    pub fn decode(&self, mut idx: usize) -> ExtendedState {
        let mut profiles = vec![JointAction(0); self.num_states];
        for j in (0..self.num_states).rev() {
            profiles[j] = JointAction(idx % self.num_actions);
            idx /= self.num_actions;
        }
        ExtendedState { state: idx, profiles }
    }

    #[inline]
    pub fn base_state(&self, idx: usize) -> usize {
        idx / self.block()
    }

    /// Profile stored at state `j` in the extended state `idx`.
    #[inline]
    pub fn profile_at(&self, idx: usize, j: usize) -> JointAction {
        JointAction((idx / self.profile_weight(j)) % self.num_actions)
    }
}

/// One feasible transition out of an extended state: the profile stored at
/// the current state becomes `profile` and the game moves to `next_state`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RowEntry {
    pub profile: JointAction,
    pub next_state: usize,
    pub prob: f64,
}

/// Transition distribution out of `w` for the table `q`.
///
/// Entries are sorted by `(profile, next_state)` and cover every target with
/// a positive kernel entry, so two rows out of the same `w` always line up
/// entry by entry whatever the Q-tables.
pub fn transition_row(game: &StochasticGame, q: &QTable, tau: f64, w: &ExtendedState) -> Vec<RowEntry> {
    let space = game.joint_space();
    let s = w.state;
    let current = w.profiles[s];
    let n = space.num_agents() as f64;

    let mut weights: BTreeMap<JointAction, f64> = BTreeMap::new();
    let mut buf = Vec::with_capacity(space.max_actions());
    for agent in 0..space.num_agents() {
        buf.clear();
        buf.extend(space.unilateral(current, agent).map(|a| q.get(s, a)));
        softmax_in_place(&mut buf, tau);
        for (a, p) in space.unilateral(current, agent).zip(&buf) {
            *weights.entry(a).or_insert(0.0) += p / n;
        }
    }

    let mut row = Vec::with_capacity(weights.len() * game.num_states());
    for (profile, weight) in weights {
        for (next_state, &p) in game.transition(s, profile).iter().enumerate() {
            if p > 0.0 {
                row.push(RowEntry {
                    profile,
                    next_state,
                    prob: weight * p,
                });
            }
        }
    }
    row
}

/// Row-stochastic matrix in compressed sparse row form.
#[derive(Debug, Clone, PartialEq)]
pub struct StochasticMatrix {
    offsets: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl StochasticMatrix {
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Self {
        let mut offsets = Vec::with_capacity(rows.len() + 1);
        offsets.push(0);
        let nnz = rows.iter().map(Vec::len).sum();
        let mut cols = Vec::with_capacity(nnz);
        let mut vals = Vec::with_capacity(nnz);
        for mut row in rows {
            row.sort_by_key(|&(c, _)| c);
            for (c, v) in row {
                cols.push(c);
                vals.push(v);
            }
            offsets.push(cols.len());
        }
        Self { offsets, cols, vals }
    }

    pub fn from_dense(rows: &[Vec<f64>]) -> Self {
        Self::from_rows(
            rows.iter()
                .map(|r| r.iter().copied().enumerate().filter(|&(_, v)| v != 0.0).collect())
                .collect(),
        )
    }

    pub fn dim(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.offsets[i], self.offsets[i + 1]);
        (&self.cols[a..b], &self.vals[a..b])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        cols.binary_search(&j).map_or(0.0, |k| vals[k])
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        self.row(i).1.iter().sum()
    }

    /// Column-major copy: for every column, the `(row, value)` pairs feeding it.
    fn transpose(&self) -> StochasticMatrix {
        let n = self.dim();
        let mut counts = vec![0usize; n + 1];
        for &c in &self.cols {
            counts[c + 1] += 1;
        }
        for i in 0..n {
            counts[i + 1] += counts[i];
        }
        let mut fill = counts.clone();
        let mut rows = vec![0usize; self.nnz()];
        let mut vals = vec![0.0; self.nnz()];
        for i in 0..n {
            let (cs, vs) = self.row(i);
            for (&c, &v) in cs.iter().zip(vs) {
                rows[fill[c]] = i;
                vals[fill[c]] = v;
                fill[c] += 1;
            }
        }
        StochasticMatrix {
            offsets: counts,
            cols: rows,
            vals,
        }
    }
}

/// The stage-play chain over `W` for a frozen Q-table.
#[derive(Debug, Clone)]
pub struct ExtendedChain {
    pub space: ExtendedSpace,
    pub matrix: StochasticMatrix,
    pub q: QTable,
    pub tau: f64,
}

impl ExtendedChain {
    pub fn size(&self) -> usize {
        self.matrix.dim()
    }
}

pub fn build_extended_chain(game: &StochasticGame, q: &QTable, tau: f64) -> Result<ExtendedChain> {
    build_extended_chain_with(game, q, tau, DEFAULT_BUDGET, Exec::default())
}

pub fn build_extended_chain_with(
    game: &StochasticGame,
    q: &QTable,
    tau: f64,
    budget: usize,
    exec: Exec,
) -> Result<ExtendedChain> {
    if !(tau > 0.0) {
        return Err(Error::invalid("temperature must be positive"));
    }
    let space = ExtendedSpace::for_game(game);
    let size = space.check_budget(budget)?;
    let block = space.block();
    let rows = par::map_range(exec, size, |idx| {
        let w = space.decode(idx);
        let s = w.state;
        // Target index with profile at s replaced and base state moved.
        let without = idx % block - w.profiles[s].0 * space.profile_weight(s);
        transition_row(game, q, tau, &w)
            .into_iter()
            .map(|e| {
                let target = e.next_state * block + without + e.profile.0 * space.profile_weight(s);
                (target, e.prob)
            })
            .collect::<Vec<_>>()
    });
    Ok(ExtendedChain {
        space,
        matrix: StochasticMatrix::from_rows(rows),
        q: q.clone(),
        tau,
    })
}

/// `(epsilon, kappa)`: a lower bound on every nonzero transition probability
/// of any chain built from a table with `||Q||_inf <= q_bound`, and the
/// reachability horizon `kappa = |S| n`.
///
/// Every softmax entry is at least `exp(-2 q_bound / tau) / |A^i|`, hence
/// `epsilon = (1/n) exp(-2 q_bound / tau) / max_i |A^i| * min p`.
pub fn epsilon_kappa(game: &StochasticGame, q_bound: f64, tau: f64) -> Result<(f64, usize)> {
    if !(q_bound >= 0.0) || !(tau > 0.0) {
        return Err(Error::invalid("q_bound must be nonnegative and tau positive"));
    }
    let min_p = game.min_transition_prob();
    if !(min_p > 0.0) {
        return Err(Error::NotIrreducible);
    }
    let n = game.num_agents();
    let max_actions = game.joint_space().max_actions() as f64;
    let epsilon = (-2.0 * q_bound / tau).exp() / max_actions * min_p / n as f64;
    Ok((epsilon, game.num_states() * n))
}

pub fn stationary_distribution(matrix: &StochasticMatrix, tol: f64, max_iter: usize) -> Result<Vec<f64>> {
    stationary_distribution_with(matrix, tol, max_iter, Exec::default())
}

/// Power iteration from the uniform distribution until the L1 change of one
/// step is at most `tol`.
pub fn stationary_distribution_with(
    matrix: &StochasticMatrix,
    tol: f64,
    max_iter: usize,
    exec: Exec,
) -> Result<Vec<f64>> {
    let n = matrix.dim();
    if n == 0 {
        return Err(Error::invalid("empty chain"));
    }
    let incoming = matrix.transpose();
    let mut pi = vec![1.0 / n as f64; n];
    let mut next = vec![0.0; n];
    let mut change = f64::INFINITY;
    for _ in 0..max_iter {
        par::fill_indexed(exec, &mut next, |j| {
            let (rows, vals) = incoming.row(j);
            rows.iter().zip(vals).map(|(&i, &v)| pi[i] * v).sum()
        });
        let total: f64 = next.iter().sum();
        next.iter_mut().for_each(|x| *x /= total);
        change = next.iter().zip(&pi).map(|(a, b)| (a - b).abs()).sum();
        std::mem::swap(&mut pi, &mut next);
        if change <= tol {
            return Ok(pi);
        }
    }
    Err(Error::NotConverged {
        iterations: max_iter,
        last_residual: change,
    })
}

/// `||pi P - pi||_1`.
pub fn stationarity_residual(matrix: &StochasticMatrix, pi: &[f64]) -> f64 {
    let mut out = vec![0.0; matrix.dim()];
    for (i, &m) in pi.iter().enumerate() {
        let (cols, vals) = matrix.row(i);
        for (&c, &v) in cols.iter().zip(vals) {
            out[c] += m * v;
        }
    }
    out.iter().zip(pi).map(|(a, b)| (a - b).abs()).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MarginalMode {
    /// Distribution of the profile at `s` given that the base state is `s`.
    #[default]
    Conditional,
    /// Distribution of the profile stored at `s` over all of `W`.
    Joint,
}

/// Distribution over `A` of the joint action stored at state `s`.
pub fn state_action_marginal(space: &ExtendedSpace, dist: &[f64], s: usize, mode: MarginalMode) -> Result<Vec<f64>> {
    if s >= space.num_states() {
        return Err(Error::invalid(format!("state {s} out of range")));
    }
    if dist.len() as u128 != space.size() {
        return Err(Error::Shape {
            field: "dist",
            detail: format!("{} entries, expected |W| = {}", dist.len(), space.size()),
        });
    }
    let mut out = vec![0.0; space.num_actions()];
    for (idx, &m) in dist.iter().enumerate() {
        if mode == MarginalMode::Conditional && space.base_state(idx) != s {
            continue;
        }
        out[space.profile_at(idx, s).0] += m;
    }
    let total: f64 = out.iter().sum();
    if !(total > 0.0) {
        return Err(Error::ZeroMass(s));
    }
    if mode == MarginalMode::Conditional {
        out.iter_mut().for_each(|x| *x /= total);
    }
    Ok(out)
}

/// `(1/2) sum_i |p_i - q_i|`.
pub fn tv_distance(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Shape {
            field: "distribution",
            detail: format!("lengths {} and {} differ", p.len(), q.len()),
        });
    }
    Ok(0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

/// Joint draw `(x, y)` with `x ~ p`, `y ~ q` and `P(x != y) = TV(p, q)`.
///
/// With probability `sum_i min(p_i, q_i)` both come from the normalized
/// overlap; otherwise `x` and `y` are drawn independently from the
/// normalized excesses `p - min(p, q)` and `q - min(p, q)`, whose supports
/// are disjoint.
pub fn maximal_coupling_sample<R: Rng + ?Sized>(p: &[f64], q: &[f64], rng: &mut R) -> (usize, usize) {
    debug_assert_eq!(p.len(), q.len());
    let overlap: Vec<f64> = p.iter().zip(q).map(|(a, b)| a.min(*b)).collect();
    let mass: f64 = overlap.iter().sum();
    let excess_p: f64 = p.iter().zip(&overlap).map(|(a, m)| a - m).sum();
    if excess_p <= 0.0 {
        let x = sample_weighted(&overlap, mass, rng);
        return (x, x);
    }
    let u: f64 = rng.random::<f64>() * (mass + excess_p);
    if u < mass {
        let x = sample_weighted(&overlap, mass, rng);
        return (x, x);
    }
    let rest_p: Vec<f64> = p.iter().zip(&overlap).map(|(a, m)| a - m).collect();
    let rest_q: Vec<f64> = q.iter().zip(&overlap).map(|(a, m)| a - m).collect();
    let excess_q: f64 = rest_q.iter().sum();
    let x = sample_weighted(&rest_p, excess_p, rng);
    let y = sample_weighted(&rest_q, excess_q, rng);
    (x, y)
}

/// How the main chain evolves in a coupled run.
#[derive(Debug, Clone, PartialEq)]
pub enum MainChain {
    /// Q follows the learning update with this schedule (absolute stage
    /// indices start at the configured epoch start).
    Live(Schedule),
    /// Q stays at the frozen table, so both chains share one kernel.
    Frozen,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CouplingConfig {
    pub tau: f64,
    /// Absolute stage index `kT` of the first coupled stage.
    pub epoch_start: u64,
    /// Stages simulated after the common start.
    pub length: usize,
    pub kappa: usize,
    pub main: MainChain,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CouplingStart {
    pub main: ExtendedState,
    pub fictional: ExtendedState,
}

impl CouplingStart {
    pub fn shared(w: ExtendedState) -> Self {
        Self {
            main: w.clone(),
            fictional: w,
        }
    }
}

/// One coupled pair of trajectories.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingResult {
    /// `matched[t]` for `t = 0..=length` (relative to the epoch start).
    pub matched: Vec<bool>,
    pub kappa: usize,
    /// Largest one-step TV distance between the main and fictional rows
    /// observed at the main chain's states.
    pub max_step_tv: f64,
}

impl CouplingResult {
    pub fn m_epoch(&self, t: usize) -> usize {
        t / self.kappa
    }
}

fn row_probs(row: &[RowEntry]) -> Vec<f64> {
    row.iter().map(|e| e.prob).collect()
}

fn advance(w: &ExtendedState, e: &RowEntry) -> ExtendedState {
    let mut profiles = w.profiles.clone();
    profiles[w.state] = e.profile;
    ExtendedState {
        state: e.next_state,
        profiles,
    }
}

/// Simulates the main chain and the fictional (frozen-Q) chain in lockstep.
///
/// While the two extended states agree, the next pair is drawn from the
/// maximal coupling of the two rows; otherwise the chains move
/// independently.
pub fn coupled_run<R: Rng + ?Sized>(
    game: &StochasticGame,
    frozen_q: &QTable,
    cfg: &CouplingConfig,
    start: CouplingStart,
    rng: &mut R,
) -> Result<CouplingResult> {
    if cfg.kappa == 0 {
        return Err(Error::invalid("kappa must be at least 1"));
    }
    if !(cfg.tau > 0.0) {
        return Err(Error::invalid("temperature must be positive"));
    }
    let ns = game.num_states();
    for w in [&start.main, &start.fictional] {
        if w.state >= ns || w.profiles.len() != ns || w.profiles.iter().any(|a| a.0 >= game.num_joint_actions()) {
            return Err(Error::invalid("start state does not belong to the game"));
        }
    }
    let mut main_q = frozen_q.clone();
    let mut scratch = vec![0.0; ns];
    let mut w = start.main;
    let mut w_hat = start.fictional;
    let mut matched = Vec::with_capacity(cfg.length + 1);
    matched.push(w == w_hat);
    let mut max_step_tv = 0.0f64;

    for t in 0..cfg.length {
        let live = match &cfg.main {
            MainChain::Live(schedule) => Some(schedule.beta(cfg.epoch_start + t as u64)?),
            MainChain::Frozen => None,
        };
        let main_row = transition_row(game, &main_q, cfg.tau, &w);
        let fict_at_main = if live.is_some() {
            let r = transition_row(game, frozen_q, cfg.tau, &w);
            let tv = tv_distance(&row_probs(&main_row), &row_probs(&r))?;
            max_step_tv = max_step_tv.max(tv);
            Some(r)
        } else {
            None
        };

        let (next, next_hat) = if w == w_hat {
            let hat_row = fict_at_main.unwrap_or_else(|| main_row.clone());
            let (x, y) = maximal_coupling_sample(&row_probs(&main_row), &row_probs(&hat_row), rng);
            (advance(&w, &main_row[x]), advance(&w_hat, &hat_row[y]))
        } else {
            let hat_row = transition_row(game, frozen_q, cfg.tau, &w_hat);
            let x = sample_index(&row_probs(&main_row), rng);
            let y = sample_index(&row_probs(&hat_row), rng);
            (advance(&w, &main_row[x]), advance(&w_hat, &hat_row[y]))
        };

        if let Some(beta) = live {
            // The new profile map is a_t(.), the input of the stage-t update.
            q_update_in_place(game, &mut main_q, &next.profiles, beta, &mut scratch);
        }
        w = next;
        w_hat = next_hat;
        matched.push(w == w_hat);
    }
    Ok(CouplingResult {
        matched,
        kappa: cfg.kappa,
        max_step_tv,
    })
}

/// Empirical mismatch statistics over many coupled pairs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CouplingSummary {
    pub pairs: usize,
    pub kappa: usize,
    /// Fraction of pairs mismatched at each stage `t = 0..=length`.
    pub mismatch_rate: Vec<f64>,
    pub max_step_tv: f64,
}

/// Per-block view: worst stage of `[m kappa, (m+1) kappa)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BlockMismatch {
    pub m: usize,
    pub t: usize,
    pub rate: f64,
    /// Three binomial standard errors at `rate`.
    pub three_sigma: f64,
}

impl CouplingSummary {
    pub fn blocks(&self) -> Vec<BlockMismatch> {
        let n = self.pairs as f64;
        self.mismatch_rate
            .chunks(self.kappa)
            .enumerate()
            .map(|(m, chunk)| {
                let (off, rate) = chunk
                    .iter()
                    .copied()
                    .enumerate()
                    .fold((0, f64::MIN), |acc, (i, r)| if r > acc.1 { (i, r) } else { acc });
                BlockMismatch {
                    m,
                    t: m * self.kappa + off,
                    rate,
                    three_sigma: 3.0 * (rate * (1.0 - rate) / n).sqrt(),
                }
            })
            .collect()
    }
}

/// Per-pair random stream: the master seed with ChaCha stream id
/// `pair + 1`. Stream 0 stays free for whatever produced the common start.
pub fn pair_rng(seed: u64, pair: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(pair.wrapping_add(1));
    rng
}

/// Runs `pairs` coupled pairs. `start` chooses the initial pair from the
/// pair's own random stream; the first `keep` results are returned in full.
#[allow(clippy::too_many_arguments)]
pub fn coupling_experiment<F>(
    game: &StochasticGame,
    frozen_q: &QTable,
    cfg: &CouplingConfig,
    pairs: usize,
    seed: u64,
    keep: usize,
    start: F,
    exec: Exec,
) -> Result<(CouplingSummary, Vec<CouplingResult>)>
where
    F: Fn(&mut ChaCha8Rng) -> CouplingStart + Send + Sync,
{
    if pairs == 0 {
        return Err(Error::invalid("at least one pair is required"));
    }
    let results = par::map_range(exec, pairs, |i| {
        let mut rng = pair_rng(seed, i as u64);
        let st = start(&mut rng);
        coupled_run(game, frozen_q, cfg, st, &mut rng)
    });
    let mut mismatches = vec![0usize; cfg.length + 1];
    let mut max_step_tv = 0.0f64;
    let mut kept = Vec::with_capacity(keep.min(pairs));
    for (i, r) in results.into_iter().enumerate() {
        let r = r?;
        for (slot, &m) in mismatches.iter_mut().zip(&r.matched) {
            *slot += usize::from(!m);
        }
        max_step_tv = max_step_tv.max(r.max_step_tv);
        if i < keep {
            kept.push(r);
        }
    }
    let summary = CouplingSummary {
        pairs,
        kappa: cfg.kappa,
        mismatch_rate: mismatches.iter().map(|&c| c as f64 / pairs as f64).collect(),
        max_step_tv,
    };
    Ok((summary, kept))
}

/// Draws an extended state from a distribution over `W`.
pub fn sample_extended_state<R: Rng + ?Sized>(space: &ExtendedSpace, dist: &[f64], rng: &mut R) -> ExtendedState {
    space.decode(sample_index(dist, rng))
}

/// Uniformly random extended state.
pub fn random_extended_state<R: Rng + ?Sized>(game: &StochasticGame, rng: &mut R) -> ExtendedState {
    let ns = game.num_states();
    let na = game.num_joint_actions();
    let state = rng.random_range(0..ns);
    let profiles = (0..ns).map(|_| JointAction(rng.random_range(0..na))).collect();
    ExtendedState { state, profiles }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MismatchBound {
    pub raw: f64,
    pub clamped: f64,
}

/// Mismatch bound for stages in `[m kappa, (m+1) kappa)`:
/// `(1 - e^k l^k)^m + (1 - l^k)(1 + e^k l^k) / (e^k l^k)`.
pub fn lemma2_bound(epsilon: f64, lambda: f64, kappa: usize, m: u64) -> MismatchBound {
    let k = kappa as i32;
    let lk = lambda.powi(k);
    let x = epsilon.powi(k) * lk;
    let decay = (1.0 - x).powf(m as f64);
    let drift = if lk == 1.0 {
        0.0
    } else if x == 0.0 {
        f64::INFINITY
    } else {
        (1.0 - lk) * (1.0 + x) / x
    };
    let raw = decay + drift;
    MismatchBound {
        raw,
        clamped: raw.clamp(0.0, 1.0),
    }
}

/// Soft-versus-hard maximum gap at one state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SoftMaxGap {
    /// `E_{a ~ sigma(Q(s,.))} Q(s, a) - max_a Q(s, a)`, never positive.
    pub e_d: f64,
    /// `tau ln|A|`.
    pub bound: f64,
}

impl SoftMaxGap {
    pub fn within_bound(&self) -> bool {
        self.e_d <= 0.0 && -self.e_d <= self.bound
    }
}

pub fn soft_vs_hard_gap(q: &QTable, tau: f64, s: usize) -> SoftMaxGap {
    soft_vs_hard_gap_row(q.row(s), tau)
}

pub fn soft_vs_hard_gap_row(row: &[f64], tau: f64) -> SoftMaxGap {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut probs = row.to_vec();
    softmax_in_place(&mut probs, tau);
    // Summing non-positive terms keeps the sign exact.
    let e_d = probs.iter().zip(row).map(|(p, x)| p * (x - max)).sum();
    SoftMaxGap {
        e_d,
        bound: tau * (row.len() as f64).ln(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum LambdaStatus {
    /// `lambda_(k) in (0, 1]`, with the drift term
    /// `Lambda_(k) = (1 - lambda)(1 + e^k l^k)/(e^k l^k)`.
    InRegime { lambda: f64, drift: f64 },
    /// `lambda_(k) <= 0`: epoch too early or stepsize too large.
    OutOfRegime { lambda: f64 },
}

/// The analytic bounds assembled for one epoch.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubErrorReport {
    pub epoch: u64,
    pub epoch_length: usize,
    pub beta_start: f64,
    pub q_bound: f64,
    pub epsilon: f64,
    pub kappa: usize,
    /// `2 Q T beta_{kT}`.
    pub e_a_bound: f64,
    /// `(1/T) 2 Q kappa / epsilon^kappa`, the limit bound for both the
    /// coupling and the fictional-mixing sub-errors.
    pub e_bc_bound: f64,
    /// `tau ln|A|`.
    pub e_d_bound: f64,
    /// `tau ln|A| / (1 - gamma)`.
    pub asymptotic_bound: f64,
    pub lipschitz: Option<f64>,
    pub lambda: Option<LambdaStatus>,
}

/// `q_bound` defaults to `max|r| / (1 - gamma)`; `lambda` is reported only
/// when a Lipschitz constant is given.
pub fn sub_error_bounds(
    game: &StochasticGame,
    schedule: &Schedule,
    k: u64,
    epoch_length: usize,
    tau: f64,
    q_bound: Option<f64>,
    lipschitz: Option<f64>,
) -> Result<SubErrorReport> {
    if epoch_length == 0 {
        return Err(Error::invalid("epoch length must be at least 1"));
    }
    let q_bar = q_bound.unwrap_or_else(|| game.q_bound());
    let start = k * epoch_length as u64;
    let beta = schedule.beta(start)?;
    let (epsilon, kappa) = epsilon_kappa(game, q_bar, tau)?;
    let t = epoch_length as f64;
    let eps_k = epsilon.powi(kappa as i32);
    let ln_a = (game.num_joint_actions() as f64).ln();
    let lambda = lipschitz.map(|c| {
        let lambda = 1.0 - c * q_bar * t * beta;
        if lambda > 0.0 && lambda <= 1.0 {
            let x = eps_k * lambda.powi(kappa as i32);
            let drift = if lambda == 1.0 { 0.0 } else { (1.0 - lambda) * (1.0 + x) / x };
            LambdaStatus::InRegime { lambda, drift }
        } else {
            LambdaStatus::OutOfRegime { lambda }
        }
    });
    Ok(SubErrorReport {
        epoch: k,
        epoch_length,
        beta_start: beta,
        q_bound: q_bar,
        epsilon,
        kappa,
        e_a_bound: 2.0 * q_bar * t * beta,
        e_bc_bound: 2.0 * q_bar * kappa as f64 / eps_k / t,
        e_d_bound: tau * ln_a,
        asymptotic_bound: tau * ln_a / (1.0 - game.gamma()),
        lipschitz,
        lambda,
    })
}

/// Empirical Lipschitz constant of `Q -> P(. | w)` in TV per unit sup-norm
/// change, maximized over `samples` random extended states and
/// perturbations of sup-norm up to `radius` around `q`.
pub fn estimate_lipschitz(game: &StochasticGame, q: &QTable, tau: f64, samples: usize, radius: f64, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = 0.0f64;
    for _ in 0..samples {
        let w = random_extended_state(game, &mut rng);
        let scale = radius * rng.random_range(0.01..1.0);
        let mut perturbed = q.clone();
        for x in perturbed.as_mut_slice() {
            *x += scale * rng.random_range(-1.0..=1.0);
        }
        let dist = perturbed.sup_dist(q);
        if dist == 0.0 {
            continue;
        }
        let a = row_probs(&transition_row(game, q, tau, &w));
        let b = row_probs(&transition_row(game, &perturbed, tau, &w));
        let tv = tv_distance(&a, &b).unwrap_or(0.0);
        best = best.max(tv / dist);
    }
    best
}
