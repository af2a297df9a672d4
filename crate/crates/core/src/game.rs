//! Finite identical-interest stochastic games.
//!
//! A game is the tuple (states, per-agent action sets, common reward, kernel,
//! discount). Joint actions are addressed by a flat row-major index with
//! agent 0 as the most significant coordinate; every table in the crate and
//! every file format uses that ordering.

use std::fmt;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::FORMAT_VERSION;

/// Tolerance on kernel row sums.
pub const ROW_SUM_TOL: f64 = 1e-12;

/// Flat index of a joint action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct JointAction(pub usize);

impl JointAction {
    #[inline]
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for JointAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// The joint action space `A = A^1 x ... x A^n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JointSpace {
    sizes: Vec<usize>,
    strides: Vec<usize>,
    len: usize,
}

impl JointSpace {
    pub fn new(sizes: &[usize]) -> Result<Self> {
        if sizes.is_empty() {
            return Err(Error::invalid("at least one agent is required"));
        }
        if sizes.contains(&0) {
            return Err(Error::invalid("every agent needs at least one action"));
        }
        let mut strides = vec![1usize; sizes.len()];
        let mut len = 1usize;
        for i in (0..sizes.len()).rev() {
            strides[i] = len;
            len = len
                .checked_mul(sizes[i])
                .ok_or_else(|| Error::invalid("joint action space overflows usize"))?;
        }
        Ok(Self {
            sizes: sizes.to_vec(),
            strides,
            len,
        })
    }

    /// `|A|`.
    #[inline]
    pub fn len(&self) -> usize {
        self.len
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn num_agents(&self) -> usize {
        self.sizes.len()
    }

    #[inline]
    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn max_actions(&self) -> usize {
        self.sizes.iter().copied().max().unwrap_or(0)
    }

    /// Flat index of per-agent actions; `None` if any coordinate is out of range.
    pub fn encode(&self, actions: &[usize]) -> Option<JointAction> {
        if actions.len() != self.sizes.len() {
            return None;
        }
        let mut idx = 0;
        for ((&a, &k), &stride) in actions.iter().zip(&self.sizes).zip(&self.strides) {
            if a >= k {
                return None;
            }
            idx += a * stride;
        }
        Some(JointAction(idx))
    }

    pub fn decode(&self, a: JointAction) -> Vec<usize> {
        (0..self.num_agents()).map(|i| self.coordinate(a, i)).collect()
    }

    /// Agent `agent`'s action inside the joint action `a`.
    #[inline]
    pub fn coordinate(&self, a: JointAction, agent: usize) -> usize {
        (a.0 / self.strides[agent]) % self.sizes[agent]
    }

    /// `a` with agent `agent`'s coordinate replaced by `action`.
    #[inline]
    pub fn with_coordinate(&self, a: JointAction, agent: usize, action: usize) -> JointAction {
        let current = self.coordinate(a, agent);
        JointAction(a.0 - current * self.strides[agent] + action * self.strides[agent])
    }

    /// Joint actions obtained by letting `agent` vary while the others stay
    /// at their coordinates in `a`, in increasing order of the agent's action.
    pub fn unilateral(&self, a: JointAction, agent: usize) -> impl Iterator<Item = JointAction> + '_ {
        let base = a.0 - self.coordinate(a, agent) * self.strides[agent];
        let stride = self.strides[agent];
        (0..self.sizes[agent]).map(move |x| JointAction(base + x * stride))
    }
}

/// A finite n-agent identical-interest stochastic game.
#[derive(Debug, Clone, PartialEq)]
pub struct StochasticGame {
    space: JointSpace,
    num_states: usize,
    gamma: f64,
    /// `reward[s * |A| + a]`
    reward: Vec<f64>,
    /// `kernel[(s * |A| + a) * |S| + s']`
    kernel: Vec<f64>,
}

impl StochasticGame {
    /// Builds a game from flat tables. Only shapes are checked here; the
    /// numeric invariants are reported by [`StochasticGame::validate`].
    pub fn from_flat(
        num_states: usize,
        actions_per_agent: &[usize],
        gamma: f64,
        reward: Vec<f64>,
        kernel: Vec<f64>,
    ) -> Result<Self> {
        if num_states == 0 {
            return Err(Error::invalid("at least one state is required"));
        }
        let space = JointSpace::new(actions_per_agent)?;
        let sa = num_states * space.len();
        if reward.len() != sa {
            return Err(Error::Shape {
                field: "reward",
                detail: format!("{} entries, expected {}", reward.len(), sa),
            });
        }
        if kernel.len() != sa * num_states {
            return Err(Error::Shape {
                field: "kernel",
                detail: format!("{} entries, expected {}", kernel.len(), sa * num_states),
            });
        }
        Ok(Self {
            space,
            num_states,
            gamma,
            reward,
            kernel,
        })
    }

    /// Builds a game from nested tables `reward[s][a]` and `kernel[s][a][s']`.
    pub fn from_tables(
        actions_per_agent: &[usize],
        gamma: f64,
        reward: &[Vec<f64>],
        kernel: &[Vec<Vec<f64>>],
    ) -> Result<Self> {
        let space = JointSpace::new(actions_per_agent)?;
        let num_states = reward.len();
        check_nested(&space, num_states, reward, kernel)?;
        let flat_r = reward.iter().flatten().copied().collect();
        let flat_k = kernel.iter().flatten().flatten().copied().collect();
        Self::from_flat(num_states, actions_per_agent, gamma, flat_r, flat_k)
    }

    #[inline]
    pub fn num_states(&self) -> usize {
        self.num_states
    }

    #[inline]
    pub fn num_agents(&self) -> usize {
        self.space.num_agents()
    }

    #[inline]
    pub fn num_joint_actions(&self) -> usize {
        self.space.len()
    }

    #[inline]
    pub fn joint_space(&self) -> &JointSpace {
        &self.space
    }

    pub fn actions_per_agent(&self) -> &[usize] {
        self.space.sizes()
    }

    #[inline]
    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    #[inline]
    pub fn reward(&self, s: usize, a: JointAction) -> f64 {
        self.reward[s * self.space.len() + a.0]
    }

    #[inline]
    pub fn reward_row(&self, s: usize) -> &[f64] {
        let na = self.space.len();
        &self.reward[s * na..(s + 1) * na]
    }

    /// `p(. | s, a)`.
    #[inline]
    pub fn transition(&self, s: usize, a: JointAction) -> &[f64] {
        let ns = self.num_states;
        let start = (s * self.space.len() + a.0) * ns;
        &self.kernel[start..start + ns]
    }

    pub fn rewards(&self) -> &[f64] {
        &self.reward
    }

    pub fn kernel(&self) -> &[f64] {
        &self.kernel
    }

    /// `max |r(s, a)|`.
    pub fn max_abs_reward(&self) -> f64 {
        self.reward.iter().fold(0.0, |m, r| m.max(r.abs()))
    }

    /// `max |r| / (1 - gamma)`, the a-priori bound on every Q-iterate
    /// started from zero with stepsizes in `[0, 1]`.
    pub fn q_bound(&self) -> f64 {
        self.max_abs_reward() / (1.0 - self.gamma)
    }

    pub fn min_transition_prob(&self) -> f64 {
        self.kernel.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Lists every violated invariant; an empty report means the game is valid.
    pub fn validate(&self) -> ValidationReport {
        let mut issues = Vec::new();
        if !(0.0..1.0).contains(&self.gamma) {
            issues.push(ValidationIssue::DiscountOutOfRange { gamma: self.gamma });
        }
        let na = self.space.len();
        for s in 0..self.num_states {
            for a in 0..na {
                let action = JointAction(a);
                let r = self.reward(s, action);
                if !r.is_finite() {
                    issues.push(ValidationIssue::NonFiniteReward { state: s, action, value: r });
                }
                let row = self.transition(s, action);
                for (next, &p) in row.iter().enumerate() {
                    if !(p.is_finite() && (0.0..=1.0).contains(&p)) {
                        issues.push(ValidationIssue::BadProbability {
                            state: s,
                            action,
                            next,
                            value: p,
                        });
                    }
                }
                let sum: f64 = row.iter().sum();
                if !((sum - 1.0).abs() <= ROW_SUM_TOL) {
                    issues.push(ValidationIssue::KernelRowSum { state: s, action, sum });
                }
            }
        }
        ValidationReport { issues }
    }

    /// `p(s' | s, a) > 0` for every `(s', s, a)`.
    pub fn is_irreducible(&self) -> bool {
        self.kernel.iter().all(|&p| p > 0.0)
    }

    pub fn to_file(&self) -> GameFile {
        let na = self.space.len();
        let ns = self.num_states;
        GameFile {
            spec_version: Some(FORMAT_VERSION.to_string()),
            n: self.num_agents(),
            num_states: ns,
            actions_per_agent: self.space.sizes().to_vec(),
            gamma: self.gamma,
            reward: self.reward.chunks(na).map(<[f64]>::to_vec).collect(),
            kernel: self
                .kernel
                .chunks(na * ns)
                .map(|block| block.chunks(ns).map(<[f64]>::to_vec).collect())
                .collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("game serializes")
    }

    pub fn from_json(text: &str) -> std::result::Result<Self, String> {
        let file: GameFile = serde_json::from_str(text).map_err(|e| e.to_string())?;
        file.into_game().map_err(|e| e.to_string())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = self.to_json();
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|message| Error::Parse {
            path: path.to_path_buf(),
            message,
        })
    }
}

fn check_nested(
    space: &JointSpace,
    num_states: usize,
    reward: &[Vec<f64>],
    kernel: &[Vec<Vec<f64>>],
) -> Result<()> {
    let na = space.len();
    if reward.len() != num_states {
        return Err(Error::Shape {
            field: "reward",
            detail: format!("{} rows, expected {num_states}", reward.len()),
        });
    }
    for (s, row) in reward.iter().enumerate() {
        if row.len() != na {
            return Err(Error::Shape {
                field: "reward",
                detail: format!("reward[{s}] has {} entries, expected |A| = {na}", row.len()),
            });
        }
    }
    if kernel.len() != num_states {
        return Err(Error::Shape {
            field: "kernel",
            detail: format!("{} rows, expected {num_states}", kernel.len()),
        });
    }
    for (s, block) in kernel.iter().enumerate() {
        if block.len() != na {
            return Err(Error::Shape {
                field: "kernel",
                detail: format!("kernel[{s}] has {} entries, expected |A| = {na}", block.len()),
            });
        }
        for (a, row) in block.iter().enumerate() {
            if row.len() != num_states {
                return Err(Error::Shape {
                    field: "kernel",
                    detail: format!(
                        "kernel[{s}][{a}] has {} entries, expected |S| = {num_states}",
                        row.len()
                    ),
                });
            }
        }
    }
    Ok(())
}

/// On-disk JSON representation of a game.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec_version: Option<String>,
    pub n: usize,
    pub num_states: usize,
    pub actions_per_agent: Vec<usize>,
    pub gamma: f64,
    pub reward: Vec<Vec<f64>>,
    pub kernel: Vec<Vec<Vec<f64>>>,
}

impl GameFile {
    pub fn into_game(self) -> Result<StochasticGame> {
        if self.actions_per_agent.len() != self.n {
            return Err(Error::Shape {
                field: "actions_per_agent",
                detail: format!("{} entries, but n = {}", self.actions_per_agent.len(), self.n),
            });
        }
        let space = JointSpace::new(&self.actions_per_agent)?;
        check_nested(&space, self.num_states, &self.reward, &self.kernel)?;
        StochasticGame::from_tables(&self.actions_per_agent, self.gamma, &self.reward, &self.kernel)
    }
}

/// One violated game invariant.
#[derive(Debug, Clone, PartialEq)]
pub enum ValidationIssue {
    DiscountOutOfRange { gamma: f64 },
    NonFiniteReward { state: usize, action: JointAction, value: f64 },
    BadProbability { state: usize, action: JointAction, next: usize, value: f64 },
    KernelRowSum { state: usize, action: JointAction, sum: f64 },
}

impl fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ValidationIssue::DiscountOutOfRange { gamma } => {
                write!(f, "discount factor {gamma} is outside [0, 1)")
            }
            ValidationIssue::NonFiniteReward { state, action, value } => {
                write!(f, "reward at (s={state}, a={action}) is not finite ({value})")
            }
            ValidationIssue::BadProbability { state, action, next, value } => write!(
                f,
                "kernel entry p({next} | s={state}, a={action}) = {value} is not a probability"
            ),
            ValidationIssue::KernelRowSum { state, action, sum } => {
                write!(f, "kernel row (s={state}, a={action}) sums to {sum}, not 1")
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub issues: Vec<ValidationIssue>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.issues.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.issues.is_empty() {
            return write!(f, "valid");
        }
        for (i, issue) in self.issues.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{issue}")?;
        }
        Ok(())
    }
}

/// Parameters of the random test-instance generator.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomGameParams {
    pub num_states: usize,
    pub actions_per_agent: Vec<usize>,
    pub reward_range: (f64, f64),
    pub min_transition_prob: f64,
    pub gamma: f64,
    pub seed: u64,
}

impl RandomGameParams {
    /// `n` agents with `actions` actions each.
    pub fn uniform(n: usize, num_states: usize, actions: usize, seed: u64) -> Self {
        Self {
            num_states,
            actions_per_agent: vec![actions; n],
            reward_range: (0.0, 1.0),
            min_transition_prob: 0.05_f64.min(1.0 / num_states.max(1) as f64),
            gamma: 0.8,
            seed,
        }
    }
}

/// Draws a random irreducible game.
///
/// Rewards are i.i.d. uniform on `reward_range`. Each kernel row is a flat
/// Dirichlet draw `d`, mapped to `min_p + (1 - |S| min_p) d` so every entry is
/// at least `min_p` and the row still sums to one.
pub fn random_game(params: &RandomGameParams) -> Result<StochasticGame> {
    let ns = params.num_states;
    if ns == 0 {
        return Err(Error::invalid("at least one state is required"));
    }
    let min_p = params.min_transition_prob;
    if !(min_p > 0.0) {
        return Err(Error::invalid("minimum transition probability must be positive"));
    }
    if min_p * ns as f64 > 1.0 {
        return Err(Error::InfeasibleMinProb {
            min_prob: min_p,
            num_states: ns,
        });
    }
    let (lo, hi) = params.reward_range;
    if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
        return Err(Error::invalid("reward range must be a finite interval"));
    }
    if !(0.0..1.0).contains(&params.gamma) {
        return Err(Error::invalid(format!("gamma = {} is outside [0, 1)", params.gamma)));
    }
    let space = JointSpace::new(&params.actions_per_agent)?;
    let na = space.len();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);

    let reward: Vec<f64> = (0..ns * na)
        .map(|_| if lo == hi { lo } else { rng.random_range(lo..hi) })
        .collect();

    let slack = 1.0 - min_p * ns as f64;
    let mut kernel = Vec::with_capacity(ns * na * ns);
    let mut draw = vec![0.0; ns];
    for _ in 0..ns * na {
        for d in draw.iter_mut() {
            *d = rng.sample::<f64, _>(Exp1);
        }
        let total: f64 = draw.iter().sum();
        let start = kernel.len();
        kernel.extend(draw.iter().map(|d| min_p + slack * d / total));
        // Push the rounding residue into the largest entry.
        let row = &mut kernel[start..];
        let sum: f64 = row.iter().sum();
        let (imax, _) = row
            .iter()
            .enumerate()
            .fold((0, f64::MIN), |acc, (i, &p)| if p > acc.1 { (i, p) } else { acc });
        row[imax] += 1.0 - sum;
    }
    StochasticGame::from_flat(ns, &params.actions_per_agent, params.gamma, reward, kernel)
}

/// Dense real table over (state, joint action).
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    num_states: usize,
    num_actions: usize,
    data: Vec<f64>,
}

impl QTable {
    pub fn zeros(num_states: usize, num_actions: usize) -> Self {
        Self {
            num_states,
            num_actions,
            data: vec![0.0; num_states * num_actions],
        }
    }

    pub fn zeros_like(game: &StochasticGame) -> Self {
        Self::zeros(game.num_states(), game.num_joint_actions())
    }

    pub fn from_flat(num_states: usize, num_actions: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != num_states * num_actions {
            return Err(Error::Shape {
                field: "q",
                detail: format!("{} entries, expected {}", data.len(), num_states * num_actions),
            });
        }
        Ok(Self {
            num_states,
            num_actions,
            data,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let num_states = rows.len();
        let num_actions = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != num_actions) {
            return Err(Error::Shape {
                field: "q",
                detail: "rows have different lengths".into(),
            });
        }
        Self::from_flat(num_states, num_actions, rows.concat())
    }

    /// Table with `Q(s, a) = r(s, a)`.
    pub fn from_rewards(game: &StochasticGame) -> Self {
        Self {
            num_states: game.num_states(),
            num_actions: game.num_joint_actions(),
            data: game.rewards().to_vec(),
        }
    }

    #[inline]
    pub fn num_states(&self) -> usize {
        self.num_states
    }

    #[inline]
    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    #[inline]
    pub fn get(&self, s: usize, a: JointAction) -> f64 {
        self.data[s * self.num_actions + a.0]
    }

    #[inline]
    pub fn set(&mut self, s: usize, a: JointAction, value: f64) {
        self.data[s * self.num_actions + a.0] = value;
    }

    #[inline]
    pub fn row(&self, s: usize) -> &[f64] {
        &self.data[s * self.num_actions..(s + 1) * self.num_actions]
    }

    #[inline]
    pub fn row_mut(&mut self, s: usize) -> &mut [f64] {
        &mut self.data[s * self.num_actions..(s + 1) * self.num_actions]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.num_actions.max(1))
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.rows().map(<[f64]>::to_vec).collect()
    }

    pub fn max_row(&self, s: usize) -> f64 {
        self.row(s).iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// `||Q||_inf`.
    pub fn sup_norm(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    /// `||self - other||_inf`.
    pub fn sup_dist(&self, other: &QTable) -> f64 {
        debug_assert_eq!(self.data.len(), other.data.len());
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (x, y)| m.max((x - y).abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}
