//! Stepsize sequences, their convergence conditions, and the epoch weights
//! obtained by unrolling the Q-update over a block of `T` stages.

use std::fmt;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};

/// Relative slack used when comparing quantities that are equal in exact
/// arithmetic (equality cases of the no-recency-bias condition).
pub const REL_TOL: f64 = 1e-12;

/// Above this epoch length the survival products are accumulated in log
/// space with compensated summation.
const LOG_PRODUCT_THRESHOLD: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub enum Schedule {
    /// `beta_t = 1 / (t + c)`, `c >= 1`.
    Harmonic { c: f64 },
    /// `beta_t = b`.
    Constant { b: f64 },
    /// Explicit values `beta_0, beta_1, ...`.
    Table(Vec<f64>),
}

impl Schedule {
    pub fn harmonic(c: f64) -> Result<Self> {
        if !(c.is_finite() && c >= 1.0) {
            return Err(Error::invalid(format!("harmonic offset c = {c} must be >= 1")));
        }
        Ok(Schedule::Harmonic { c })
    }

    pub fn constant(b: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&b) {
            return Err(Error::invalid(format!("constant stepsize b = {b} must lie in [0, 1]")));
        }
        Ok(Schedule::Constant { b })
    }

    pub fn table(values: Vec<f64>) -> Result<Self> {
        if let Some((t, b)) = values.iter().enumerate().find(|(_, b)| !(0.0..=1.0).contains(*b)) {
            return Err(Error::invalid(format!("table entry {t} = {b} is outside [0, 1]")));
        }
        Ok(Schedule::Table(values))
    }

    /// Parses `harmonic:c=<real>`, `constant:b=<real>` or `table:<path>`
    /// (one stepsize per line; blank lines and `#` comments are skipped).
    pub fn parse(spec: &str) -> Result<Self> {
        let bad = || Error::ScheduleSpec(spec.to_string());
        let (family, rest) = spec.split_once(':').ok_or_else(bad)?;
        match family {
            "harmonic" => {
                let c = parse_param(rest, "c").ok_or_else(bad)?;
                Self::harmonic(c)
            }
            "constant" => {
                let b = parse_param(rest, "b").ok_or_else(bad)?;
                Self::constant(b)
            }
            "table" => Self::load_table(rest),
            _ => Err(bad()),
        }
    }

    pub fn load_table(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut values = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let b: f64 = line.parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                message: format!("line {}: `{line}` is not a number", lineno + 1),
            })?;
            values.push(b);
        }
        Self::table(values)
    }

    /// `beta_t`.
    pub fn beta(&self, t: u64) -> Result<f64> {
        match self {
            Schedule::Harmonic { c } => Ok(1.0 / (t as f64 + c)),
            Schedule::Constant { b } => Ok(*b),
            Schedule::Table(values) => usize::try_from(t)
                .ok()
                .and_then(|i| values.get(i).copied())
                .ok_or(Error::ScheduleExhausted { t, len: values.len() }),
        }
    }

    pub fn betas(&self, start: u64, len: usize) -> Result<Vec<f64>> {
        (0..len as u64).map(|j| self.beta(start + j)).collect()
    }

    pub fn family(&self) -> &'static str {
        match self {
            Schedule::Harmonic { .. } => "harmonic",
            Schedule::Constant { .. } => "constant",
            Schedule::Table(_) => "table",
        }
    }
}

fn parse_param(rest: &str, key: &str) -> Option<f64> {
    let (k, v) = rest.split_once('=')?;
    if k.trim() != key {
        return None;
    }
    v.trim().parse().ok()
}

impl fmt::Display for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Schedule::Harmonic { c } => write!(f, "harmonic:c={c}"),
            Schedule::Constant { b } => write!(f, "constant:b={b}"),
            Schedule::Table(v) => write!(f, "table[{}]", v.len()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Holds,
    Fails,
    /// Asymptotic property; only finite-horizon evidence is available.
    DiagnosticOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Analytic,
    Numeric,
    FiniteHorizon,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionVerdict {
    pub verdict: Verdict,
    pub method: Method,
    /// The inequality holds with equality everywhere checked.
    pub equality: bool,
    /// Partial sum over the checked horizon, for the summability conditions.
    pub partial_sum: Option<f64>,
}

impl ConditionVerdict {
    fn analytic(holds: bool) -> Self {
        Self {
            verdict: if holds { Verdict::Holds } else { Verdict::Fails },
            method: Method::Analytic,
            equality: false,
            partial_sum: None,
        }
    }

    fn numeric(holds: bool) -> Self {
        Self {
            method: Method::Numeric,
            ..Self::analytic(holds)
        }
    }

    fn diagnostic(partial_sum: f64) -> Self {
        Self {
            verdict: Verdict::DiagnosticOnly,
            method: Method::FiniteHorizon,
            equality: false,
            partial_sum: Some(partial_sum),
        }
    }

    pub fn holds(&self) -> bool {
        self.verdict == Verdict::Holds
    }
}

/// Verdicts on the four stepsize conditions: strict monotonicity,
/// non-summability, square-summability and no recency bias
/// (`beta_t - beta_{t+1} >= beta_t beta_{t+1}`).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionReport {
    pub horizon: u64,
    pub monotone: ConditionVerdict,
    pub non_summable: ConditionVerdict,
    pub square_summable: ConditionVerdict,
    pub no_recency_bias: ConditionVerdict,
}

impl ConditionReport {
    pub fn all_hold(&self) -> bool {
        [&self.monotone, &self.non_summable, &self.square_summable, &self.no_recency_bias]
            .iter()
            .all(|v| v.holds())
    }
}

pub fn check_conditions(schedule: &Schedule, horizon: u64) -> Result<ConditionReport> {
    if horizon < 2 {
        return Err(Error::invalid("horizon must be at least 2"));
    }
    let report = match schedule {
        // 1/(t+c) - 1/(t+c+1) = 1/((t+c)(t+c+1)) = beta_t beta_{t+1}.
        Schedule::Harmonic { .. } => ConditionReport {
            horizon,
            monotone: ConditionVerdict::analytic(true),
            non_summable: ConditionVerdict::analytic(true),
            square_summable: ConditionVerdict::analytic(true),
            no_recency_bias: ConditionVerdict {
                equality: true,
                ..ConditionVerdict::analytic(true)
            },
        },
        Schedule::Constant { b } => {
            let zero = *b == 0.0;
            ConditionReport {
                horizon,
                monotone: ConditionVerdict::analytic(false),
                non_summable: ConditionVerdict::analytic(!zero),
                square_summable: ConditionVerdict::analytic(zero),
                no_recency_bias: ConditionVerdict {
                    equality: zero,
                    ..ConditionVerdict::analytic(zero)
                },
            }
        }
        Schedule::Table(values) => {
            let h = values.len().min(usize::try_from(horizon).unwrap_or(usize::MAX));
            let v = &values[..h];
            let monotone = v.windows(2).all(|w| w[0] > w[1]);
            let mut recency = true;
            let mut equality = true;
            for w in v.windows(2) {
                let lhs = w[0] - w[1];
                let rhs = w[0] * w[1];
                if lhs < rhs - REL_TOL * rhs.abs() {
                    recency = false;
                }
                if (lhs - rhs).abs() > REL_TOL * rhs.abs().max(lhs.abs()) {
                    equality = false;
                }
            }
            ConditionReport {
                horizon: h as u64,
                monotone: ConditionVerdict::numeric(monotone),
                non_summable: ConditionVerdict::diagnostic(v.iter().sum()),
                square_summable: ConditionVerdict::diagnostic(v.iter().map(|b| b * b).sum()),
                no_recency_bias: ConditionVerdict {
                    equality: recency && equality && h >= 2,
                    ..ConditionVerdict::numeric(recency)
                },
            }
        }
    };
    Ok(report)
}

/// Weights of the epoch `[kT, (k+1)T)`:
/// `alpha_t = beta_t * prod_{l=t+1}^{(k+1)T-1} (1 - beta_l)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochWeights {
    pub epoch: u64,
    pub length: usize,
    /// First stage of the epoch, `kT`.
    pub start: u64,
    pub betas: Vec<f64>,
    pub alphas: Vec<f64>,
    /// `alpha_(k) = sum_t alpha_t`.
    pub aggregate: f64,
    /// `prod_t (1 - beta_t)` over the epoch.
    pub survival: f64,
}

impl EpochWeights {
    /// `1 - prod_t (1 - beta_t)`, equal to [`EpochWeights::aggregate`] in
    /// exact arithmetic.
    pub fn aggregate_closed_form(&self) -> f64 {
        1.0 - self.survival
    }

    /// `alpha_t / alpha_(k)`; empty when the aggregate vanishes.
    pub fn normalized(&self) -> Vec<f64> {
        if self.aggregate == 0.0 {
            return Vec::new();
        }
        self.alphas.iter().map(|a| a / self.aggregate).collect()
    }
}

pub fn epoch_weights(schedule: &Schedule, k: u64, length: usize) -> Result<EpochWeights> {
    if length == 0 {
        return Err(Error::invalid("epoch length must be at least 1"));
    }
    let start = k
        .checked_mul(length as u64)
        .ok_or_else(|| Error::invalid("epoch start overflows"))?;
    let betas = schedule.betas(start, length)?;
    let suffix = suffix_survival(&betas);
    let alphas: Vec<f64> = betas.iter().zip(&suffix[1..]).map(|(b, s)| b * s).collect();
    Ok(EpochWeights {
        epoch: k,
        length,
        start,
        aggregate: alphas.iter().sum(),
        survival: suffix[0],
        alphas,
        betas,
    })
}

/// `out[j] = prod_{l >= j} (1 - betas[l])`, with `out[len] = 1`.
fn suffix_survival(betas: &[f64]) -> Vec<f64> {
    let n = betas.len();
    let mut out = vec![1.0; n + 1];
    if n <= LOG_PRODUCT_THRESHOLD {
        for j in (0..n).rev() {
            out[j] = out[j + 1] * (1.0 - betas[j]);
        }
        return out;
    }
    // Kahan-compensated sum of ln(1 - beta); a unit stepsize zeroes the
    // product for every earlier index.
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    let mut zeroed = false;
    for j in (0..n).rev() {
        if betas[j] >= 1.0 {
            zeroed = true;
        }
        if zeroed {
            out[j] = 0.0;
            continue;
        }
        let y = (-betas[j]).ln_1p() - comp;
        let t = sum + y;
        comp = (t - sum) - y;
        sum = t;
        out[j] = sum.exp();
    }
    out
}

/// Whether `alpha_{kT} >= alpha_{kT+1} >= ...`, up to relative rounding
/// slack [`REL_TOL`].
pub fn weight_monotonicity_check(weights: &EpochWeights) -> bool {
    weights
        .alphas
        .windows(2)
        .all(|w| w[0] >= w[1] - REL_TOL * w[0].abs().max(w[1].abs()))
}

/// Finite-horizon view of the accumulated stepsizes over the first `epochs`
/// epochs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AccumulatedSums {
    pub epochs: u64,
    pub sum_aggregate: f64,
    pub sum_aggregate_sq: f64,
    /// `T^2 * sum_{t < K T} beta_t^2`, the upper envelope for
    /// [`AccumulatedSums::sum_aggregate_sq`].
    pub square_envelope: f64,
}

pub fn accumulated_sums(schedule: &Schedule, length: usize, epochs: u64) -> Result<AccumulatedSums> {
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    let mut beta_sq = 0.0;
    for k in 0..epochs {
        let w = epoch_weights(schedule, k, length)?;
        sum += w.aggregate;
        sum_sq += w.aggregate * w.aggregate;
        beta_sq += w.betas.iter().map(|b| b * b).sum::<f64>();
    }
    Ok(AccumulatedSums {
        epochs,
        sum_aggregate: sum,
        sum_aggregate_sq: sum_sq,
        square_envelope: (length * length) as f64 * beta_sq,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn beta_values() {
        let h = Schedule::harmonic(2.0).unwrap();
        assert_eq!(h.beta(0).unwrap(), 0.5);
        assert_eq!(h.beta(8).unwrap(), 0.1);
        let c = Schedule::constant(0.1).unwrap();
        assert_eq!(c.beta(0).unwrap(), 0.1);
        assert_eq!(c.beta(123_456).unwrap(), 0.1);
        let t = Schedule::table(vec![0.5, 0.4]).unwrap();
        assert_eq!(t.beta(1).unwrap(), 0.4);
        assert!(matches!(t.beta(2), Err(Error::ScheduleExhausted { t: 2, len: 2 })));
    }

    #[test]
    fn invalid_parameters() {
        assert!(Schedule::harmonic(0.5).is_err());
        assert!(Schedule::constant(1.5).is_err());
        assert!(Schedule::table(vec![0.2, -0.1]).is_err());
    }

    #[test]
    fn parse_spec_strings() {
        assert_eq!(Schedule::parse("harmonic:c=2").unwrap(), Schedule::Harmonic { c: 2.0 });
        assert_eq!(Schedule::parse("constant:b=0.1").unwrap(), Schedule::Constant { b: 0.1 });
        assert!(matches!(Schedule::parse("harmonic:b=2"), Err(Error::ScheduleSpec(_))));
        assert!(matches!(Schedule::parse("cosine:c=2"), Err(Error::ScheduleSpec(_))));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.txt");
        std::fs::write(&path, "0.5\n# comment\n0.4\n\n0.3\n").unwrap();
        let spec = format!("table:{}", path.display());
        assert_eq!(Schedule::parse(&spec).unwrap(), Schedule::Table(vec![0.5, 0.4, 0.3]));
        std::fs::write(&path, "0.5\nabc\n").unwrap();
        let err = Schedule::parse(&spec).unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
    }

    #[test]
    fn harmonic_conditions_all_hold() {
        let r = check_conditions(&Schedule::harmonic(1.0).unwrap(), 10_000).unwrap();
        assert!(r.all_hold());
        assert!(r.no_recency_bias.equality);
        assert_eq!(r.no_recency_bias.method, Method::Analytic);
    }

    #[test]
    fn harmonic_recency_identity_numerically() {
        for c in [1.0, 2.0, 3.5] {
            let s = Schedule::harmonic(c).unwrap();
            for t in 0..10_000u64 {
                let (b0, b1) = (s.beta(t).unwrap(), s.beta(t + 1).unwrap());
                let (lhs, rhs) = (b0 - b1, b0 * b1);
                // The subtraction loses relative accuracy; bound its rounding by b0.
                assert!((lhs - rhs).abs() <= 4.0 * f64::EPSILON * b0, "t={t}: {lhs} vs {rhs}");
            }
        }
    }

    #[test]
    fn constant_conditions() {
        let r = check_conditions(&Schedule::constant(0.1).unwrap(), 100).unwrap();
        assert_eq!(r.monotone.verdict, Verdict::Fails);
        assert_eq!(r.non_summable.verdict, Verdict::Holds);
        assert_eq!(r.square_summable.verdict, Verdict::Fails);
        assert_eq!(r.no_recency_bias.verdict, Verdict::Fails);
        let z = check_conditions(&Schedule::constant(0.0).unwrap(), 100).unwrap();
        assert!(z.no_recency_bias.holds());
    }

    #[test]
    fn table_conditions_are_diagnostic() {
        let r = check_conditions(&Schedule::table(vec![0.5, 0.4, 0.3]).unwrap(), 10).unwrap();
        assert_eq!(r.horizon, 3);
        assert!(r.monotone.holds());
        assert_eq!(r.non_summable.verdict, Verdict::DiagnosticOnly);
        assert!((r.non_summable.partial_sum.unwrap() - 1.2).abs() < 1e-12);
        assert!((r.square_summable.partial_sum.unwrap() - 0.5).abs() < 1e-12);
        // 0.5 - 0.4 = 0.1 < 0.2
        assert_eq!(r.no_recency_bias.verdict, Verdict::Fails);
        assert!(check_conditions(&Schedule::constant(0.1).unwrap(), 1).is_err());
    }

    #[test]
    fn harmonic_table_passes_recency_with_equality() {
        let table: Vec<f64> = (0..50).map(|t| 1.0 / (t as f64 + 2.0)).collect();
        let r = check_conditions(&Schedule::table(table).unwrap(), 50).unwrap();
        assert!(r.no_recency_bias.holds());
        assert!(r.no_recency_bias.equality);
    }

    #[test]
    fn epoch_weights_constant_half() {
        let w = epoch_weights(&Schedule::constant(0.5).unwrap(), 0, 2).unwrap();
        assert_eq!(w.alphas, vec![0.25, 0.5]);
        assert_eq!(w.aggregate, 0.75);
        assert_eq!(w.aggregate_closed_form(), 0.75);
        assert!(!weight_monotonicity_check(&w));
    }

    #[test]
    fn epoch_weights_unit_length() {
        let s = Schedule::harmonic(3.0).unwrap();
        for k in [0, 5, 17] {
            let w = epoch_weights(&s, k, 1).unwrap();
            assert_eq!(w.aggregate, s.beta(k).unwrap());
            assert!(weight_monotonicity_check(&w));
        }
    }

    #[test]
    fn epoch_weights_harmonic_telescoping() {
        let w = epoch_weights(&Schedule::harmonic(2.0).unwrap(), 0, 3).unwrap();
        assert!((w.aggregate - 0.75).abs() < 1e-15);
        assert!((w.aggregate_closed_form() - 0.75).abs() < 1e-15);
        let sum: f64 = w.normalized().iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn harmonic_weights_monotone() {
        let w = epoch_weights(&Schedule::harmonic(1.0).unwrap(), 0, 4).unwrap();
        assert!(weight_monotonicity_check(&w));
        // Equality case: all weights are 1/4.
        for a in &w.alphas {
            assert!((a - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn long_epochs_use_log_products() {
        let s = Schedule::harmonic(1.0).unwrap();
        let w = epoch_weights(&s, 3, 500).unwrap();
        // Telescoping: prod_{t=1500}^{1999} (t / (t+1)) = 1500 / 2000.
        assert!((w.survival - 0.75).abs() < 1e-13, "{}", w.survival);
        assert!((w.aggregate - w.aggregate_closed_form()).abs() < 1e-12);
        let unit = epoch_weights(&s, 0, 100).unwrap();
        assert_eq!(unit.survival, 0.0);
        assert!((unit.aggregate - 1.0).abs() < 1e-12);
    }

    #[test]
    fn accumulated_sums_grow() {
        let s = Schedule::harmonic(2.0).unwrap();
        let a = accumulated_sums(&s, 4, 100).unwrap();
        let b = accumulated_sums(&s, 4, 10_000).unwrap();
        assert!(b.sum_aggregate > a.sum_aggregate + 1.0);
        assert!(b.sum_aggregate_sq <= b.square_envelope);
    }
}
