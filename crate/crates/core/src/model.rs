//! Model types, dataset ingestion and ambiguity-budget calibration.
//!
//! Transition tables are indexed `[s][a][s_next]`. Constraint rewards are
//! stored already negated (a raw cost `c` is stored as `-c`), so every
//! robust operator takes the minimum over the ambiguity set for both the
//! reward and the constraint channel.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ambiguity::L1Ball;
use crate::error::{Error, Result};

/// Slack allowed on probability sums.
pub const SIMPLEX_TOL: f64 = 1e-12;

/// Largest meaningful L1 radius: the diameter of the probability simplex.
pub const MAX_BUDGET: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Horizon {
    Finite(usize),
    Infinite,
}

/// Which per-transition quantity a value function accumulates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Signal {
    Reward,
    Constraint,
    /// `r + lambda * d`.
    Combined(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rcmdp {
    pub n_states: usize,
    pub n_actions: usize,
    /// `r[s][a][s_next]`.
    pub rewards: Vec<Vec<Vec<f64>>>,
    /// `d[s][a][s_next]`, the negated raw constraint cost.
    pub constraint_rewards: Vec<Vec<Vec<f64>>>,
    /// Nominal kernel `p̄[s][a]`, a distribution over next states.
    pub nominal: Vec<Vec<Vec<f64>>>,
    /// L1 radius `ψ[s][a]` of each ambiguity set.
    pub budgets: Vec<Vec<f64>>,
    pub gamma: f64,
    pub horizon: Horizon,
    /// Constraint budget: feasible policies satisfy `ρ̂(π, d) ≥ beta`.
    pub beta: f64,
    pub p0: Vec<f64>,
}

impl Rcmdp {
    /// Builds a model and rejects it unless [`Rcmdp::validate`] is clean.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        rewards: Vec<Vec<Vec<f64>>>,
        constraint_rewards: Vec<Vec<Vec<f64>>>,
        nominal: Vec<Vec<Vec<f64>>>,
        budgets: Vec<Vec<f64>>,
        gamma: f64,
        horizon: Horizon,
        beta: f64,
        p0: Vec<f64>,
    ) -> Result<Self> {
        let n_states = nominal.len();
        let n_actions = nominal.first().map_or(0, Vec::len);
        let model = Rcmdp {
            n_states,
            n_actions,
            rewards,
            constraint_rewards,
            nominal,
            budgets,
            gamma,
            horizon,
            beta,
            p0,
        };
        model.ensure_valid()?;
        Ok(model)
    }

    pub fn ensure_valid(&self) -> Result<()> {
        let report = self.validate();
        if report.is_valid() {
            Ok(())
        } else {
            Err(Error::InvalidModel(report.to_string()))
        }
    }

    pub fn validate(&self) -> ValidationReport {
        validate(self)
    }

    pub fn ball(&self, s: usize, a: usize) -> L1Ball<'_> {
        L1Ball::new_unchecked(&self.nominal[s][a], self.budgets[s][a])
    }

    #[inline]
    pub fn signal_value(&self, signal: Signal, s: usize, a: usize, s_next: usize) -> f64 {
        match signal {
            Signal::Reward => self.rewards[s][a][s_next],
            Signal::Constraint => self.constraint_rewards[s][a][s_next],
            Signal::Combined(lambda) => {
                self.rewards[s][a][s_next] + lambda * self.constraint_rewards[s][a][s_next]
            }
        }
    }

    /// A state is terminal when every action keeps it in place with certainty,
    /// the ambiguity sets are degenerate, and the self-loop pays nothing.
    pub fn is_terminal(&self, s: usize) -> bool {
        (0..self.n_actions).all(|a| {
            self.nominal[s][a][s] == 1.0
                && self.budgets[s][a] == 0.0
                && self.rewards[s][a][s] == 0.0
                && self.constraint_rewards[s][a][s] == 0.0
        })
    }

    pub fn uniform_budgets(&mut self, psi: f64) {
        for row in &mut self.budgets {
            row.iter_mut().for_each(|b| *b = psi);
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: Rcmdp = serde_json::from_str(text)?;
        model.ensure_valid()?;
        Ok(model)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }
}

/// Constraint rewards are negated costs.
pub fn negate_costs(d_raw: f64) -> f64 {
    -d_raw
}

/// Hoeffding radius `sqrt(2/n · ln(S·A·2^S/δ))`, clipped to the simplex
/// diameter. The logarithm is expanded so large `S` does not overflow.
pub fn hoeffding_budget(n: u64, n_states: usize, n_actions: usize, delta: f64) -> f64 {
    let log_term = (n_states as f64).ln() + (n_actions as f64).ln()
        + n_states as f64 * std::f64::consts::LN_2
        - delta.ln();
    let psi = (2.0 / n as f64 * log_term).sqrt();
    psi.min(MAX_BUDGET)
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    Shape { table: &'static str, detail: String },
    NonFinite { table: &'static str, s: usize, a: usize },
    NegativeProbability { s: usize, a: usize, s_next: usize, value: f64 },
    NominalSum { s: usize, a: usize, sum: f64 },
    BudgetRange { s: usize, a: usize, value: f64 },
    InitialDistribution { sum: f64 },
    Discount { gamma: f64, horizon: Horizon },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Shape { table, detail } => write!(f, "{table}: {detail}"),
            Violation::NonFinite { table, s, a } => {
                write!(f, "{table}[{s}][{a}] has a non-finite entry")
            }
            Violation::NegativeProbability { s, a, s_next, value } => {
                write!(f, "nominal[{s}][{a}][{s_next}] = {value} is negative")
            }
            Violation::NominalSum { s, a, sum } => {
                write!(f, "nominal[{s}][{a}] sums to {sum}, not 1")
            }
            Violation::BudgetRange { s, a, value } => {
                write!(f, "budget[{s}][{a}] = {value} outside [0, 2]")
            }
            Violation::InitialDistribution { sum } => {
                write!(f, "p0 is not a distribution (sum {sum})")
            }
            Violation::Discount { gamma, horizon } => {
                write!(f, "gamma = {gamma} not allowed with horizon {horizon:?}")
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

fn check_cube(
    table: &'static str,
    cube: &[Vec<Vec<f64>>],
    n_states: usize,
    n_actions: usize,
    out: &mut Vec<Violation>,
) -> bool {
    if cube.len() != n_states {
        out.push(Violation::Shape {
            table,
            detail: format!("{} state rows, expected {n_states}", cube.len()),
        });
        return false;
    }
    let mut ok = true;
    for (s, per_action) in cube.iter().enumerate() {
        if per_action.len() != n_actions {
            out.push(Violation::Shape {
                table,
                detail: format!("state {s} has {} actions, expected {n_actions}", per_action.len()),
            });
            ok = false;
            continue;
        }
        for (a, row) in per_action.iter().enumerate() {
            if row.len() != n_states {
                out.push(Violation::Shape {
                    table,
                    detail: format!("[{s}][{a}] has length {}, expected {n_states}", row.len()),
                });
                ok = false;
            } else if row.iter().any(|x| !x.is_finite()) {
                out.push(Violation::NonFinite { table, s, a });
                ok = false;
            }
        }
    }
    ok
}

pub fn validate(model: &Rcmdp) -> ValidationReport {
    let mut out = Vec::new();
    let (ns, na) = (model.n_states, model.n_actions);
    if ns == 0 || na == 0 {
        out.push(Violation::Shape {
            table: "model",
            detail: format!("needs at least one state and action (got {ns} x {na})"),
        });
        return ValidationReport { violations: out };
    }
    check_cube("rewards", &model.rewards, ns, na, &mut out);
    check_cube("constraint_rewards", &model.constraint_rewards, ns, na, &mut out);
    if check_cube("nominal", &model.nominal, ns, na, &mut out) {
        for (s, per_action) in model.nominal.iter().enumerate() {
            for (a, row) in per_action.iter().enumerate() {
                for (s_next, &p) in row.iter().enumerate() {
                    if p < 0.0 {
                        out.push(Violation::NegativeProbability { s, a, s_next, value: p });
                    }
                }
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > SIMPLEX_TOL {
                    out.push(Violation::NominalSum { s, a, sum });
                }
            }
        }
    }
    if model.budgets.len() != ns || model.budgets.iter().any(|r| r.len() != na) {
        out.push(Violation::Shape {
            table: "budgets",
            detail: format!("expected {ns} x {na}"),
        });
    } else {
        for (s, row) in model.budgets.iter().enumerate() {
            for (a, &b) in row.iter().enumerate() {
                if !(0.0..=MAX_BUDGET).contains(&b) {
                    out.push(Violation::BudgetRange { s, a, value: b });
                }
            }
        }
    }
    if model.p0.len() != ns {
        out.push(Violation::Shape {
            table: "p0",
            detail: format!("length {}, expected {ns}", model.p0.len()),
        });
    } else {
        let sum: f64 = model.p0.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL || model.p0.iter().any(|&p| p < 0.0 || !p.is_finite()) {
            out.push(Violation::InitialDistribution { sum });
        }
    }
    let gamma_ok = match model.horizon {
        Horizon::Finite(_) => model.gamma > 0.0 && model.gamma <= 1.0,
        Horizon::Infinite => model.gamma > 0.0 && model.gamma < 1.0,
    };
    if !gamma_ok {
        out.push(Violation::Discount {
            gamma: model.gamma,
            horizon: model.horizon,
        });
    }
    ValidationReport { violations: out }
}

// ---------------------------------------------------------------------------
// Datasets
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransitionRecord {
    pub s: usize,
    pub a: usize,
    pub s_next: usize,
    pub r: f64,
    /// Raw (positive) constraint cost.
    pub d_cost: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransitionDataset {
    pub n_states: usize,
    pub n_actions: usize,
    pub records: Vec<TransitionRecord>,
}

impl TransitionDataset {
    pub fn new(n_states: usize, n_actions: usize, records: Vec<TransitionRecord>) -> Result<Self> {
        for (index, rec) in records.iter().enumerate() {
            if rec.s >= n_states || rec.s_next >= n_states || rec.a >= n_actions {
                return Err(Error::InvalidRecord {
                    index,
                    reason: format!(
                        "({}, {}, {}) out of bounds for {n_states} states and {n_actions} actions",
                        rec.s, rec.a, rec.s_next
                    ),
                });
            }
            if !rec.r.is_finite() || !rec.d_cost.is_finite() {
                return Err(Error::InvalidRecord {
                    index,
                    reason: "non-finite reward or cost".into(),
                });
            }
        }
        Ok(TransitionDataset {
            n_states,
            n_actions,
            records,
        })
    }

    /// Reads the `s,a,s_next,r,d_cost` CSV format.
    pub fn read_csv<R: Read>(reader: R, n_states: usize, n_actions: usize) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let expected = ["s", "a", "s_next", "r", "d_cost"];
        if headers.iter().ne(expected.iter().copied()) {
            return Err(Error::InvalidRecord {
                index: 0,
                reason: format!("header must be `s,a,s_next,r,d_cost`, got `{}`", headers.iter().collect::<Vec<_>>().join(",")),
            });
        }
        let records = rdr
            .deserialize()
            .collect::<std::result::Result<Vec<TransitionRecord>, _>>()?;
        Self::new(n_states, n_actions, records)
    }

    pub fn load_csv(path: impl AsRef<Path>, n_states: usize, n_actions: usize) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?, n_states, n_actions)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        for rec in &self.records {
            wtr.serialize(rec)?;
        }
        if self.records.is_empty() {
            wtr.write_record(["s", "a", "s_next", "r", "d_cost"])?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn counts(&self) -> Vec<Vec<u64>> {
        let mut n = vec![vec![0u64; self.n_actions]; self.n_states];
        for rec in &self.records {
            n[rec.s][rec.a] += 1;
        }
        n
    }
}

/// Estimates the nominal kernel and mean rewards from data and attaches
/// Hoeffding budgets at confidence `delta`.
///
/// Never-observed `(s, a, s_next)` triples get zero reward and cost. The
/// initial distribution is uniform; callers with a known start state
/// overwrite `p0`.
pub fn build_from_dataset(
    data: &TransitionDataset,
    delta: f64,
    gamma: f64,
    horizon: Horizon,
    beta: f64,
) -> Result<Rcmdp> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::invalid("delta", format!("{delta} is not in (0, 1)")));
    }
    let (ns, na) = (data.n_states, data.n_actions);
    if ns == 0 || na == 0 {
        return Err(Error::invalid("dataset", "needs at least one state and action"));
    }
    let counts = data.counts();
    for (s, row) in counts.iter().enumerate() {
        for (a, &n) in row.iter().enumerate() {
            if n == 0 {
                return Err(Error::UncoveredPair { state: s, action: a });
            }
        }
    }

    let mut triple_counts = vec![vec![vec![0u64; ns]; na]; ns];
    let mut reward_sum = vec![vec![vec![0.0; ns]; na]; ns];
    let mut cost_sum = vec![vec![vec![0.0; ns]; na]; ns];
    for rec in &data.records {
        triple_counts[rec.s][rec.a][rec.s_next] += 1;
        reward_sum[rec.s][rec.a][rec.s_next] += rec.r;
        cost_sum[rec.s][rec.a][rec.s_next] += rec.d_cost;
    }

    let mut nominal = vec![vec![vec![0.0; ns]; na]; ns];
    let mut rewards = vec![vec![vec![0.0; ns]; na]; ns];
    let mut constraint_rewards = vec![vec![vec![0.0; ns]; na]; ns];
    let mut budgets = vec![vec![0.0; na]; ns];
    for s in 0..ns {
        for a in 0..na {
            let n = counts[s][a];
            budgets[s][a] = hoeffding_budget(n, ns, na, delta);
            for s_next in 0..ns {
                let c = triple_counts[s][a][s_next];
                nominal[s][a][s_next] = c as f64 / n as f64;
                if c > 0 {
                    rewards[s][a][s_next] = reward_sum[s][a][s_next] / c as f64;
                    constraint_rewards[s][a][s_next] =
                        negate_costs(cost_sum[s][a][s_next] / c as f64);
                }
            }
        }
    }
    Rcmdp::new(
        rewards,
        constraint_rewards,
        nominal,
        budgets,
        gamma,
        horizon,
        beta,
        vec![1.0 / ns as f64; ns],
    )
}
