//! Lyapunov candidates, stability constraints and potential-style reward
//! shaping, plus an exhaustive harness for the finite-horizon policy
//! invariance of shaping.

use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::io::read_values_csv;
use crate::model::{Rcmdp, Signal};
use crate::policy::Trajectory;
use crate::robust_dp::robust_q_discounted;

/// Strict-ascent tolerance for [`descent_violations`].
pub const DESCENT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovFn {
    pub values: Vec<f64>,
    pub equilibrium: usize,
}

impl LyapunovFn {
    /// Does not check the candidate conditions; see [`check_candidate`].
    pub fn new(values: Vec<f64>, equilibrium: usize) -> Self {
        LyapunovFn { values, equilibrium }
    }

    pub fn zeros(n_states: usize, equilibrium: usize) -> Self {
        LyapunovFn::new(vec![0.0; n_states], equilibrium)
    }

    /// Reads the `s,value` CSV; the equilibrium comes from the caller.
    pub fn read_csv<R: Read>(reader: R, equilibrium: usize) -> Result<Self> {
        Ok(LyapunovFn::new(read_values_csv(reader)?, equilibrium))
    }

    pub fn negated(&self) -> Self {
        LyapunovFn::new(self.values.iter().map(|v| -v).collect(), self.equilibrium)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CandidateViolation {
    EquilibriumOutOfRange { equilibrium: usize, n_states: usize },
    NonzeroAtEquilibrium { value: f64 },
    NotPositive { s: usize, value: f64 },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CandidateReport {
    pub violations: Vec<CandidateViolation>,
}

impl CandidateReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// `V(s*) = 0` and `V(s) > 0` elsewhere. The descent condition depends on
/// the policy and kernel and is checked along trajectories instead.
pub fn check_candidate(v: &LyapunovFn) -> CandidateReport {
    let mut out = Vec::new();
    let n = v.values.len();
    if v.equilibrium >= n {
        out.push(CandidateViolation::EquilibriumOutOfRange {
            equilibrium: v.equilibrium,
            n_states: n,
        });
        return CandidateReport { violations: out };
    }
    let at_eq = v.values[v.equilibrium];
    if at_eq != 0.0 {
        out.push(CandidateViolation::NonzeroAtEquilibrium { value: at_eq });
    }
    for (s, &value) in v.values.iter().enumerate() {
        if s != v.equilibrium && !(value > 0.0) {
            out.push(CandidateViolation::NotPositive { s, value });
        }
    }
    CandidateReport { violations: out }
}

/// `f = −(V(s′) − V(s))`: descent is rewarded, ascent penalized.
pub fn shaping_reward(v: &LyapunovFn, s: usize, s_next: usize) -> f64 {
    v.values[s] - v.values[s_next]
}

/// Copy of `model` with rewards `r + f`; kernel, budgets, constraint
/// channel and `β` are untouched.
pub fn shape_model(model: &Rcmdp, v: &LyapunovFn) -> Result<Rcmdp> {
    check_len("lyapunov values", model.n_states, v.values.len())?;
    let mut shaped = model.clone();
    for (s, per_action) in shaped.rewards.iter_mut().enumerate() {
        for row in per_action.iter_mut() {
            for (s_next, r) in row.iter_mut().enumerate() {
                *r += shaping_reward(v, s, s_next);
            }
        }
    }
    Ok(shaped)
}

/// Replaces the constraint channel with `d = V(s) − V(s′)` and sets the
/// budget: `β = 0` asks for Lyapunov stability, `β > 0` for asymptotic
/// stability.
pub fn stability_constrained_model(model: &Rcmdp, v: &LyapunovFn, beta: f64) -> Result<Rcmdp> {
    check_len("lyapunov values", model.n_states, v.values.len())?;
    if !(beta >= 0.0) || !beta.is_finite() {
        return Err(Error::invalid("beta", format!("{beta} must be finite and non-negative")));
    }
    let mut out = model.clone();
    for (s, per_action) in out.constraint_rewards.iter_mut().enumerate() {
        for row in per_action.iter_mut() {
            for (s_next, d) in row.iter_mut().enumerate() {
                *d = shaping_reward(v, s, s_next);
            }
        }
    }
    out.beta = beta;
    Ok(out)
}

/// Steps along which `V` strictly increases.
pub fn descent_violations(trajectory: &Trajectory, v: &LyapunovFn) -> usize {
    trajectory
        .steps
        .iter()
        .filter(|st| v.values[st.s_next] > v.values[st.s] + DESCENT_TOL)
        .count()
}

// ---------------------------------------------------------------------------
// Invariance harness
// ---------------------------------------------------------------------------

pub const DEFAULT_POLICY_BUDGET: u128 = 1 << 22;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InvarianceOptions {
    pub horizon: usize,
    /// Multiplier of the evaluated reward `r + λd`.
    pub lambda: f64,
    /// Values within `tol` of the best are optimal.
    pub tol: f64,
    pub policy_budget: u128,
}

impl InvarianceOptions {
    pub fn new(horizon: usize) -> Self {
        InvarianceOptions {
            horizon,
            lambda: 0.0,
            tol: 1e-9,
            policy_budget: DEFAULT_POLICY_BUDGET,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InvarianceReport {
    pub n_policies: u64,
    /// Ids of optimal time-dependent deterministic policies, ascending.
    /// Decode with [`decode_policy`].
    pub optimal_original: Vec<u64>,
    pub optimal_shaped: Vec<u64>,
    pub sets_coincide: bool,
    /// `max |q̂*_shaped(s,a) − q̂*(s,a) − V(s)|` at `t = 0`.
    pub max_q_offset_error: f64,
    /// Same identity on the enumerated best values `max_π w_0^π(s)`.
    pub max_value_offset_error: f64,
    pub passed: bool,
}

/// Policy id → actions `[t][s]`. Digits run over states fastest, then time.
pub fn decode_policy(id: u64, n_states: usize, n_actions: usize, horizon: usize) -> Vec<Vec<usize>> {
    let mut rest = id;
    (0..horizon)
        .map(|_| {
            (0..n_states)
                .map(|_| {
                    let a = (rest % n_actions as u64) as usize;
                    rest /= n_actions as u64;
                    a
                })
                .collect()
        })
        .collect()
}

/// Time-0 robust values of every deterministic time-dependent policy,
/// indexed by policy id; the model is read with `γ = 1` and the given
/// continuation at the horizon.
fn enumerate_values(model: &Rcmdp, signal: Signal, horizon: usize, terminal: &[f64]) -> Vec<Vec<f64>> {
    let (ns, na) = (model.n_states, model.n_actions);
    let per_step = (na as u64).pow(ns as u32);
    let total = per_step.pow(horizon as u32);
    let mut out = vec![Vec::new(); total as usize];
    // Recursion from the last step backwards; `suffix` is the id contribution
    // of the already-fixed later steps.
    fn recurse(
        model: &Rcmdp,
        signal: Signal,
        t: usize,
        cont: &[f64],
        suffix: u64,
        per_step: u64,
        out: &mut [Vec<f64>],
    ) {
        let (ns, na) = (model.n_states, model.n_actions);
        let q: Vec<Vec<f64>> = (0..ns)
            .map(|s| (0..na).map(|a| robust_q_discounted(model, signal, 1.0, s, a, cont)).collect())
            .collect();
        let place = per_step.pow(t as u32);
        for digit in 0..per_step {
            let mut rest = digit;
            let w: Vec<f64> = (0..ns)
                .map(|s| {
                    let a = (rest % na as u64) as usize;
                    rest /= na as u64;
                    q[s][a]
                })
                .collect();
            let id = suffix + digit * place;
            if t == 0 {
                out[id as usize] = w;
            } else {
                recurse(model, signal, t - 1, &w, id, per_step, out);
            }
        }
    }
    if horizon == 0 {
        out[0] = terminal.to_vec();
    } else {
        recurse(model, signal, horizon - 1, terminal, 0, per_step, &mut out);
    }
    out
}

fn optimal_set(values: &[Vec<f64>], tol: f64) -> (Vec<u64>, Vec<f64>) {
    let n = values.first().map_or(0, Vec::len);
    let mut best = vec![f64::NEG_INFINITY; n];
    for w in values {
        for (b, x) in best.iter_mut().zip(w) {
            *b = b.max(*x);
        }
    }
    let ids = values
        .iter()
        .enumerate()
        .filter(|(_, w)| w.iter().zip(&best).all(|(x, b)| *x >= b - tol))
        .map(|(i, _)| i as u64)
        .collect();
    (ids, best)
}

/// Backward induction for the time-0 optimal robust Q-table.
fn optimal_q0(model: &Rcmdp, signal: Signal, horizon: usize, terminal: &[f64]) -> Vec<Vec<f64>> {
    let (ns, na) = (model.n_states, model.n_actions);
    let mut cont = terminal.to_vec();
    let mut q = vec![vec![0.0; na]; ns];
    for _ in 0..horizon {
        for (s, row) in q.iter_mut().enumerate() {
            for (a, x) in row.iter_mut().enumerate() {
                *x = robust_q_discounted(model, signal, 1.0, s, a, &cont);
            }
        }
        cont = q.iter().map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max)).collect();
    }
    q
}

/// Exhaustively compares optimal finite-horizon policies of `model` and
/// its shaped copy under undiscounted robust evaluation of `r + λd`.
///
/// The shaped model's continuation at the horizon is `V`, i.e. the
/// potential is zero once the episode ends; under that boundary every
/// policy's shaped value is its original value plus `V(s)`.
pub fn invariance_test(model: &Rcmdp, v: &LyapunovFn, opts: &InvarianceOptions) -> Result<InvarianceReport> {
    model.ensure_valid()?;
    check_len("lyapunov values", model.n_states, v.values.len())?;
    if model.gamma != 1.0 {
        return Err(Error::invalid("gamma", "the invariance harness is undiscounted (gamma = 1)"));
    }
    if !(opts.lambda >= 0.0) {
        return Err(Error::invalid("lambda", "must be non-negative"));
    }
    let (ns, na) = (model.n_states, model.n_actions);
    let required = (na as u128)
        .checked_pow((ns * opts.horizon) as u32)
        .unwrap_or(u128::MAX);
    if required > opts.policy_budget {
        return Err(Error::EnumerationBudget {
            required,
            budget: opts.policy_budget,
        });
    }
    let shaped = shape_model(model, v)?;
    let signal = Signal::Combined(opts.lambda);
    let zero = vec![0.0; ns];

    let values = enumerate_values(model, signal, opts.horizon, &zero);
    let values_shaped = enumerate_values(&shaped, signal, opts.horizon, &v.values);
    let (optimal_original, best) = optimal_set(&values, opts.tol);
    let (optimal_shaped, best_shaped) = optimal_set(&values_shaped, opts.tol);

    let max_value_offset_error = (0..ns)
        .map(|s| (best_shaped[s] - best[s] - v.values[s]).abs())
        .fold(0.0, f64::max);
    let q = optimal_q0(model, signal, opts.horizon, &zero);
    let q_shaped = optimal_q0(&shaped, signal, opts.horizon, &v.values);
    let mut max_q_offset_error: f64 = 0.0;
    for s in 0..ns {
        for a in 0..na {
            max_q_offset_error = max_q_offset_error.max((q_shaped[s][a] - q[s][a] - v.values[s]).abs());
        }
    }
    let sets_coincide = optimal_original == optimal_shaped;
    let passed = sets_coincide && max_q_offset_error <= opts.tol && max_value_offset_error <= opts.tol;
    Ok(InvarianceReport {
        n_policies: values.len() as u64,
        optimal_original,
        optimal_shaped,
        sets_coincide,
        max_q_offset_error,
        max_value_offset_error,
        passed,
    })
}
