//! Robust Bellman operators, value iteration and policy evaluation.
//!
//! Every backup folds the transition signal into the worst-case expectation:
//! `min_p Σ_{s'} p(s') (signal(s,a,s') + γ v(s'))`. Sweeps are synchronous.

use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::error::{check_len, Error, Result};
use crate::model::{Horizon, Rcmdp, Signal};
use crate::policy::PolicyTable;

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueFunction {
    pub values: Vec<f64>,
    pub signal: Signal,
}

impl ValueFunction {
    pub fn new(values: Vec<f64>, signal: Signal) -> Self {
        ValueFunction { values, signal }
    }

    pub fn zeros(n: usize, signal: Signal) -> Self {
        ValueFunction::new(vec![0.0; n], signal)
    }

    pub fn sup_distance(&self, other: &ValueFunction) -> f64 {
        sup_distance(&self.values, &other.values)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
        }
    }
}

pub fn sup_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Worst-case one-step value of `(s, a)` against continuation `v`.
#[inline]
pub(crate) fn robust_q(model: &Rcmdp, signal: Signal, s: usize, a: usize, v: &[f64]) -> f64 {
    robust_q_discounted(model, signal, model.gamma, s, a, v)
}

#[inline]
pub(crate) fn robust_q_discounted(
    model: &Rcmdp,
    signal: Signal,
    gamma: f64,
    s: usize,
    a: usize,
    v: &[f64],
) -> f64 {
    let target: SmallVec<[f64; 32]> = (0..model.n_states)
        .map(|s_next| model.signal_value(signal, s, a, s_next) + gamma * v[s_next])
        .collect();
    model.ball(s, a).value_unchecked(&target)
}

fn greedy_backup(model: &Rcmdp, signal: Signal, v: &[f64], out: &mut [f64]) {
    for (s, slot) in out.iter_mut().enumerate() {
        *slot = (0..model.n_actions)
            .map(|a| robust_q(model, signal, s, a, v))
            .fold(f64::NEG_INFINITY, f64::max);
    }
}

fn policy_backup(model: &Rcmdp, signal: Signal, policy: &PolicyTable, v: &[f64], out: &mut [f64]) {
    for (s, slot) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (a, &prob) in policy.row(s).iter().enumerate() {
            if prob != 0.0 {
                acc += prob * robust_q(model, signal, s, a, v);
            }
        }
        *slot = acc;
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::invalid("lambda", format!("{lambda} must be finite and non-negative")));
    }
    Ok(())
}

fn signal_for(lambda: Option<f64>) -> Result<Signal> {
    match lambda {
        None => Ok(Signal::Reward),
        Some(l) => {
            check_lambda(l)?;
            Ok(Signal::Combined(l))
        }
    }
}

/// One application of the robust optimality operator on an arbitrary signal.
pub fn bellman_optimality(model: &Rcmdp, signal: Signal, v: &[f64]) -> Result<Vec<f64>> {
    check_len("bellman_optimality", model.n_states, v.len())?;
    let mut out = vec![0.0; model.n_states];
    greedy_backup(model, signal, v, &mut out);
    Ok(out)
}

/// One application of the policy-restricted robust operator.
pub fn bellman_policy(
    model: &Rcmdp,
    signal: Signal,
    policy: &PolicyTable,
    v: &[f64],
) -> Result<Vec<f64>> {
    check_len("bellman_policy", model.n_states, v.len())?;
    policy.check_shape(model)?;
    let mut out = vec![0.0; model.n_states];
    policy_backup(model, signal, policy, v, &mut out);
    Ok(out)
}

pub fn robust_bellman_optimality(model: &Rcmdp, v: &ValueFunction) -> Result<ValueFunction> {
    Ok(ValueFunction::new(
        bellman_optimality(model, Signal::Reward, &v.values)?,
        Signal::Reward,
    ))
}

/// Optimality operator on the Lagrangian reward `r + λd`.
pub fn rcmdp_bellman_optimality(model: &Rcmdp, lambda: f64, w: &ValueFunction) -> Result<ValueFunction> {
    check_lambda(lambda)?;
    let signal = Signal::Combined(lambda);
    Ok(ValueFunction::new(bellman_optimality(model, signal, &w.values)?, signal))
}

/// Robust value iteration from zeros. `lambda = None` solves the reward
/// channel, `Some(λ)` the Lagrangian channel. Finite-horizon models run
/// exactly `T` backups; the returned history holds the sup-norm change of
/// every sweep.
pub fn robust_value_iteration(
    model: &Rcmdp,
    lambda: Option<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<(ValueFunction, Vec<f64>)> {
    let signal = signal_for(lambda)?;
    iterate(model, signal, None, None, EvalOptions { tol, max_iter })
}

/// Evaluates `policy` on `signal` from a zero start with default options.
pub fn robust_policy_evaluation(
    model: &Rcmdp,
    policy: &PolicyTable,
    signal: Signal,
) -> Result<ValueFunction> {
    evaluate_policy(model, policy, signal, &EvalOptions::default(), None)
}

/// Policy evaluation with explicit options and an optional warm start.
/// Warm starts are ignored for finite horizons, which always start at zero.
pub fn evaluate_policy(
    model: &Rcmdp,
    policy: &PolicyTable,
    signal: Signal,
    opts: &EvalOptions,
    warm_start: Option<&[f64]>,
) -> Result<ValueFunction> {
    if let Signal::Combined(l) = signal {
        check_lambda(l)?;
    }
    policy.check_shape(model)?;
    iterate(model, signal, Some(policy), warm_start, *opts).map(|(v, _)| v)
}

fn iterate(
    model: &Rcmdp,
    signal: Signal,
    policy: Option<&PolicyTable>,
    warm_start: Option<&[f64]>,
    opts: EvalOptions,
) -> Result<(ValueFunction, Vec<f64>)> {
    let n = model.n_states;
    let backup = |v: &[f64], out: &mut [f64]| match policy {
        Some(p) => policy_backup(model, signal, p, v, out),
        None => greedy_backup(model, signal, v, out),
    };
    let mut v = vec![0.0; n];
    let mut next = vec![0.0; n];
    let mut history = Vec::new();
    match model.horizon {
        Horizon::Finite(steps) => {
            for _ in 0..steps {
                backup(&v, &mut next);
                history.push(sup_distance(&v, &next));
                std::mem::swap(&mut v, &mut next);
            }
        }
        Horizon::Infinite => {
            if let Some(init) = warm_start {
                check_len("warm start", n, init.len())?;
                v.copy_from_slice(init);
            }
            let mut residual = f64::INFINITY;
            for _ in 0..opts.max_iter {
                backup(&v, &mut next);
                residual = sup_distance(&v, &next);
                history.push(residual);
                std::mem::swap(&mut v, &mut next);
                if residual <= opts.tol {
                    return Ok((ValueFunction::new(v, signal), history));
                }
            }
            return Err(Error::NotConverged {
                iterations: opts.max_iter,
                residual,
            });
        }
    }
    Ok((ValueFunction::new(v, signal), history))
}

/// `ρ̂ = p0ᵀ v`.
pub fn robust_return(model: &Rcmdp, value: &ValueFunction) -> Result<f64> {
    check_len("robust_return", model.n_states, value.values.len())?;
    Ok(model.p0.iter().zip(&value.values).map(|(p, v)| p * v).sum())
}

/// Robust Q-values `q[s][a]` against continuation `v`.
pub fn q_values(model: &Rcmdp, signal: Signal, v: &[f64]) -> Result<Vec<Vec<f64>>> {
    check_len("q_values", model.n_states, v.len())?;
    Ok((0..model.n_states)
        .map(|s| (0..model.n_actions).map(|a| robust_q(model, signal, s, a, v)).collect())
        .collect())
}

/// Greedy deterministic policy w.r.t. `v`; lowest action index wins ties.
pub fn greedy_actions(model: &Rcmdp, signal: Signal, v: &[f64]) -> Result<Vec<usize>> {
    Ok(q_values(model, signal, v)?
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for a in 1..row.len() {
                if row[a] > row[best] {
                    best = a;
                }
            }
            best
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_state(r: f64, d: f64, psi: f64) -> Rcmdp {
        Rcmdp::new(
            vec![vec![vec![r], vec![r]]],
            vec![vec![vec![d], vec![d]]],
            vec![vec![vec![1.0], vec![1.0]]],
            vec![vec![psi, psi]],
            0.9,
            Horizon::Infinite,
            0.0,
            vec![1.0],
        )
        .unwrap()
    }

    #[test]
    fn geometric_series_fixed_point() {
        for psi in [0.0, 0.7, 2.0] {
            let m = single_state(1.0, 0.0, psi);
            let (v, _) = robust_value_iteration(&m, None, 1e-10, 10_000).unwrap();
            assert!((v.values[0] - 10.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn adversary_routes_to_absorbing_state() {
        let m = Rcmdp::new(
            vec![vec![vec![1.0, 1.0]], vec![vec![0.0, 0.0]]],
            vec![vec![vec![0.0, 0.0]], vec![vec![0.0, 0.0]]],
            vec![vec![vec![1.0, 0.0]], vec![vec![0.0, 1.0]]],
            vec![vec![2.0], vec![2.0]],
            0.9,
            Horizon::Infinite,
            0.0,
            vec![1.0, 0.0],
        )
        .unwrap();
        let (v, _) = robust_value_iteration(&m, None, 1e-12, 10_000).unwrap();
        assert!((v.values[0] - 1.0).abs() < 1e-10);
        assert!(v.values[1].abs() < 1e-10);
    }

    #[test]
    fn lagrangian_collapses() {
        let m = single_state(1.0, -0.5, 0.3);
        let (w, _) = robust_value_iteration(&m, Some(2.0), 1e-12, 10_000).unwrap();
        assert!(w.values[0].abs() < 1e-9);
        assert_eq!(w.signal, Signal::Combined(2.0));

        let v0 = ValueFunction::new(vec![3.0], Signal::Reward);
        let a = rcmdp_bellman_optimality(&m, 0.0, &v0).unwrap();
        let b = robust_bellman_optimality(&m, &v0).unwrap();
        assert_eq!(a.values, b.values);
        assert!(rcmdp_bellman_optimality(&m, -1.0, &v0).is_err());
    }

    #[test]
    fn zero_constraint_makes_lambda_irrelevant() {
        let m = single_state(0.4, 0.0, 0.3);
        let v0 = ValueFunction::new(vec![1.5], Signal::Reward);
        let a = rcmdp_bellman_optimality(&m, 0.0, &v0).unwrap();
        let b = rcmdp_bellman_optimality(&m, 7.5, &v0).unwrap();
        assert_eq!(a.values, b.values);
    }

    #[test]
    fn contraction_envelope() {
        let mut m = single_state(1.0, 0.0, 0.5);
        m.gamma = 0.5;
        let (_, hist) = robust_value_iteration(&m, None, 1e-12, 1000).unwrap();
        for (k, r) in hist.iter().enumerate() {
            assert!(*r <= 2.0 * 0.5f64.powi(k as i32) + 1e-15);
        }
    }

    #[test]
    fn not_converged_carries_residual() {
        let m = single_state(1.0, 0.0, 0.0);
        match robust_value_iteration(&m, None, 1e-12, 3) {
            Err(Error::NotConverged { iterations: 3, residual }) => assert!(residual > 0.5),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn finite_horizon_runs_exactly_t_sweeps() {
        let mut m = single_state(1.0, 0.0, 0.0);
        m.gamma = 1.0;
        m.horizon = Horizon::Finite(4);
        let (v, hist) = robust_value_iteration(&m, None, 1e-8, 1).unwrap();
        assert_eq!(hist.len(), 4);
        assert_eq!(v.values[0], 4.0);
    }

    #[test]
    fn uniform_policy_on_single_state() {
        let m = single_state(1.0, 0.0, 0.4);
        let pi = PolicyTable::uniform(1, 2);
        let v = robust_policy_evaluation(&m, &pi, Signal::Reward).unwrap();
        assert!((v.values[0] - 10.0).abs() < 1e-6);
    }

    #[test]
    fn deterministic_chain_path_sum() {
        // 0 -> 1 -> 2 (absorbing, zero reward); rewards 1 then 2
        let z = vec![0.0; 3];
        let mut r = vec![vec![z.clone()]; 3];
        r[0][0][1] = 1.0;
        r[1][0][2] = 2.0;
        let d = vec![vec![z.clone()]; 3];
        let p = vec![
            vec![vec![0.0, 1.0, 0.0]],
            vec![vec![0.0, 0.0, 1.0]],
            vec![vec![0.0, 0.0, 1.0]],
        ];
        let m = Rcmdp::new(r, d, p, vec![vec![0.0]; 3], 0.9, Horizon::Infinite, 0.0, vec![1.0, 0.0, 0.0]).unwrap();
        let pi = PolicyTable::deterministic(&m, &[0, 0, 0]).unwrap();
        let v = robust_policy_evaluation(&m, &pi, Signal::Reward).unwrap();
        assert!((v.values[0] - (1.0 + 0.9 * 2.0)).abs() < 1e-12);
        assert!((robust_return(&m, &v).unwrap() - 2.8).abs() < 1e-12);
    }

    #[test]
    fn robust_return_examples() {
        let mut m = single_state(1.0, 0.0, 0.0);
        let v = ValueFunction::new(vec![4.0], Signal::Reward);
        assert_eq!(robust_return(&m, &v).unwrap(), 4.0);
        assert!(robust_return(&m, &ValueFunction::new(vec![4.0, 6.0], Signal::Reward)).is_err());

        let two = |p0: Vec<f64>| {
            let z = vec![vec![vec![0.0; 2]]; 2];
            Rcmdp::new(z.clone(), z, vec![vec![vec![1.0, 0.0]], vec![vec![0.0, 1.0]]], vec![vec![0.0]; 2], 0.9, Horizon::Infinite, 0.0, p0).unwrap()
        };
        m = two(vec![0.5, 0.5]);
        assert_eq!(robust_return(&m, &ValueFunction::new(vec![4.0, 6.0], Signal::Reward)).unwrap(), 5.0);
        m = two(vec![0.25, 0.75]);
        assert_eq!(robust_return(&m, &ValueFunction::new(vec![1.0, -1.0], Signal::Reward)).unwrap(), -0.5);
        m = two(vec![0.0, 1.0]);
        assert_eq!(robust_return(&m, &ValueFunction::new(vec![1.0, -1.0], Signal::Reward)).unwrap(), -1.0);
    }
}
