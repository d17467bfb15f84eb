//! Lagrangian objective, its Monte-Carlo gradients, two-timescale step
//! schedules and the robust-constrained policy-gradient loop.
//!
//! The multiplier descends and the policy ascends:
//! `θ ← θ + ζ₂(k) ∇θ𝔏`, `λ ← clip(λ − ζ₁(k) ∇λ𝔏, 0, λ_max)`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::fmt_f64;
use crate::model::{Rcmdp, Signal};
use crate::policy::{discounted_sum, episode_rng, sample_trajectory, SoftmaxPolicy, Trajectory};
use crate::robust_dp::{evaluate_policy, robust_return, EvalOptions};

/// `ζ₁(k) = a₁/(1+k)^{e₁}` (slow, multiplier) and `ζ₂(k) = a₂/(1+k)^{e₂}`
/// (fast, policy).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSchedule {
    pub a1: f64,
    pub e1: f64,
    pub a2: f64,
    pub e2: f64,
}

impl Default for StepSchedule {
    fn default() -> Self {
        StepSchedule {
            a1: 0.05,
            e1: 0.9,
            a2: 0.05,
            e2: 0.6,
        }
    }
}

impl StepSchedule {
    pub fn zeta1(&self, k: u64) -> f64 {
        self.a1 / (1.0 + k as f64).powf(self.e1)
    }

    pub fn zeta2(&self, k: u64) -> f64 {
        self.a2 / (1.0 + k as f64).powf(self.e2)
    }

    pub fn check(&self) -> ScheduleReport {
        step_schedule_check(self)
    }

    pub fn validate(&self) -> Result<()> {
        let report = self.check();
        if report.passed() {
            Ok(())
        } else {
            Err(Error::InvalidSchedule(report.violations.join("; ")))
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScheduleReport {
    pub violations: Vec<String>,
}

impl ScheduleReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks the stochastic-approximation conditions: both series diverge,
/// both squared series converge, and `ζ₁ = o(ζ₂)`. The exponent conditions
/// `0.5 < e₂ < e₁ ≤ 1` are sufficient; the ratio is also checked to shrink
/// over the decades up to `k = 10⁶`.
pub fn step_schedule_check(schedule: &StepSchedule) -> ScheduleReport {
    let mut v = Vec::new();
    let StepSchedule { a1, e1, a2, e2 } = *schedule;
    if !(a1 > 0.0 && a1.is_finite()) || !(a2 > 0.0 && a2.is_finite()) {
        v.push(format!("coefficients must be positive and finite (a1 = {a1}, a2 = {a2})"));
    }
    if !(e1 <= 1.0) || !(e2 <= 1.0) {
        v.push(format!("exponents above 1 make the step sum finite (e1 = {e1}, e2 = {e2})"));
    }
    if !(e2 > 0.5) || !(e1 > 0.5) {
        v.push(format!("exponents at or below 0.5 make the squared sum diverge (e1 = {e1}, e2 = {e2})"));
    }
    if !(e2 < e1) {
        v.push(format!("timescales inverted: need e2 < e1 so that zeta1 = o(zeta2) (e1 = {e1}, e2 = {e2})"));
    }
    if v.is_empty() {
        let mut prev = f64::INFINITY;
        for decade in 0..=6 {
            let k = 10u64.pow(decade);
            let ratio = schedule.zeta1(k) / schedule.zeta2(k);
            if !(ratio < prev) {
                v.push(format!("zeta1/zeta2 does not shrink at k = {k}"));
                break;
            }
            prev = ratio;
        }
    }
    ScheduleReport { violations: v }
}

// ---------------------------------------------------------------------------
// Estimators
// ---------------------------------------------------------------------------

fn weighted_lagrangian<'a>(
    items: impl Iterator<Item = (f64, &'a Trajectory)>,
    lambda: f64,
    beta: f64,
    gamma: f64,
) -> f64 {
    let mut acc = 0.0;
    for (w, xi) in items {
        acc += w * discounted_sum(xi, Signal::Combined(lambda), gamma);
    }
    acc - lambda * beta
}

fn weighted_grad_theta<'a>(
    items: impl Iterator<Item = (f64, &'a Trajectory)>,
    lambda: f64,
    gamma: f64,
    n_states: usize,
    n_actions: usize,
) -> Vec<f64> {
    let mut g = vec![0.0; n_states * n_actions];
    for (w, xi) in items {
        let ret = discounted_sum(xi, Signal::Combined(lambda), gamma);
        xi.accumulate_score(n_actions, w * ret, &mut g);
    }
    g
}

fn weighted_grad_lambda<'a>(
    items: impl Iterator<Item = (f64, &'a Trajectory)>,
    beta: f64,
    gamma: f64,
) -> f64 {
    let mut acc = 0.0;
    for (w, xi) in items {
        acc += w * discounted_sum(xi, Signal::Constraint, gamma);
    }
    acc - beta
}

fn uniform(batch: &[Trajectory]) -> Result<impl Iterator<Item = (f64, &Trajectory)>> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let w = 1.0 / batch.len() as f64;
    Ok(batch.iter().map(move |xi| (w, xi)))
}

/// Batch mean of `g(ξ,r) + λ g(ξ,d)` minus `λβ`.
pub fn lagrangian_estimate(batch: &[Trajectory], lambda: f64, beta: f64, gamma: f64) -> Result<f64> {
    Ok(weighted_lagrangian(uniform(batch)?, lambda, beta, gamma))
}

/// Batch mean of `(g(ξ,r) + λ g(ξ,d)) Σ_t ∇θ log π(a_t|s_t)`.
pub fn grad_theta(
    batch: &[Trajectory],
    lambda: f64,
    gamma: f64,
    n_states: usize,
    n_actions: usize,
) -> Result<Vec<f64>> {
    Ok(weighted_grad_theta(uniform(batch)?, lambda, gamma, n_states, n_actions))
}

/// Batch mean of `g(ξ,d)` minus `β`.
pub fn grad_lambda(batch: &[Trajectory], beta: f64, gamma: f64) -> Result<f64> {
    Ok(weighted_grad_lambda(uniform(batch)?, beta, gamma))
}

/// Exact expectations over a probability-weighted trajectory set, e.g. the
/// output of [`crate::policy::enumerate_trajectories`].
pub mod exact {
    use super::*;

    pub fn lagrangian(weighted: &[(f64, Trajectory)], lambda: f64, beta: f64, gamma: f64) -> f64 {
        weighted_lagrangian(weighted.iter().map(|(w, x)| (*w, x)), lambda, beta, gamma)
    }

    pub fn grad_theta(
        weighted: &[(f64, Trajectory)],
        lambda: f64,
        gamma: f64,
        n_states: usize,
        n_actions: usize,
    ) -> Vec<f64> {
        weighted_grad_theta(weighted.iter().map(|(w, x)| (*w, x)), lambda, gamma, n_states, n_actions)
    }

    pub fn grad_lambda(weighted: &[(f64, Trajectory)], beta: f64, gamma: f64) -> f64 {
        weighted_grad_lambda(weighted.iter().map(|(w, x)| (*w, x)), beta, gamma)
    }
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

/// Which robust value function the sampler's adversary minimizes against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PessimismMode {
    /// `r + λd` at the current multiplier.
    #[default]
    Combined,
    Reward,
    Constraint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RcpgConfig {
    pub schedule: StepSchedule,
    /// Episode length cap `T`.
    pub horizon: usize,
    pub episodes: u64,
    pub batch_size: usize,
    pub lambda0: f64,
    pub lambda_max: f64,
    /// Keeps `λ = λ₀` throughout.
    pub freeze_lambda: bool,
    pub pessimism: PessimismMode,
    /// Episodes between robust re-evaluations of the current policy.
    pub refresh_every: u64,
    pub seed: u64,
    pub eval: EvalOptions,
}

impl Default for RcpgConfig {
    fn default() -> Self {
        RcpgConfig {
            schedule: StepSchedule::default(),
            horizon: 50,
            episodes: 1000,
            batch_size: 1,
            lambda0: 0.0,
            lambda_max: 100.0,
            freeze_lambda: false,
            pessimism: PessimismMode::Combined,
            refresh_every: 10,
            seed: 0,
            eval: EvalOptions::default(),
        }
    }
}

impl RcpgConfig {
    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        if self.horizon == 0 {
            return Err(Error::invalid("horizon", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size", "must be at least 1"));
        }
        if self.refresh_every == 0 {
            return Err(Error::invalid("refresh_every", "must be at least 1"));
        }
        if !(self.lambda_max >= 0.0) || !self.lambda_max.is_finite() {
            return Err(Error::invalid("lambda_max", "must be finite and non-negative"));
        }
        if !(0.0..=self.lambda_max).contains(&self.lambda0) {
            return Err(Error::invalid("lambda0", format!("{} outside [0, lambda_max]", self.lambda0)));
        }
        Ok(())
    }
}

/// Everything needed to continue a run bit-exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaddleState {
    pub policy: SoftmaxPolicy,
    pub lambda: f64,
    /// Episodes completed so far.
    pub k: u64,
    /// Value vector the adversary currently minimizes against.
    pub pessimism: Vec<f64>,
    /// Latest robust evaluations (also warm starts for the next refresh).
    pub value_r: Vec<f64>,
    pub value_d: Vec<f64>,
    pub robust_return_r: f64,
    pub robust_return_d: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub k: u64,
    pub lagrangian: f64,
    /// Robust returns of the policy as of the latest refresh.
    pub robust_return_r: f64,
    pub robust_return_d: f64,
    /// Multiplier after this episode's update.
    pub lambda: f64,
    pub grad_theta_norm: f64,
    pub grad_lambda: f64,
}

pub const HISTORY_HEADER: &str =
    "k,lagrangian,robust_return_r,robust_return_d,lambda,grad_theta_norm,grad_lambda";

pub fn write_history_csv<W: Write>(records: &[EpisodeRecord], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{HISTORY_HEADER}")?;
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.k,
            fmt_f64(r.lagrangian),
            fmt_f64(r.robust_return_r),
            fmt_f64(r.robust_return_d),
            fmt_f64(r.lambda),
            fmt_f64(r.grad_theta_norm),
            fmt_f64(r.grad_lambda)
        )?;
    }
    Ok(())
}

pub struct RcpgTrainer<'m> {
    model: &'m Rcmdp,
    eval_model: &'m Rcmdp,
    config: RcpgConfig,
    state: SaddleState,
    history: Vec<EpisodeRecord>,
}

impl<'m> RcpgTrainer<'m> {
    pub fn new(model: &'m Rcmdp, config: RcpgConfig) -> Result<Self> {
        let n = model.n_states;
        let state = SaddleState {
            policy: SoftmaxPolicy::uniform(n, model.n_actions),
            lambda: config.lambda0,
            k: 0,
            pessimism: vec![0.0; n],
            value_r: vec![0.0; n],
            value_d: vec![0.0; n],
            robust_return_r: 0.0,
            robust_return_d: 0.0,
        };
        Self::resume(model, config, state)
    }

    /// Continues from a checkpoint; the episode seed streams are indexed by
    /// `k`, so the continuation matches an uninterrupted run.
    pub fn resume(model: &'m Rcmdp, config: RcpgConfig, state: SaddleState) -> Result<Self> {
        model.ensure_valid()?;
        config.validate()?;
        if state.policy.n_states != model.n_states || state.policy.n_actions != model.n_actions {
            return Err(Error::invalid("state", "policy shape does not match the model"));
        }
        Ok(RcpgTrainer {
            model,
            eval_model: model,
            config,
            state,
            history: Vec::new(),
        })
    }

    /// Reports robust returns on `eval_model` instead of the training model,
    /// e.g. the unshaped model when training on a shaped one.
    pub fn with_eval_model(mut self, eval_model: &'m Rcmdp) -> Result<Self> {
        if eval_model.n_states != self.model.n_states || eval_model.n_actions != self.model.n_actions {
            return Err(Error::invalid("eval_model", "shape differs from the training model"));
        }
        self.eval_model = eval_model;
        Ok(self)
    }

    pub fn state(&self) -> &SaddleState {
        &self.state
    }

    pub fn history(&self) -> &[EpisodeRecord] {
        &self.history
    }

    pub fn config(&self) -> &RcpgConfig {
        &self.config
    }

    pub fn into_parts(self) -> (SaddleState, Vec<EpisodeRecord>) {
        (self.state, self.history)
    }

    fn refresh(&mut self) -> Result<()> {
        let table = self.state.policy.table();
        let opts = self.config.eval;
        let vr = evaluate_policy(self.eval_model, &table, Signal::Reward, &opts, Some(&self.state.value_r))?;
        let vd = evaluate_policy(self.eval_model, &table, Signal::Constraint, &opts, Some(&self.state.value_d))?;
        self.state.robust_return_r = robust_return(self.eval_model, &vr)?;
        self.state.robust_return_d = robust_return(self.eval_model, &vd)?;
        let same_model = std::ptr::eq(self.model, self.eval_model);
        self.state.pessimism = match self.config.pessimism {
            PessimismMode::Reward if same_model => vr.values.clone(),
            PessimismMode::Constraint if same_model => vd.values.clone(),
            mode => {
                let signal = match mode {
                    PessimismMode::Reward => Signal::Reward,
                    PessimismMode::Constraint => Signal::Constraint,
                    PessimismMode::Combined => Signal::Combined(self.state.lambda),
                };
                evaluate_policy(self.model, &table, signal, &opts, Some(&self.state.pessimism))?.values
            }
        };
        self.state.value_r = vr.values;
        self.state.value_d = vd.values;
        Ok(())
    }

    /// Runs one episode (one batch) and its two updates.
    pub fn step(&mut self) -> Result<&EpisodeRecord> {
        let k = self.state.k;
        if k % self.config.refresh_every == 0 {
            self.refresh()?;
        }
        let model = self.model;
        let gamma = model.gamma;
        let mut rng = episode_rng(self.config.seed, k);
        let batch = (0..self.config.batch_size)
            .map(|_| {
                sample_trajectory(model, &self.state.policy, &self.state.pessimism, self.config.horizon, &mut rng)
            })
            .collect::<Result<Vec<_>>>()?;

        let lambda = self.state.lambda;
        let lagrangian = lagrangian_estimate(&batch, lambda, model.beta, gamma)?;
        let g_theta = grad_theta(&batch, lambda, gamma, model.n_states, model.n_actions)?;
        let g_lambda = grad_lambda(&batch, model.beta, gamma)?;

        let step_theta = self.config.schedule.zeta2(k);
        for (theta, g) in self.state.policy.logits.iter_mut().zip(&g_theta) {
            *theta += step_theta * g;
        }
        if !self.config.freeze_lambda {
            let next = lambda - self.config.schedule.zeta1(k) * g_lambda;
            self.state.lambda = next.clamp(0.0, self.config.lambda_max);
        }
        self.state.k += 1;

        self.history.push(EpisodeRecord {
            k,
            lagrangian,
            robust_return_r: self.state.robust_return_r,
            robust_return_d: self.state.robust_return_d,
            lambda: self.state.lambda,
            grad_theta_norm: g_theta.iter().map(|x| x * x).sum::<f64>().sqrt(),
            grad_lambda: g_lambda,
        });
        Ok(self.history.last().expect("just pushed"))
    }

    pub fn run(&mut self, episodes: u64) -> Result<()> {
        for _ in 0..episodes {
            self.step()?;
        }
        Ok(())
    }

    /// Runs until `config.episodes` episodes have completed in total.
    pub fn run_to_end(&mut self) -> Result<()> {
        while self.state.k < self.config.episodes {
            self.step()?;
        }
        Ok(())
    }
}

pub fn rcpg_train(model: &Rcmdp, config: RcpgConfig) -> Result<(SaddleState, Vec<EpisodeRecord>)> {
    let mut trainer = RcpgTrainer::new(model, config)?;
    trainer.run_to_end()?;
    Ok(trainer.into_parts())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::Step;

    fn traj(rs: &[f64], ds: &[f64]) -> Trajectory {
        Trajectory {
            steps: rs
                .iter()
                .zip(ds)
                .enumerate()
                .map(|(t, (&r, &d))| Step { t, s: 0, a: 0, s_next: 0, r, d, score: vec![0.5, -0.5] })
                .collect(),
        }
    }

    #[test]
    fn lagrangian_examples() {
        let b = [traj(&[3.0], &[-1.0])];
        assert_eq!(lagrangian_estimate(&b, 2.0, -3.0, 1.0).unwrap(), 7.0);
        let b = [traj(&[1.0, 2.0], &[-1.0, -1.0]), traj(&[0.0], &[-4.0])];
        assert_eq!(lagrangian_estimate(&b, 0.0, 5.0, 1.0).unwrap(), 1.5);
        assert!(matches!(lagrangian_estimate(&[], 0.0, 0.0, 1.0), Err(Error::EmptyBatch)));
    }

    #[test]
    fn grad_lambda_examples() {
        let b = [traj(&[0.0], &[-1.0]), traj(&[0.0], &[-3.0])];
        assert_eq!(grad_lambda(&b, -2.0, 1.0).unwrap(), 0.0);
        let b = [traj(&[1.0, 1.0], &[0.0, 0.0])];
        assert_eq!(grad_lambda(&b, 0.0, 0.9).unwrap(), 0.0);
        let b = [traj(&[0.0, 0.0], &[-1.0, -1.0])];
        assert!((grad_lambda(&b, -3.0, 0.9).unwrap() - 1.1).abs() < 1e-15);
        assert!(grad_lambda(&[], 0.0, 0.9).is_err());
    }

    #[test]
    fn single_trajectory_gradient_is_return_times_score_sum() {
        let b = [traj(&[1.0, 2.0], &[0.0, 0.0])];
        let g = grad_theta(&b, 0.0, 0.5, 1, 2).unwrap();
        // return 1 + 0.5*2 = 2, score sum [1, -1]
        assert_eq!(g, vec![2.0, -2.0]);
    }

    #[test]
    fn schedule_examples() {
        let ok = StepSchedule { a1: 0.05, e1: 0.9, a2: 0.05, e2: 0.6 };
        assert!(ok.check().passed());
        let inverted = StepSchedule { e1: 0.6, e2: 0.9, ..ok };
        assert!(!inverted.check().passed());
        assert!(inverted.check().violations[0].contains("inverted"));
        let slow = StepSchedule { e2: 0.4, ..ok };
        assert!(slow.check().violations.iter().any(|v| v.contains("squared")));
        assert!(StepSchedule { e1: 1.2, ..ok }.validate().is_err());
        assert!(StepSchedule { a1: 0.0, ..ok }.validate().is_err());
    }

    #[test]
    fn schedule_values() {
        let s = StepSchedule { a1: 1.0, e1: 1.0, a2: 2.0, e2: 0.75 };
        assert_eq!(s.zeta1(0), 1.0);
        assert_eq!(s.zeta1(3), 0.25);
        assert!((s.zeta2(15) - 2.0 / 8.0).abs() < 1e-15);
    }
}
