//! Robust constrained actor-critic with a tabular critic.
//!
//! Per step: the adversary picks the worst-case kernel of the visited
//! `(s, a)` ball against the live critic, the TD error is taken on the
//! Lagrangian reward `r + λd`, the actor moves along `δ·∇θ log π` with
//! `ζ₂(k)` and the critic entry `w(s)` moves by `ζ₁(k)·δ`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::io::fmt_f64;
use crate::model::Rcmdp;
use crate::policy::{episode_rng, sample_index, SoftmaxPolicy, Step, Trajectory};
use crate::rcpg::{grad_lambda, StepSchedule};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticTable {
    pub values: Vec<f64>,
}

impl CriticTable {
    pub fn zeros(n_states: usize) -> Self {
        CriticTable {
            values: vec![0.0; n_states],
        }
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

/// `δ = r′ + γ·w(s′)·1{s′ not terminal} − w(s)`.
pub fn td_error(r_combined: f64, w_s: f64, w_s_next: f64, gamma: f64, terminal: bool) -> f64 {
    let bootstrap = if terminal { 0.0 } else { gamma * w_s_next };
    r_combined + bootstrap - w_s
}

/// Optional episodic multiplier update on completed episodes. Experimental:
/// the base algorithm keeps `λ` fixed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaStep {
    pub a: f64,
    pub e: f64,
    pub lambda_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RcacConfig {
    /// `ζ₁` drives the critic, `ζ₂` the actor; both indexed by global step.
    pub schedule: StepSchedule,
    pub lambda: f64,
    pub lambda_step: Option<LambdaStep>,
    pub episodes: u64,
    /// Step cap per episode for models without reachable terminal states.
    pub max_steps: usize,
    pub freeze_actor: bool,
    pub seed: u64,
}

impl Default for RcacConfig {
    fn default() -> Self {
        RcacConfig {
            schedule: StepSchedule {
                a1: 0.1,
                e1: 0.9,
                a2: 0.1,
                e2: 0.6,
            },
            lambda: 0.0,
            lambda_step: None,
            episodes: 1000,
            max_steps: 100,
            freeze_actor: false,
            seed: 0,
        }
    }
}

impl RcacConfig {
    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::invalid("lambda", "must be finite and non-negative"));
        }
        if self.max_steps == 0 {
            return Err(Error::invalid("max_steps", "must be at least 1"));
        }
        if let Some(ls) = self.lambda_step {
            if !(ls.a > 0.0) || !(ls.e > 0.5 && ls.e <= 1.0) || !(ls.lambda_max >= self.lambda) {
                return Err(Error::InvalidSchedule(format!(
                    "lambda step needs a > 0, 0.5 < e <= 1 and lambda_max >= lambda (got {ls:?})"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcStepRecord {
    pub step: u64,
    pub episode: u64,
    pub s: usize,
    pub a: usize,
    pub delta: f64,
    pub lambda: f64,
    /// Euclidean norm of the critic after this step's update.
    pub w_norm: f64,
}

pub const AC_HISTORY_HEADER: &str = "step,episode,s,a,delta,lambda,w_norm";

pub fn write_ac_history_csv<W: Write>(records: &[AcStepRecord], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{AC_HISTORY_HEADER}")?;
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.step,
            r.episode,
            r.s,
            r.a,
            fmt_f64(r.delta),
            fmt_f64(r.lambda),
            fmt_f64(r.w_norm)
        )?;
    }
    Ok(())
}

pub fn rcac_train(
    model: &Rcmdp,
    config: &RcacConfig,
) -> Result<(SoftmaxPolicy, CriticTable, Vec<AcStepRecord>)> {
    rcac_train_from(
        model,
        config,
        SoftmaxPolicy::uniform(model.n_states, model.n_actions),
        CriticTable::zeros(model.n_states),
    )
}

/// Same as [`rcac_train`] starting from a given actor and critic.
pub fn rcac_train_from(
    model: &Rcmdp,
    config: &RcacConfig,
    mut policy: SoftmaxPolicy,
    mut critic: CriticTable,
) -> Result<(SoftmaxPolicy, CriticTable, Vec<AcStepRecord>)> {
    model.ensure_valid()?;
    config.validate()?;
    check_len("policy states", model.n_states, policy.n_states)?;
    check_len("policy actions", model.n_actions, policy.n_actions)?;
    check_len("critic", model.n_states, critic.values.len())?;

    let gamma = model.gamma;
    let mut lambda = config.lambda;
    let mut history = Vec::new();
    let mut k: u64 = 0;
    let n_actions = model.n_actions;

    for episode in 0..config.episodes {
        let mut rng = episode_rng(config.seed, episode);
        let mut s = sample_index(&model.p0, &mut rng);
        let mut steps = Vec::new();
        let mut t = 0;
        while !model.is_terminal(s) && t < config.max_steps {
            let probs = policy.action_distribution(s);
            let a = sample_index(&probs, &mut rng);
            let p = model.ball(s, a).response_unchecked(&critic.values);
            let s_next = sample_index(&p, &mut rng);
            let r = model.rewards[s][a][s_next];
            let d = model.constraint_rewards[s][a][s_next];
            let delta = td_error(
                r + lambda * d,
                critic.values[s],
                critic.values[s_next],
                gamma,
                model.is_terminal(s_next),
            );

            let mut score: Vec<f64> = probs.iter().map(|x| -x).collect();
            score[a] += 1.0;
            if !config.freeze_actor {
                let step = config.schedule.zeta2(k) * delta;
                for (theta, g) in policy.logits[s * n_actions..(s + 1) * n_actions].iter_mut().zip(&score) {
                    *theta += step * g;
                }
            }
            critic.values[s] += config.schedule.zeta1(k) * delta;

            history.push(AcStepRecord {
                step: k,
                episode,
                s,
                a,
                delta,
                lambda,
                w_norm: critic.norm(),
            });
            if config.lambda_step.is_some() {
                steps.push(Step { t, s, a, s_next, r, d, score });
            }
            k += 1;
            t += 1;
            s = s_next;
        }
        if let Some(ls) = config.lambda_step {
            if !steps.is_empty() {
                let g = grad_lambda(&[Trajectory { steps }], model.beta, gamma)?;
                let zeta = ls.a / (1.0 + episode as f64).powf(ls.e);
                lambda = (lambda - zeta * g).clamp(0.0, ls.lambda_max);
            }
        }
    }
    Ok((policy, critic, history))
}
