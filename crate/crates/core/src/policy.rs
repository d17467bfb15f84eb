//! Tabular softmax policies, score functions and pessimistic trajectory
//! sampling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::model::{Rcmdp, Signal, SIMPLEX_TOL};

/// Softmax policy with one logit per `(s, a)`; parameter `s * A + a`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxPolicy {
    pub n_states: usize,
    pub n_actions: usize,
    pub logits: Vec<f64>,
}

impl SoftmaxPolicy {
    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        SoftmaxPolicy {
            n_states,
            n_actions,
            logits: vec![0.0; n_states * n_actions],
        }
    }

    pub fn from_logits(n_states: usize, n_actions: usize, logits: Vec<f64>) -> Result<Self> {
        check_len("softmax logits", n_states * n_actions, logits.len())?;
        if logits.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("logits", "non-finite entry"));
        }
        Ok(SoftmaxPolicy {
            n_states,
            n_actions,
            logits,
        })
    }

    pub fn n_params(&self) -> usize {
        self.logits.len()
    }

    pub fn row_logits(&self, s: usize) -> &[f64] {
        &self.logits[s * self.n_actions..(s + 1) * self.n_actions]
    }

    /// Stabilized softmax. Probabilities are floored at the smallest normal
    /// `f64` so every action keeps nonzero mass even when the true value
    /// underflows.
    pub fn action_distribution(&self, s: usize) -> Vec<f64> {
        let row = self.row_logits(s);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut probs: Vec<f64> = row.iter().map(|x| (x - max).exp()).collect();
        let z: f64 = probs.iter().sum();
        for p in &mut probs {
            *p = (*p / z).max(f64::MIN_POSITIVE);
        }
        probs
    }

    pub fn log_prob(&self, s: usize, a: usize) -> f64 {
        let row = self.row_logits(s);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        row[a] - lse
    }

    /// `∇θ log π(a|s)` restricted to row `s`: `1{b = a} − π(b|s)`.
    pub fn score_row(&self, s: usize, a: usize) -> Vec<f64> {
        let mut g = self.action_distribution(s);
        g.iter_mut().for_each(|x| *x = -*x);
        g[a] += 1.0;
        g
    }

    /// Full-length score vector; zero outside row `s`.
    pub fn score(&self, s: usize, a: usize) -> Vec<f64> {
        let mut g = vec![0.0; self.n_params()];
        let row = self.score_row(s, a);
        g[s * self.n_actions..(s + 1) * self.n_actions].copy_from_slice(&row);
        g
    }

    pub fn table(&self) -> PolicyTable {
        PolicyTable {
            n_states: self.n_states,
            n_actions: self.n_actions,
            probs: (0..self.n_states).map(|s| self.action_distribution(s)).collect(),
        }
    }
}

/// Explicit stochastic policy `probs[s][a]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyTable {
    pub n_states: usize,
    pub n_actions: usize,
    pub probs: Vec<Vec<f64>>,
}

impl PolicyTable {
    pub fn new(probs: Vec<Vec<f64>>) -> Result<Self> {
        let n_states = probs.len();
        let n_actions = probs.first().map_or(0, Vec::len);
        if n_states == 0 || n_actions == 0 {
            return Err(Error::invalid("policy", "empty table"));
        }
        for (s, row) in probs.iter().enumerate() {
            check_len("policy row", n_actions, row.len())?;
            let sum: f64 = row.iter().sum();
            if row.iter().any(|&p| p < 0.0 || !p.is_finite()) || (sum - 1.0).abs() > SIMPLEX_TOL {
                return Err(Error::invalid("policy", format!("row {s} is not a distribution")));
            }
        }
        Ok(PolicyTable {
            n_states,
            n_actions,
            probs,
        })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        PolicyTable {
            n_states,
            n_actions,
            probs: vec![vec![1.0 / n_actions as f64; n_actions]; n_states],
        }
    }

    pub fn deterministic(model: &Rcmdp, actions: &[usize]) -> Result<Self> {
        check_len("deterministic policy", model.n_states, actions.len())?;
        let mut probs = vec![vec![0.0; model.n_actions]; model.n_states];
        for (s, &a) in actions.iter().enumerate() {
            if a >= model.n_actions {
                return Err(Error::invalid("action", format!("{a} out of range in state {s}")));
            }
            probs[s][a] = 1.0;
        }
        Ok(PolicyTable {
            n_states: model.n_states,
            n_actions: model.n_actions,
            probs,
        })
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s]
    }

    pub fn check_shape(&self, model: &Rcmdp) -> Result<()> {
        check_len("policy states", model.n_states, self.n_states)?;
        check_len("policy actions", model.n_actions, self.n_actions)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub t: usize,
    pub s: usize,
    pub a: usize,
    pub s_next: usize,
    pub r: f64,
    pub d: f64,
    /// Row `s` of `∇θ log π(a|s)`; the score is zero on every other row.
    pub score: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub steps: Vec<Step>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Consecutive steps chain and time indices count up from zero.
    pub fn is_chained(&self) -> bool {
        self.steps.iter().enumerate().all(|(i, st)| st.t == i)
            && self.steps.windows(2).all(|w| w[0].s_next == w[1].s)
    }

    /// Adds the summed score into a dense parameter vector, scaled by `weight`.
    pub fn accumulate_score(&self, n_actions: usize, weight: f64, out: &mut [f64]) {
        for st in &self.steps {
            let base = st.s * n_actions;
            for (b, g) in st.score.iter().enumerate() {
                out[base + b] += weight * g;
            }
        }
    }
}

/// `Σ_t γᵗ signal_t` along the trajectory.
pub fn discounted_sum(trajectory: &Trajectory, signal: Signal, gamma: f64) -> f64 {
    let mut discount = 1.0;
    let mut total = 0.0;
    for st in &trajectory.steps {
        let x = match signal {
            Signal::Reward => st.r,
            Signal::Constraint => st.d,
            Signal::Combined(l) => st.r + l * st.d,
        };
        total += discount * x;
        discount *= gamma;
    }
    total
}

/// Inverse-CDF draw; falls back to the last positive entry on round-off.
pub fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

/// Generator for episode `stream` of a run seeded with `seed`.
pub fn episode_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Rolls out `policy` for at most `horizon` steps, drawing each next state
/// from the worst-case distribution of the visited `(s, a)` ball against
/// `pessimism`. Stops early on terminal states.
pub fn sample_trajectory<R: Rng + ?Sized>(
    model: &Rcmdp,
    policy: &SoftmaxPolicy,
    pessimism: &[f64],
    horizon: usize,
    rng: &mut R,
) -> Result<Trajectory> {
    check_len("pessimism vector", model.n_states, pessimism.len())?;
    check_len("policy states", model.n_states, policy.n_states)?;
    check_len("policy actions", model.n_actions, policy.n_actions)?;
    if horizon == 0 {
        return Err(Error::invalid("horizon", "must be at least 1"));
    }
    let mut s = sample_index(&model.p0, rng);
    let mut steps = Vec::with_capacity(horizon);
    for t in 0..horizon {
        if model.is_terminal(s) {
            break;
        }
        let probs = policy.action_distribution(s);
        let a = sample_index(&probs, rng);
        let p = model.ball(s, a).response_unchecked(pessimism);
        let s_next = sample_index(&p, rng);
        let mut score: Vec<f64> = probs.iter().map(|x| -x).collect();
        score[a] += 1.0;
        steps.push(Step {
            t,
            s,
            a,
            s_next,
            r: model.rewards[s][a][s_next],
            d: model.constraint_rewards[s][a][s_next],
            score,
        });
        s = s_next;
    }
    Ok(Trajectory { steps })
}

/// Every trajectory of length at most `horizon` with its probability under
/// `policy` and the worst-case kernels against `pessimism`. Exponential in
/// the horizon; meant for tiny models.
pub fn enumerate_trajectories(
    model: &Rcmdp,
    policy: &SoftmaxPolicy,
    pessimism: &[f64],
    horizon: usize,
) -> Result<Vec<(f64, Trajectory)>> {
    check_len("pessimism vector", model.n_states, pessimism.len())?;
    let kernels: Vec<Vec<Vec<f64>>> = (0..model.n_states)
        .map(|s| {
            (0..model.n_actions)
                .map(|a| model.ball(s, a).response_unchecked(pessimism).into_vec())
                .collect()
        })
        .collect();
    let mut out = Vec::new();
    for (s0, &p) in model.p0.iter().enumerate() {
        if p > 0.0 {
            let mut prefix = Vec::with_capacity(horizon);
            extend(model, policy, &kernels, horizon, s0, p, &mut prefix, &mut out);
        }
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn extend(
    model: &Rcmdp,
    policy: &SoftmaxPolicy,
    kernels: &[Vec<Vec<f64>>],
    horizon: usize,
    s: usize,
    weight: f64,
    prefix: &mut Vec<Step>,
    out: &mut Vec<(f64, Trajectory)>,
) {
    if prefix.len() == horizon || model.is_terminal(s) {
        out.push((weight, Trajectory { steps: prefix.clone() }));
        return;
    }
    let probs = policy.action_distribution(s);
    for (a, &pa) in probs.iter().enumerate() {
        let score = policy.score_row(s, a);
        for (s_next, &ps) in kernels[s][a].iter().enumerate() {
            if ps <= 0.0 {
                continue;
            }
            prefix.push(Step {
                t: prefix.len(),
                s,
                a,
                s_next,
                r: model.rewards[s][a][s_next],
                d: model.constraint_rewards[s][a][s_next],
                score: score.clone(),
            });
            extend(model, policy, kernels, horizon, s_next, weight * pa * ps, prefix, out);
            prefix.pop();
        }
    }
}
