#![allow(dead_code)]

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rcmdp::{Horizon, Rcmdp};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform draw from the simplex, with a chance of exact zeros.
pub fn random_simplex<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    let sparse = n > 1 && rng.gen_bool(0.3);
    let mut x: Vec<f64> = (0..n)
        .map(|_| {
            if sparse && rng.gen_bool(0.4) {
                0.0
            } else {
                -rng.gen::<f64>().max(1e-300).ln()
            }
        })
        .collect();
    if x.iter().all(|&v| v == 0.0) {
        x[rng.gen_range(0..n)] = 1.0;
    }
    let total: f64 = x.iter().sum();
    x.iter_mut().for_each(|v| *v /= total);
    x
}

pub fn random_model<R: Rng>(
    rng: &mut R,
    n_states: usize,
    n_actions: usize,
    psi_choices: &[f64],
    gamma: f64,
    horizon: Horizon,
) -> Rcmdp {
    let cube = |rng: &mut R| -> Vec<Vec<Vec<f64>>> {
        (0..n_states)
            .map(|_| {
                (0..n_actions)
                    .map(|_| (0..n_states).map(|_| rng.gen_range(-1.0..1.0)).collect())
                    .collect()
            })
            .collect()
    };
    let rewards = cube(rng);
    let costs = cube(rng);
    let nominal = (0..n_states)
        .map(|_| (0..n_actions).map(|_| random_simplex(rng, n_states)).collect())
        .collect();
    let budgets = (0..n_states)
        .map(|_| {
            (0..n_actions)
                .map(|_| psi_choices[rng.gen_range(0..psi_choices.len())])
                .collect()
        })
        .collect();
    let p0 = random_simplex(rng, n_states);
    Rcmdp::new(rewards, costs, nominal, budgets, gamma, horizon, 0.0, p0).unwrap()
}

/// Solves `A x = b` by Gaussian elimination with partial pivoting.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            if f != 0.0 {
                for k in col..n {
                    a[row][k] -= f * a[col][k];
                }
                b[row] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let tail: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - tail) / a[row][row];
    }
    Some(x)
}

fn combinations(n: usize, k: usize, start: usize, cur: &mut Vec<usize>, out: &mut dyn FnMut(&[usize])) {
    if cur.len() == k {
        out(cur);
        return;
    }
    for i in start..n {
        if n - i < k - cur.len() {
            break;
        }
        cur.push(i);
        combinations(n, k, i + 1, cur, out);
        cur.pop();
    }
}

pub struct LpSolution {
    pub value: f64,
    /// Distribution parts of every optimal vertex found.
    pub optimal_vertices: Vec<Vec<f64>>,
}

impl LpSolution {
    /// True when every optimal vertex has the same distribution, i.e. the
    /// minimizer is unique.
    pub fn unique(&self, tol: f64) -> bool {
        let first = &self.optimal_vertices[0];
        self.optimal_vertices
            .iter()
            .all(|p| p.iter().zip(first).all(|(x, y)| (x - y).abs() <= tol))
    }
}

/// Minimizes `vᵀp` over `{p ≥ 0, Σp = 1, ‖p − c‖₁ ≤ ψ}` by enumerating the
/// vertices of the lifted polytope in `(p, t)` with `|p − c| ≤ t`.
pub fn lp_min(center: &[f64], radius: f64, v: &[f64]) -> LpSolution {
    let n = center.len();
    let m = 2 * n;
    // inequality rows `g · x ≤ h`
    let mut ineq: Vec<(Vec<f64>, f64)> = Vec::new();
    for i in 0..n {
        let mut g = vec![0.0; m];
        g[i] = 1.0;
        g[n + i] = -1.0;
        ineq.push((g, center[i]));
        let mut g = vec![0.0; m];
        g[i] = -1.0;
        g[n + i] = -1.0;
        ineq.push((g, -center[i]));
        let mut g = vec![0.0; m];
        g[i] = -1.0;
        ineq.push((g, 0.0));
    }
    let mut g = vec![0.0; m];
    g[n..].iter_mut().for_each(|x| *x = 1.0);
    ineq.push((g, radius));
    let mut eq = vec![0.0; m];
    eq[..n].iter_mut().for_each(|x| *x = 1.0);

    let mut best = f64::INFINITY;
    let mut vertices: Vec<(f64, Vec<f64>)> = Vec::new();
    let mut visit = |active: &[usize]| {
        let mut a = vec![eq.clone()];
        let mut b = vec![1.0];
        for &i in active {
            a.push(ineq[i].0.clone());
            b.push(ineq[i].1);
        }
        let Some(x) = solve(a, b) else { return };
        let feasible = ineq
            .iter()
            .all(|(g, h)| g.iter().zip(&x).map(|(gi, xi)| gi * xi).sum::<f64>() <= h + 1e-11);
        if !feasible {
            return;
        }
        let p = x[..n].to_vec();
        let value: f64 = p.iter().zip(v).map(|(pi, vi)| pi * vi).sum();
        best = best.min(value);
        vertices.push((value, p));
    };
    combinations(ineq.len(), m - 1, 0, &mut Vec::new(), &mut visit);
    let scale = 1.0 + v.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()));
    let optimal_vertices = vertices
        .into_iter()
        .filter(|(val, _)| *val <= best + 1e-11 * scale)
        .map(|(_, p)| p)
        .collect();
    LpSolution {
        value: best,
        optimal_vertices,
    }
}

/// Robust value iteration with the vertex-enumeration inner solver.
pub fn lp_value_iteration(model: &Rcmdp, tol: f64) -> Vec<f64> {
    let n = model.n_states;
    let mut v = vec![0.0; n];
    loop {
        let next: Vec<f64> = (0..n)
            .map(|s| {
                (0..model.n_actions)
                    .map(|a| {
                        let target: Vec<f64> =
                            (0..n).map(|t| model.rewards[s][a][t] + model.gamma * v[t]).collect();
                        lp_min(&model.nominal[s][a], model.budgets[s][a], &target).value
                    })
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect();
        let diff = next.iter().zip(&v).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        v = next;
        if diff <= tol {
            return v;
        }
    }
}

/// Non-robust expected one-step target under the nominal kernel.
pub fn nominal_q(model: &Rcmdp, channel: &[Vec<Vec<f64>>], s: usize, a: usize, v: &[f64]) -> f64 {
    model.nominal[s][a]
        .iter()
        .enumerate()
        .map(|(t, p)| p * (channel[s][a][t] + model.gamma * v[t]))
        .sum()
}

pub fn sup(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn softmax(row: &[f64]) -> Vec<f64> {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|x| (x - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

/// `E[Σ_{t<T} γᵗ (r + λd)] − λβ` under the nominal kernel, by backward
/// recursion over the horizon. Independent of the library's trajectory code.
pub fn nominal_lagrangian(model: &Rcmdp, logits: &[f64], lambda: f64, horizon: usize) -> f64 {
    let (n, na) = (model.n_states, model.n_actions);
    let mut j = vec![0.0; n];
    for _ in 0..horizon {
        j = (0..n)
            .map(|s| {
                let pi = softmax(&logits[s * na..(s + 1) * na]);
                (0..na)
                    .map(|a| {
                        pi[a]
                            * (0..n)
                                .map(|t| {
                                    model.nominal[s][a][t]
                                        * (model.rewards[s][a][t]
                                            + lambda * model.constraint_rewards[s][a][t]
                                            + model.gamma * j[t])
                                })
                                .sum::<f64>()
                    })
                    .sum()
            })
            .collect();
    }
    model.p0.iter().zip(&j).map(|(p, v)| p * v).sum::<f64>() - lambda * model.beta
}

/// Central differences of [`nominal_lagrangian`] in every logit.
pub fn fd_gradient(model: &Rcmdp, logits: &[f64], lambda: f64, horizon: usize, h: f64) -> Vec<f64> {
    (0..logits.len())
        .map(|i| {
            let mut up = logits.to_vec();
            let mut down = logits.to_vec();
            up[i] += h;
            down[i] -= h;
            (nominal_lagrangian(model, &up, lambda, horizon) - nominal_lagrangian(model, &down, lambda, horizon))
                / (2.0 * h)
        })
        .collect()
}

pub fn rel_error(x: &[f64], reference: &[f64]) -> f64 {
    let diff: f64 = x.iter().zip(reference).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let norm: f64 = reference.iter().map(|b| b * b).sum::<f64>().sqrt();
    diff / norm.max(1e-12)
}

/// Four-state corridor; state 3 is an absorbing goal. Action 0 moves right,
/// action 1 left, each succeeding with probability 0.9 and otherwise
/// staying. Every step costs 0.1 reward, entering the goal pays 1 and
/// entering state 0 incurs a raw cost of 0.2.
pub fn corridor(psi: f64, gamma: f64) -> Rcmdp {
    let n = 4;
    let mut nominal = vec![vec![vec![0.0; n]; 2]; n];
    let mut rewards = vec![vec![vec![0.0; n]; 2]; n];
    let mut costs = vec![vec![vec![0.0; n]; 2]; n];
    let mut budgets = vec![vec![psi; 2]; n];
    for s in 0..n {
        for a in 0..2 {
            if s == 3 {
                nominal[s][a][s] = 1.0;
                budgets[s][a] = 0.0;
                continue;
            }
            let target = if a == 0 { s + 1 } else { s.saturating_sub(1) };
            nominal[s][a][target] += 0.9;
            nominal[s][a][s] += 0.1;
            for t in 0..n {
                rewards[s][a][t] = -0.1 + if t == 3 { 1.0 } else { 0.0 };
                costs[s][a][t] = if t == 0 { -0.2 } else { 0.0 };
            }
        }
    }
    let p0 = vec![1.0 / 3.0, 1.0 / 3.0, 1.0 - 2.0 / 3.0, 0.0];
    Rcmdp::new(rewards, costs, nominal, budgets, gamma, Horizon::Infinite, 0.0, p0).unwrap()
}

/// Mann-Kendall S statistic and its normal-approximation z score.
pub fn mann_kendall(x: &[f64]) -> (i64, f64) {
    let n = x.len();
    let mut s = 0i64;
    for i in 0..n {
        for j in i + 1..n {
            s += (x[j] - x[i]).partial_cmp(&0.0).map_or(0, |o| o as i64);
        }
    }
    let nf = n as f64;
    let var = nf * (nf - 1.0) * (2.0 * nf + 5.0) / 18.0;
    let z = match s {
        0 => 0.0,
        s if s > 0 => (s as f64 - 1.0) / var.sqrt(),
        s => (s as f64 + 1.0) / var.sqrt(),
    };
    (s, z)
}
