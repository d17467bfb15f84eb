//! Benchmark generators: a slippery hazard gridworld and a single-item
//! inventory problem, plus stratified dataset synthesis.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lyapunov::LyapunovFn;
use crate::model::{Horizon, Rcmdp, TransitionDataset, TransitionRecord};
use crate::policy::sample_index;

pub type Cell = (usize, usize);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hazard {
    pub cell: Cell,
    /// Raw cost paid every time the cell is entered (or kept).
    pub cost: f64,
}

/// Cells are `(x, y)`; state id is `y * width + x`.
/// Actions: 0 up (`y + 1`), 1 right, 2 down, 3 left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub width: usize,
    pub height: usize,
    pub start: Cell,
    pub goal: Cell,
    #[serde(default)]
    pub hazards: Vec<Hazard>,
    #[serde(default)]
    pub slip: f64,
    #[serde(default)]
    pub step_reward: f64,
    pub goal_reward: f64,
    pub gamma: f64,
    #[serde(default)]
    pub beta: f64,
    #[serde(default = "infinite")]
    pub horizon: Horizon,
}

fn infinite() -> Horizon {
    Horizon::Infinite
}

pub const GRID_ACTIONS: usize = 4;

impl GridSpec {
    pub fn state(&self, cell: Cell) -> usize {
        cell.1 * self.width + cell.0
    }

    pub fn cell(&self, s: usize) -> Cell {
        (s % self.width, s / self.width)
    }

    fn in_bounds(&self, c: Cell) -> bool {
        c.0 < self.width && c.1 < self.height
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("grid", "width and height must be positive"));
        }
        if !self.in_bounds(self.start) || !self.in_bounds(self.goal) {
            return Err(Error::invalid("grid", "start and goal must lie inside the grid"));
        }
        if self.start == self.goal {
            return Err(Error::invalid("grid", "start and goal coincide"));
        }
        if !(0.0..0.5).contains(&self.slip) {
            return Err(Error::invalid("slip", format!("{} not in [0, 0.5)", self.slip)));
        }
        for h in &self.hazards {
            if !self.in_bounds(h.cell) || !h.cost.is_finite() {
                return Err(Error::invalid("hazard", format!("{h:?} is out of bounds or non-finite")));
            }
        }
        Ok(())
    }

    fn hazard_cost(&self, c: Cell) -> f64 {
        self.hazards.iter().filter(|h| h.cell == c).map(|h| h.cost).sum()
    }

    fn moved(&self, c: Cell, dir: usize) -> Cell {
        let (x, y) = c;
        let next = match dir {
            0 => (x, y + 1),
            1 => (x + 1, y),
            2 => (x, y.wrapping_sub(1)),
            _ => (x.wrapping_sub(1), y),
        };
        if self.in_bounds(next) {
            next
        } else {
            c
        }
    }
}

/// Builds the gridworld model with a uniform budget `psi` (zero at the
/// absorbing goal) and its Manhattan-distance Lyapunov candidate.
pub fn make_gridworld(spec: &GridSpec, psi: f64) -> Result<(Rcmdp, LyapunovFn)> {
    spec.validate()?;
    let n = spec.width * spec.height;
    let goal = spec.state(spec.goal);
    let mut nominal = vec![vec![vec![0.0; n]; GRID_ACTIONS]; n];
    let mut rewards = vec![vec![vec![0.0; n]; GRID_ACTIONS]; n];
    let mut costs = vec![vec![vec![0.0; n]; GRID_ACTIONS]; n];
    let mut budgets = vec![vec![psi; GRID_ACTIONS]; n];

    let entry_reward: Vec<f64> = (0..n)
        .map(|s| spec.step_reward + if s == goal { spec.goal_reward } else { 0.0 })
        .collect();
    let entry_cost: Vec<f64> = (0..n).map(|s| -spec.hazard_cost(spec.cell(s))).collect();

    for s in 0..n {
        for a in 0..GRID_ACTIONS {
            if s == goal {
                nominal[s][a][s] = 1.0;
                budgets[s][a] = 0.0;
                continue;
            }
            let c = spec.cell(s);
            let lateral = if a % 2 == 0 { [1, 3] } else { [0, 2] };
            let outcomes = [(a, 1.0 - 2.0 * spec.slip), (lateral[0], spec.slip), (lateral[1], spec.slip)];
            for (dir, prob) in outcomes {
                if prob > 0.0 {
                    nominal[s][a][spec.state(spec.moved(c, dir))] += prob;
                }
            }
            rewards[s][a].copy_from_slice(&entry_reward);
            costs[s][a].copy_from_slice(&entry_cost);
        }
    }
    let mut p0 = vec![0.0; n];
    p0[spec.state(spec.start)] = 1.0;
    let model = Rcmdp::new(rewards, costs, nominal, budgets, spec.gamma, spec.horizon, spec.beta, p0)?;

    let (gx, gy) = spec.goal;
    let lyap = (0..n)
        .map(|s| {
            let (x, y) = spec.cell(s);
            (x.abs_diff(gx) + y.abs_diff(gy)) as f64
        })
        .collect();
    Ok((model, LyapunovFn::new(lyap, goal)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InventorySpec {
    pub max_stock: usize,
    pub order_cap: usize,
    /// Distribution of demand over `0..=max_stock`.
    pub demand: Vec<f64>,
    pub holding_cost: f64,
    pub sale_price: f64,
    /// Raw constraint cost of a stockout (demand above available stock).
    pub stockout_cost: f64,
    pub target: usize,
    pub gamma: f64,
    #[serde(default)]
    pub beta: f64,
    #[serde(default)]
    pub initial_stock: usize,
    #[serde(default = "infinite")]
    pub horizon: Horizon,
}

impl InventorySpec {
    pub fn validate(&self) -> Result<()> {
        if self.max_stock == 0 || self.order_cap == 0 {
            return Err(Error::invalid("inventory", "max_stock and order_cap must be positive"));
        }
        if self.demand.len() != self.max_stock + 1 {
            return Err(Error::invalid("demand", format!("needs {} entries", self.max_stock + 1)));
        }
        let sum: f64 = self.demand.iter().sum();
        if self.demand.iter().any(|&p| p < 0.0) || (sum - 1.0).abs() > 1e-12 {
            return Err(Error::invalid("demand", "not a probability distribution"));
        }
        if self.target > self.max_stock || self.initial_stock > self.max_stock {
            return Err(Error::invalid("inventory", "target and initial stock must be in 0..=max_stock"));
        }
        Ok(())
    }
}

/// States are stock levels `0..=M`, actions order quantities `0..=order_cap`.
/// Stock above `M` is discarded. Rewards and costs on `(s, a, s′)` are
/// conditional means over the demands that lead to `s′`.
pub fn make_inventory(spec: &InventorySpec, psi: f64) -> Result<(Rcmdp, LyapunovFn)> {
    spec.validate()?;
    let n = spec.max_stock + 1;
    let na = spec.order_cap + 1;
    let mut nominal = vec![vec![vec![0.0; n]; na]; n];
    let mut rewards = vec![vec![vec![0.0; n]; na]; n];
    let mut costs = vec![vec![vec![0.0; n]; na]; n];
    for s in 0..n {
        for a in 0..na {
            let available = (s + a).min(spec.max_stock);
            for (demand, &q) in spec.demand.iter().enumerate() {
                if q == 0.0 {
                    continue;
                }
                let sold = demand.min(available);
                let next = available - sold;
                let r = spec.sale_price * sold as f64 - spec.holding_cost * next as f64;
                let d = if demand > available { -spec.stockout_cost } else { 0.0 };
                nominal[s][a][next] += q;
                rewards[s][a][next] += q * r;
                costs[s][a][next] += q * d;
            }
            for next in 0..n {
                let p = nominal[s][a][next];
                if p > 0.0 {
                    rewards[s][a][next] /= p;
                    costs[s][a][next] /= p;
                }
            }
        }
    }
    let mut p0 = vec![0.0; n];
    p0[spec.initial_stock] = 1.0;
    let model = Rcmdp::new(
        rewards,
        costs,
        nominal,
        vec![vec![psi; na]; n],
        spec.gamma,
        spec.horizon,
        spec.beta,
        p0,
    )?;
    let lyap = (0..n).map(|s| s.abs_diff(spec.target) as f64).collect();
    Ok((model, LyapunovFn::new(lyap, spec.target)))
}

/// Draws exactly `n_per_sa` transitions from the nominal kernel of every
/// `(s, a)`, in state-major order, copying rewards and raw costs.
pub fn generate_dataset<R: Rng + ?Sized>(
    true_model: &Rcmdp,
    n_per_sa: usize,
    rng: &mut R,
) -> Result<TransitionDataset> {
    if n_per_sa == 0 {
        return Err(Error::invalid("n_per_sa", "must be at least 1"));
    }
    let mut records = Vec::with_capacity(true_model.n_states * true_model.n_actions * n_per_sa);
    for s in 0..true_model.n_states {
        for a in 0..true_model.n_actions {
            let row = &true_model.nominal[s][a];
            for _ in 0..n_per_sa {
                let s_next = sample_index(row, rng);
                records.push(TransitionRecord {
                    s,
                    a,
                    s_next,
                    r: true_model.rewards[s][a][s_next],
                    d_cost: -true_model.constraint_rewards[s][a][s_next],
                });
            }
        }
    }
    TransitionDataset::new(true_model.n_states, true_model.n_actions, records)
}
