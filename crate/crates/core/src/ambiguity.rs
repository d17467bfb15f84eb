//! L1 ambiguity balls and the exact worst-case linear minimization over them.
//!
//! For `min pᵀv` subject to `p ∈ Δ`, `‖p − p̄‖₁ ≤ ψ` the optimum moves
//! `e = min(ψ/2, 1 − p̄[i*])` mass onto the lowest-valued state `i*` and
//! takes the same amount away from the highest-valued states first.
//! Ties are broken towards the lowest state index.

use smallvec::SmallVec;

use crate::error::{check_len, Error, Result};
use crate::model::{MAX_BUDGET, SIMPLEX_TOL};

type Buf = SmallVec<[f64; 32]>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct L1Ball<'a> {
    center: &'a [f64],
    radius: f64,
}

impl<'a> L1Ball<'a> {
    pub fn new(center: &'a [f64], radius: f64) -> Result<Self> {
        if center.is_empty() {
            return Err(Error::invalid("center", "empty distribution"));
        }
        let sum: f64 = center.iter().sum();
        if center.iter().any(|&p| p < 0.0 || !p.is_finite()) || (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::invalid("center", "not a probability distribution"));
        }
        if !(0.0..=MAX_BUDGET).contains(&radius) {
            return Err(Error::invalid("radius", format!("{radius} outside [0, 2]")));
        }
        Ok(L1Ball { center, radius })
    }

    /// Skips validation; the caller guarantees a validated model.
    pub(crate) fn new_unchecked(center: &'a [f64], radius: f64) -> Self {
        L1Ball { center, radius }
    }

    pub fn center(&self) -> &'a [f64] {
        self.center
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn len(&self) -> usize {
        self.center.len()
    }

    pub fn is_empty(&self) -> bool {
        self.center.is_empty()
    }

    /// Minimizing distribution and its objective value.
    pub fn worst_case_response(&self, v: &[f64]) -> Result<(Vec<f64>, f64)> {
        check_len("worst_case_response", self.center.len(), v.len())?;
        let mut p = Buf::new();
        let value = self.minimize_into(v, &mut p);
        Ok((p.into_vec(), value))
    }

    pub fn worst_case_value(&self, v: &[f64]) -> Result<f64> {
        check_len("worst_case_value", self.center.len(), v.len())?;
        Ok(self.value_unchecked(v))
    }

    /// Same as [`L1Ball::worst_case_value`] without the length check.
    #[inline]
    pub(crate) fn value_unchecked(&self, v: &[f64]) -> f64 {
        let mut p = Buf::new();
        self.minimize_into(v, &mut p)
    }

    pub(crate) fn response_unchecked(&self, v: &[f64]) -> Buf {
        let mut p = Buf::new();
        self.minimize_into(v, &mut p);
        p
    }

    fn minimize_into(&self, v: &[f64], p: &mut Buf) -> f64 {
        let n = self.center.len();
        p.clear();
        p.extend_from_slice(self.center);

        let mut best = 0;
        for i in 1..n {
            if v[i] < v[best] {
                best = i;
            }
        }
        let mut excess = (0.5 * self.radius).min(1.0 - self.center[best]);
        if excess > 0.0 {
            p[best] += excess;
            let mut order: SmallVec<[usize; 32]> = (0..n).filter(|&i| i != best).collect();
            order.sort_by(|&i, &j| v[j].total_cmp(&v[i]).then(i.cmp(&j)));
            for i in order {
                if excess <= 0.0 {
                    break;
                }
                let take = p[i].min(excess);
                p[i] -= take;
                excess -= take;
            }
            let sum: f64 = p.iter().sum();
            if (sum - 1.0).abs() > SIMPLEX_TOL {
                p.iter_mut().for_each(|x| *x /= sum);
            }
        }
        p.iter().zip(v).map(|(pi, vi)| pi * vi).sum()
    }
}

/// Free-function form of [`L1Ball::worst_case_response`].
pub fn worst_case_response(ball: &L1Ball<'_>, v: &[f64]) -> Result<(Vec<f64>, f64)> {
    ball.worst_case_response(v)
}

pub fn worst_case_value(ball: &L1Ball<'_>, v: &[f64]) -> Result<f64> {
    ball.worst_case_value(v)
}
