//! Dual minimization by the constrained ellipsoid method.
//!
//! The boundedness condition `Σλ + ΣΣθμ = 1` is enforced by eliminating the
//! last user's `λ`, which turns the equality into the inequality
//! `λ_K(x) ≥ 0` handled by feasibility cuts like every other sign
//! constraint. Working coordinates are rescaled so that every block is of
//! order one: `μ̂ = Nμ`, `β̂ = N P_max β`, `ν̂ = Nν`. Multipliers `μ_kn` of
//! users with `θ_k = 0` are fixed at zero, where the dual function is
//! smallest since it is nondecreasing in them.

use nalgebra::DVector;

use super::dual::{dual_function, subgradients, DualEvaluation, DualState};
use crate::matrix::UserSlotMatrix;
use crate::numerics::ellipsoid::{minimize, Ellipsoid, EllipsoidOptions, EllipsoidTermination, Query};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EllipsoidSearchOptions {
    /// Radius of the initial ball around the starting center.
    pub initial_radius: f64,
    pub diameter_tol: f64,
    pub gap_tol: f64,
    /// Step cap; `None` derives it from the dimension and tolerances.
    pub max_steps: Option<usize>,
}

impl Default for EllipsoidSearchOptions {
    fn default() -> Self {
        Self {
            initial_radius: 1e3,
            diameter_tol: 1e-9,
            gap_tol: 1e-13,
            max_steps: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EllipsoidSearchResult {
    pub dual: DualState,
    pub value: f64,
    pub lower_bound: f64,
    pub steps: usize,
    pub termination: EllipsoidTermination,
}

struct Layout {
    users: usize,
    slots: usize,
    /// Users with `θ_k > 0`, in order.
    mrr_users: Vec<usize>,
    p_max: f64,
}

impl Layout {
    fn dim(&self) -> usize {
        (self.users - 1) + self.mrr_users.len() * self.slots + 2 * self.slots
    }

    fn mu_offset(&self) -> usize {
        self.users - 1
    }

    fn beta_offset(&self) -> usize {
        self.mu_offset() + self.mrr_users.len() * self.slots
    }

    fn nu_offset(&self) -> usize {
        self.beta_offset() + self.slots
    }

    fn last_lambda(&self, x: &DVector<f64>, mrrs: &[f64]) -> f64 {
        let n = self.slots as f64;
        let mut v = 1.0 - x.rows(0, self.users - 1).sum();
        for (i, &k) in self.mrr_users.iter().enumerate() {
            let block = x.rows(self.mu_offset() + i * self.slots, self.slots);
            v -= mrrs[k] * block.sum() / n;
        }
        v
    }

    /// Gradient of `−λ_K(x)`.
    fn last_lambda_cut(&self, mrrs: &[f64]) -> DVector<f64> {
        let mut g = DVector::zeros(self.dim());
        let n = self.slots as f64;
        for j in 0..self.users - 1 {
            g[j] = 1.0;
        }
        for (i, &k) in self.mrr_users.iter().enumerate() {
            for s in 0..self.slots {
                g[self.mu_offset() + i * self.slots + s] = mrrs[k] / n;
            }
        }
        g
    }

    fn to_dual(&self, x: &DVector<f64>, mrrs: &[f64]) -> DualState {
        let n = self.slots as f64;
        let mut dual = DualState::zeros(self.users, self.slots);
        for j in 0..self.users - 1 {
            dual.lambda[j] = x[j];
        }
        dual.lambda[self.users - 1] = self.last_lambda(x, mrrs);
        let mut mu = UserSlotMatrix::zeros(self.users, self.slots);
        for (i, &k) in self.mrr_users.iter().enumerate() {
            for s in 0..self.slots {
                mu.set(k, s, x[self.mu_offset() + i * self.slots + s] / n);
            }
        }
        dual.mu = mu;
        for s in 0..self.slots {
            dual.beta[s] = x[self.beta_offset() + s] / (n * self.p_max);
            dual.nu[s] = x[self.nu_offset() + s] / n;
        }
        dual
    }

    fn reduced_subgradient(&self, eval: &DualEvaluation, dual: &DualState, mrrs: &[f64]) -> DVector<f64> {
        let n = self.slots as f64;
        let (sub, _) = subgradients(mrrs, self.p_max, dual, eval, f64::INFINITY);
        let last = sub.lambda[self.users - 1];
        let mut g = DVector::zeros(self.dim());
        for j in 0..self.users - 1 {
            g[j] = sub.lambda[j] - last;
        }
        for (i, &k) in self.mrr_users.iter().enumerate() {
            for s in 0..self.slots {
                g[self.mu_offset() + i * self.slots + s] = (sub.mu.get(k, s) - mrrs[k] * last) / n;
            }
        }
        for s in 0..self.slots {
            g[self.beta_offset() + s] = sub.beta[s] / (n * self.p_max);
            g[self.nu_offset() + s] = sub.nu[s] / n;
        }
        g
    }
}

pub fn ellipsoid_dual_search(
    gains: &UserSlotMatrix,
    mrrs: &[f64],
    p_max: f64,
    options: &EllipsoidSearchOptions,
) -> EllipsoidSearchResult {
    let layout = Layout {
        users: gains.users(),
        slots: gains.slots(),
        mrr_users: (0..gains.users()).filter(|&k| mrrs[k] > 0.0).collect(),
        p_max,
    };
    let m = layout.dim();
    let mut center = DVector::zeros(m);
    for j in 0..layout.users - 1 {
        center[j] = 1.0 / layout.users as f64;
    }
    for s in 0..layout.slots {
        center[layout.beta_offset() + s] = 1.0;
        center[layout.nu_offset() + s] = 1.0;
    }
    let initial = Ellipsoid::ball(center, options.initial_radius).expect("positive radius");
    let mut opts = EllipsoidOptions::for_problem(m, options.initial_radius, options.diameter_tol);
    opts.gap_tol = options.gap_tol;
    if let Some(cap) = options.max_steps {
        opts.max_steps = cap;
    }
    let last_cut = layout.last_lambda_cut(mrrs);

    let run = minimize(initial, &opts, |x| {
        let (mut worst_index, mut worst) = (None, 0.0);
        for (i, &v) in x.iter().enumerate() {
            if v < worst {
                worst = v;
                worst_index = Some(i);
            }
        }
        let last = layout.last_lambda(x, mrrs);
        if last < worst {
            return Query::Infeasible {
                cut: last_cut.clone(),
                violation: -last,
            };
        }
        if let Some(i) = worst_index {
            let mut cut = DVector::zeros(m);
            cut[i] = -1.0;
            return Query::Infeasible { cut, violation: -worst };
        }
        let dual = layout.to_dual(x, mrrs);
        let eval = dual_function(gains, mrrs, p_max, &dual, f64::INFINITY);
        Query::Objective {
            value: eval.value,
            subgradient: layout.reduced_subgradient(&eval, &dual, mrrs),
        }
    });

    let (dual, value) = match &run.best_point {
        Some(x) => (layout.to_dual(x, mrrs), run.best_value),
        None => {
            // Unreachable with the default start, which is feasible; fall back
            // to that start.
            let mut x = DVector::zeros(m);
            for j in 0..layout.users - 1 {
                x[j] = 1.0 / layout.users as f64;
            }
            for s in 0..layout.slots {
                x[layout.beta_offset() + s] = 1.0;
                x[layout.nu_offset() + s] = 1.0;
            }
            let dual = layout.to_dual(&x, mrrs);
            let value = dual_function(gains, mrrs, p_max, &dual, f64::INFINITY).value;
            (dual, value)
        }
    };
    EllipsoidSearchResult {
        dual,
        value,
        lower_bound: run.lower_bound,
        steps: run.steps,
        termination: run.termination,
    }
}

/// Dimension of the working space for `users`, `slots` and `mrr_users`
/// users with a positive ratio.
pub fn search_dimension(users: usize, slots: usize, mrr_users: usize) -> usize {
    (users - 1) + mrr_users * slots + 2 * slots
}
