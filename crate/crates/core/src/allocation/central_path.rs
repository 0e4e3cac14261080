//! Primal-side interior-point route to the allocation optimum.
//!
//! Solves
//!
//! ```text
//! maximize η
//! s.t.  (1/N) Σ_n ρ_kn(α_kn, x_kn) ≥ η            for every k
//!       ρ_kn(α_kn, x_kn) ≥ θ_k η                    for every k, n with θ_k > 0
//!       Σ_k α_kn ≤ 1,  Σ_k x_kn ≤ 1,  α, x ≥ 0        for every n
//! ```
//!
//! with `x = p / P_max`, `G = g P_max` and `ρ = α log2(1 + xG/α)`, by a
//! log-barrier path. The Newton system couples the slots only through `η`
//! and the `K` average-throughput rows, so each Newton step costs `O(N K³)`.
//!
//! On the central path the multipliers are `1/(t · slack)`, and stationarity
//! in `η` gives `Σλ + ΣΣθμ = 1` exactly, so they are a point of the dual
//! feasible set whose value bounds the optimum.

use std::f64::consts::LN_2;

use nalgebra::{DMatrix, DVector};

use super::dual::{dual_function, DualState};
use crate::matrix::UserSlotMatrix;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CentralPathOptions {
    pub t_factor: f64,
    /// Stop when `(number of constraints)/t ≤ gap_tol · η`.
    pub gap_tol: f64,
    /// Once `−tη` is large, rounding in the barrier value and the gradient
    /// stalls the Newton iteration before `gap_tol` is reached. A stall is
    /// accepted as convergence if the last center satisfies this bound.
    pub accept_tol: f64,
    pub newton_tol: f64,
    pub max_newton_per_center: usize,
    pub max_outer: usize,
}

impl Default for CentralPathOptions {
    fn default() -> Self {
        Self {
            t_factor: 10.0,
            gap_tol: 1e-9,
            accept_tol: 1e-6,
            newton_tol: 1e-10,
            max_newton_per_center: 100,
            max_outer: 30,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CentralPathResult {
    pub eta: f64,
    pub bandwidth: UserSlotMatrix,
    /// Watts.
    pub power: UserSlotMatrix,
    /// Multipliers read off the center with the smallest dual value; late
    /// centers give better primal points but noisier multipliers, since the
    /// slacks they are computed from lose relative accuracy.
    pub dual: DualState,
    /// Dual function value at `dual`.
    pub dual_bound: f64,
    pub newton_steps: usize,
    pub converged: bool,
}

#[derive(Clone, Copy)]
struct RateDerivatives {
    value: f64,
    d_alpha: f64,
    d_power: f64,
    /// `∇²ρ = curvature · v vᵀ`, `v = (−x/α, 1)`.
    curvature: f64,
    ratio: f64,
}

fn rate(alpha: f64, x: f64, big_g: f64) -> RateDerivatives {
    let s = x * big_g / alpha;
    let l = s.ln_1p() / LN_2;
    let inv = 1.0 / (LN_2 * (1.0 + s));
    RateDerivatives {
        value: alpha * l,
        d_alpha: l - s * inv,
        d_power: big_g * inv,
        curvature: -big_g * big_g * inv / (alpha * (1.0 + s)),
        ratio: x / alpha,
    }
}

struct Problem<'a> {
    k: usize,
    n: usize,
    big_g: &'a UserSlotMatrix,
    mrrs: &'a [f64],
    constraints: f64,
}

/// Iterate: `a[k][n]`, `x[k][n]` stored as `K × N`, plus `η`.
#[derive(Clone)]
struct Point {
    a: UserSlotMatrix,
    x: UserSlotMatrix,
    eta: f64,
}

struct Slacks {
    avg: Vec<f64>,
    mrr: UserSlotMatrix,
    band: Vec<f64>,
    pow: Vec<f64>,
}

impl Problem<'_> {
    fn slacks(&self, p: &Point) -> Option<(Slacks, UserSlotMatrix)> {
        let (k_users, n_slots) = (self.k, self.n);
        let mut rates = UserSlotMatrix::zeros(k_users, n_slots);
        for k in 0..k_users {
            for n in 0..n_slots {
                let (a, x) = (p.a.get(k, n), p.x.get(k, n));
                if !(a > 0.0 && x > 0.0) {
                    return None;
                }
                rates.set(k, n, rate(a, x, self.big_g.get(k, n)).value);
            }
        }
        let mut avg = vec![0.0; k_users];
        let mut mrr = UserSlotMatrix::zeros(k_users, n_slots);
        for k in 0..k_users {
            avg[k] = rates.row(k).iter().sum::<f64>() / n_slots as f64 - p.eta;
            if !(avg[k] > 0.0) {
                return None;
            }
            if self.mrrs[k] > 0.0 {
                for n in 0..n_slots {
                    let s = rates.get(k, n) - self.mrrs[k] * p.eta;
                    if !(s > 0.0) {
                        return None;
                    }
                    mrr.set(k, n, s);
                }
            }
        }
        let mut band = vec![0.0; n_slots];
        let mut pow = vec![0.0; n_slots];
        for n in 0..n_slots {
            band[n] = 1.0 - p.a.column_sum(n);
            pow[n] = 1.0 - p.x.column_sum(n);
            if !(band[n] > 0.0 && pow[n] > 0.0) {
                return None;
            }
        }
        Some((Slacks { avg, mrr, band, pow }, rates))
    }

    fn barrier(&self, p: &Point, t: f64) -> Option<f64> {
        let (s, _) = self.slacks(p)?;
        let mut v = -t * p.eta;
        v -= s.avg.iter().map(|c| c.ln()).sum::<f64>();
        for k in 0..self.k {
            if self.mrrs[k] > 0.0 {
                v -= s.mrr.row(k).iter().map(|c| c.ln()).sum::<f64>();
            }
        }
        v -= s.band.iter().chain(&s.pow).map(|c| c.ln()).sum::<f64>();
        v -= p.a.iter().chain(p.x.iter()).map(|c| c.ln()).sum::<f64>();
        Some(v)
    }

    /// Newton direction and decrement at a strictly feasible point.
    ///
    /// The rank-one Hessian terms of the throughput rows are split off with
    /// auxiliary unknowns `w_k = ∇c_kᵀd / c_k²` and `ω_kn = ∇m_knᵀd / m_kn²`,
    /// giving a quasi-definite system whose slot blocks are eliminated
    /// locally, leaving a dense `(K+1)` system in `(dη, w)`. Eliminating the
    /// rank-one terms directly instead subtracts quantities of order `t²`
    /// and loses the step far along the path.
    fn newton(&self, p: &Point, t: f64) -> Option<(UserSlotMatrix, UserSlotMatrix, f64, f64)> {
        let (k_users, n_slots) = (self.k, self.n);
        let nf = n_slots as f64;
        let (s, _) = self.slacks(p)?;
        let active: Vec<usize> = (0..k_users).filter(|&k| self.mrrs[k] > 0.0).collect();
        let dim = 2 * k_users;
        let local = dim + active.len();
        let outer = k_users + 1;

        let mut grad_eta = -t;
        for k in 0..k_users {
            grad_eta += 1.0 / s.avg[k];
            for n in 0..n_slots {
                if self.mrrs[k] > 0.0 {
                    grad_eta += self.mrrs[k] / s.mrr.get(k, n);
                }
            }
        }
        // Outer system in y = (dη, w_0..w_{K−1}).
        let mut schur = DMatrix::<f64>::zeros(outer, outer);
        for k in 0..k_users {
            schur[(0, 1 + k)] = -1.0;
            schur[(1 + k, 0)] = -1.0;
            schur[(1 + k, 1 + k)] = -s.avg[k] * s.avg[k];
        }
        let mut outer_rhs = DVector::<f64>::zeros(outer);
        outer_rhs[0] = -grad_eta;

        let mut grad_x: Vec<DVector<f64>> = Vec::with_capacity(n_slots);
        let mut solved_r: Vec<DVector<f64>> = Vec::with_capacity(n_slots);
        let mut solved_c: Vec<DMatrix<f64>> = Vec::with_capacity(n_slots);
        for n in 0..n_slots {
            let mut g = DVector::zeros(dim);
            let mut lhs = DMatrix::zeros(local, local);
            let mut coupling = DMatrix::zeros(local, outer);
            let band_inv = 1.0 / s.band[n];
            let pow_inv = 1.0 / s.pow[n];
            for k in 0..k_users {
                let (ia, ix) = (k, k_users + k);
                let (a, x) = (p.a.get(k, n), p.x.get(k, n));
                let r = rate(a, x, self.big_g.get(k, n));
                let mut w = 1.0 / (s.avg[k] * nf);
                coupling[(ia, 1 + k)] = r.d_alpha / nf;
                coupling[(ix, 1 + k)] = r.d_power / nf;
                if let Some(j) = active.iter().position(|&u| u == k) {
                    let m = s.mrr.get(k, n);
                    w += 1.0 / m;
                    let row = dim + j;
                    lhs[(ia, row)] = r.d_alpha;
                    lhs[(ix, row)] = r.d_power;
                    lhs[(row, ia)] = r.d_alpha;
                    lhs[(row, ix)] = r.d_power;
                    lhs[(row, row)] = -m * m;
                    coupling[(row, 0)] = -self.mrrs[k];
                }
                g[ia] += -w * r.d_alpha + band_inv - 1.0 / a;
                g[ix] += -w * r.d_power + pow_inv - 1.0 / x;
                let c = -w * r.curvature;
                lhs[(ia, ia)] += c * r.ratio * r.ratio + 1.0 / (a * a);
                lhs[(ia, ix)] -= c * r.ratio;
                lhs[(ix, ia)] -= c * r.ratio;
                lhs[(ix, ix)] += c + 1.0 / (x * x);
            }
            for i in 0..k_users {
                for j in 0..k_users {
                    lhs[(i, j)] += band_inv * band_inv;
                    lhs[(k_users + i, k_users + j)] += pow_inv * pow_inv;
                }
            }
            // Symmetric diagonal scaling: the entries span many orders of
            // magnitude once some shares approach zero.
            let scale = DVector::from_fn(local, |i, _| {
                let d = lhs[(i, i)].abs();
                if d > 0.0 {
                    1.0 / d.sqrt()
                } else {
                    1.0
                }
            });
            for i in 0..local {
                for j in 0..local {
                    lhs[(i, j)] *= scale[i] * scale[j];
                }
            }
            let lu = lhs.full_piv_lu();
            let mut rhs = DVector::zeros(local);
            rhs.rows_mut(0, dim).copy_from(&(-&g));
            let mut lr = lu.solve(&rhs.component_mul(&scale))?;
            lr.component_mul_assign(&scale);
            let mut lc = lu.solve(&DMatrix::from_fn(local, outer, |i, j| coupling[(i, j)] * scale[i]))?;
            for i in 0..local {
                for j in 0..outer {
                    lc[(i, j)] *= scale[i];
                }
            }
            schur -= coupling.transpose() * &lc;
            outer_rhs -= coupling.transpose() * &lr;
            grad_x.push(g);
            solved_r.push(lr);
            solved_c.push(lc);
        }
        let y = schur.full_piv_lu().solve(&outer_rhs)?;
        if !y.iter().all(|v| v.is_finite()) {
            return None;
        }
        let d_eta = y[0];
        let mut da = UserSlotMatrix::zeros(k_users, n_slots);
        let mut dx = UserSlotMatrix::zeros(k_users, n_slots);
        let mut decrement = -grad_eta * d_eta;
        for n in 0..n_slots {
            let d = &solved_r[n] - &solved_c[n] * &y;
            decrement -= grad_x[n].dot(&d.rows(0, dim));
            for k in 0..k_users {
                da.set(k, n, d[k]);
                dx.set(k, n, d[k_users + k]);
            }
        }
        if !(decrement >= 0.0) {
            return None;
        }
        Some((da, dx, d_eta, decrement))
    }

    /// Minimizes the barrier over `η` alone, returning the new value.
    ///
    /// Without this, Newton steps can leave `η` pressed against the
    /// throughput rows (`Σ 1/c ≫ t`); the quadratic model is then only valid
    /// within a region of width `O(√c)` and progress stalls because the
    /// barrier is not self-concordant in the rate terms. At the minimizer
    /// every throughput slack is at least `1/t`.
    fn fit_eta(&self, p: &mut Point, t: f64) -> Option<f64> {
        let (_, rates) = self.slacks(p)?;
        let nf = self.n as f64;
        let mut caps: Vec<(f64, f64)> = (0..self.k)
            .map(|k| (rates.row(k).iter().sum::<f64>() / nf, 1.0))
            .collect();
        for k in 0..self.k {
            if self.mrrs[k] > 0.0 {
                caps.extend(rates.row(k).iter().map(|&r| (r / self.mrrs[k], self.mrrs[k])));
            }
        }
        // Each term is θ/(θ(cap − η)) = 1/(cap − η); the derivative
        // −t + Σ 1/(cap − η) is convex and increasing, so Newton started
        // right of the root converges monotonically.
        let upper = caps.iter().map(|c| c.0).fold(f64::INFINITY, f64::min);
        let deriv = |eta: f64| -> (f64, f64) {
            caps.iter().fold((-t, 0.0), |(d1, d2), &(cap, _)| {
                let inv = 1.0 / (cap - eta);
                (d1 + inv, d2 + inv * inv)
            })
        };
        let mut eta = upper - 0.5 / t;
        if !(eta < upper) {
            return None;
        }
        for _ in 0..100 {
            let (d1, d2) = deriv(eta);
            let next = eta - d1 / d2;
            if !(next < upper) || (next - eta).abs() <= 1e-15 * eta.abs().max(1.0) {
                break;
            }
            eta = next;
        }
        let old = p.eta;
        let before = self.barrier(p, t)?;
        p.eta = eta;
        match self.barrier(p, t) {
            Some(v) if v <= before => Some(v),
            _ => {
                p.eta = old;
                None
            }
        }
    }

    fn center(&self, p: &mut Point, t: f64, opts: &CentralPathOptions) -> Option<usize> {
        let mut phi = self.barrier(p, t)?;
        if let Some(v) = self.fit_eta(p, t) {
            phi = v;
        }
        let mut steps = 0;
        while steps < opts.max_newton_per_center {
            let (da, dx, d_eta, decrement) = self.newton(p, t)?;
            let before = self.slacks(p)?.0;
            if decrement / 2.0 <= opts.newton_tol {
                break;
            }
            let mut step = 1.0;
            let mut accepted = false;
            for _ in 0..80 {
                let trial = Point {
                    a: combine(&p.a, &da, step),
                    x: combine(&p.x, &dx, step),
                    eta: p.eta + step * d_eta,
                };
                if !self.keeps_distance(&before, &trial, p) {
                    step *= 0.5;
                    continue;
                }
                if let Some(v) = self.barrier(&trial, t) {
                    // Close to the center the Armijo decrease drops below the
                    // rounding error of `phi`; full Newton steps are taken there.
                    if v <= phi - 0.25 * step * decrement || (step == 1.0 && decrement < 1e-4) {
                        *p = trial;
                        phi = self.fit_eta(p, t).unwrap_or(v);
                        accepted = true;
                        break;
                    }
                }
                step *= 0.5;
            }
            steps += 1;
            if !accepted {
                // No descent along a direction with a sizable decrement means
                // the step itself is unreliable.
                if decrement > 1e-3 {
                    return None;
                }
                break;
            }
        }
        Some(steps)
    }

    /// Fraction-to-boundary guard: no slack may shrink by more than
    /// `MAX_SHRINK` in one step. Armijo alone accepts points pressed against
    /// a wall, from which Newton recovers only slowly because the barrier is
    /// not self-concordant in the rate terms.
    fn keeps_distance(&self, before: &Slacks, trial: &Point, p: &Point) -> bool {
        const MAX_SHRINK: f64 = 1e-2;
        let Some((after, _)) = self.slacks(trial) else {
            return false;
        };
        let ok = |old: f64, new: f64| new >= MAX_SHRINK * old;
        before.avg.iter().zip(&after.avg).all(|(&o, &n)| ok(o, n))
            && before.mrr.iter().zip(after.mrr.iter()).all(|(o, n)| ok(o, n))
            && before.band.iter().zip(&after.band).all(|(&o, &n)| ok(o, n))
            && before.pow.iter().zip(&after.pow).all(|(&o, &n)| ok(o, n))
            && p.a.iter().zip(trial.a.iter()).all(|(o, n)| ok(o, n))
            && p.x.iter().zip(trial.x.iter()).all(|(o, n)| ok(o, n))
    }

    fn duals(&self, p: &Point, t: f64, p_max: f64) -> DualState {
        let (s, _) = self.slacks(p).expect("iterate stays strictly feasible");
        let mut dual = DualState::zeros(self.k, self.n);
        for k in 0..self.k {
            dual.lambda[k] = 1.0 / (t * s.avg[k]);
            if self.mrrs[k] > 0.0 {
                for n in 0..self.n {
                    dual.mu.set(k, n, 1.0 / (t * s.mrr.get(k, n)));
                }
            }
        }
        for n in 0..self.n {
            dual.nu[n] = 1.0 / (t * s.band[n]);
            dual.beta[n] = 1.0 / (t * s.pow[n] * p_max);
        }
        dual
    }
}

fn combine(base: &UserSlotMatrix, dir: &UserSlotMatrix, step: f64) -> UserSlotMatrix {
    UserSlotMatrix::from_fn(base.users(), base.slots(), |k, n| base.get(k, n) + step * dir.get(k, n))
}

/// `gains` are gain-to-noise ratios `g_kn`; powers are returned in watts.
pub fn central_path_allocation(
    gains: &UserSlotMatrix,
    mrrs: &[f64],
    p_max: f64,
    options: &CentralPathOptions,
) -> CentralPathResult {
    let (k_users, n_slots) = (gains.users(), gains.slots());
    let big_g = UserSlotMatrix::from_fn(k_users, n_slots, |k, n| gains.get(k, n) * p_max);
    let mrr_rows = mrrs.iter().filter(|&&t| t > 0.0).count() * n_slots;
    let problem = Problem {
        k: k_users,
        n: n_slots,
        big_g: &big_g,
        mrrs,
        constraints: (k_users + mrr_rows + 2 * n_slots + 2 * k_users * n_slots) as f64,
    };

    let share = 1.0 / (k_users as f64 + 1.0);
    let mut point = Point {
        a: UserSlotMatrix::filled(k_users, n_slots, share),
        x: UserSlotMatrix::filled(k_users, n_slots, share),
        eta: 0.0,
    };
    let rates = UserSlotMatrix::from_fn(k_users, n_slots, |k, n| rate(share, share, big_g.get(k, n)).value);
    let start = crate::scenario::achievable_eta(&rates, mrrs);
    point.eta = start - 0.5 * start.abs().max(1e-12);

    let mut t = problem.constraints / start.abs().max(1e-12);
    let mut steps = 0;
    let mut converged = false;
    // Last point known to be centered, with its parameter.
    let mut centered: Option<(Point, f64)> = None;
    let mut best: Option<(DualState, f64)> = None;
    for _ in 0..options.max_outer {
        let mut trial = point.clone();
        match problem.center(&mut trial, t, options) {
            Some(s) => steps += s,
            // Far along the path the Newton system loses accuracy to
            // cancellation; keep the previous center.
            None => break,
        }
        point = trial;
        centered = Some((point.clone(), t));
        let dual = problem.duals(&point, t, p_max);
        let weight = dual.eta_weight(mrrs);
        let dual = if weight > 0.0 { dual.scaled(weight) } else { dual };
        let bound = dual_function(gains, mrrs, p_max, &dual, f64::INFINITY).value;
        if best.as_ref().is_none_or(|b| bound < b.1) {
            best = Some((dual, bound));
        }
        if problem.constraints / t <= options.gap_tol * point.eta.abs().max(1e-12) {
            converged = true;
            break;
        }
        t *= options.t_factor;
    }
    if let Some((p, last_t)) = centered {
        point = p;
        t = last_t;
        converged |= problem.constraints / t <= options.accept_tol * point.eta.abs().max(1e-12);
    }

    let (dual, dual_bound) = best.unwrap_or_else(|| {
        let dual = problem.duals(&point, t, p_max);
        let weight = dual.eta_weight(mrrs);
        let dual = if weight > 0.0 { dual.scaled(weight) } else { dual };
        let bound = dual_function(gains, mrrs, p_max, &dual, f64::INFINITY).value;
        (dual, bound)
    });
    CentralPathResult {
        eta: point.eta,
        power: UserSlotMatrix::from_fn(k_users, n_slots, |k, n| point.x.get(k, n) * p_max),
        bandwidth: point.a,
        dual,
        dual_bound,
        newton_steps: steps,
        converged,
    }
}
