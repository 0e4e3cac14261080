//! Brute-force and generic-method reference solvers for small instances.
//!
//! Nothing here calls into the allocation, trajectory or scenario rate code:
//! channel gains and rates are recomputed from the raw scenario fields so
//! that a shared bug cannot make a solver agree with its own check.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scenario::{Allocation, Scenario};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleMethod {
    Grid,
    ProjectedGradient,
    Barrier,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub value: f64,
    /// Flattened decision vector: `(α, p)` row-major for allocations,
    /// `(x, y)` per waypoint for trajectories.
    pub argument: Vec<f64>,
    pub method: OracleMethod,
    /// Grid step, or final smoothing temperature.
    pub resolution: f64,
    /// Norm of the projected-gradient step at the end (0 for grids).
    pub stationarity: f64,
    pub converged: bool,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("instance too large for the oracle: {0}")]
    TooLarge(String),
    #[error("no feasible grid point")]
    EmptyGrid,
    #[error("shape mismatch: {0}")]
    Shape(String),
}

fn snr_per_watt(scenario: &Scenario, q: [f64; 2], k: usize) -> f64 {
    let uav = scenario.uav();
    let rho0 = 10f64.powf(uav.ref_gain_db / 10.0);
    let n0 = 10f64.powf(uav.noise_psd_dbm_hz / 10.0) * 1e-3;
    let w = scenario.users()[k].position;
    let d2 = uav.altitude * uav.altitude + (q[0] - w[0]).powi(2) + (q[1] - w[1]).powi(2);
    rho0 / d2 / (uav.bandwidth * n0)
}

fn log2_1p(x: f64) -> f64 {
    x.ln_1p() / std::f64::consts::LN_2
}

/// Euclidean projection onto `{x ≥ 0, Σx ≤ 1}`.
fn project_capped_simplex(v: &mut [f64]) {
    let clipped: f64 = v.iter().map(|x| x.max(0.0)).sum();
    if clipped <= 1.0 {
        v.iter_mut().for_each(|x| *x = x.max(0.0));
        return;
    }
    let mut sorted: Vec<f64> = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut shift = 0.0;
    for (i, &s) in sorted.iter().enumerate() {
        cum += s;
        let candidate = (cum - 1.0) / (i + 1) as f64;
        if s - candidate > 0.0 {
            shift = candidate;
        }
    }
    v.iter_mut().for_each(|x| *x = (*x - shift).max(0.0));
}

struct SmoothMaxMin<'a> {
    k: usize,
    n: usize,
    /// `g · P_max` per user-slot.
    snr: Vec<f64>,
    mrrs: &'a [f64],
}

impl SmoothMaxMin<'_> {
    /// Terms whose minimum is the max-min objective, with gradients.
    fn terms(&self, z: &[f64]) -> Vec<(f64, Vec<(usize, f64)>)> {
        let (k_users, n_slots) = (self.k, self.n);
        let kn = k_users * n_slots;
        let mut rate = vec![0.0; kn];
        let mut grad = vec![(0.0, 0.0); kn];
        for i in 0..kn {
            // The α-derivative diverges at α = 0; a tiny floor keeps it finite.
            let (a, x) = (z[i].max(1e-30), z[kn + i]);
            let s = x * self.snr[i] / a;
            rate[i] = a * log2_1p(s);
            let inv = 1.0 / (std::f64::consts::LN_2 * (1.0 + s));
            grad[i] = (log2_1p(s) - s * inv, self.snr[i] * inv);
        }
        let mut out = Vec::new();
        for k in 0..k_users {
            let mut g = Vec::with_capacity(2 * n_slots);
            let mut v = 0.0;
            for n in 0..n_slots {
                let i = k * n_slots + n;
                v += rate[i] / n_slots as f64;
                g.push((i, grad[i].0 / n_slots as f64));
                g.push((kn + i, grad[i].1 / n_slots as f64));
            }
            out.push((v, g));
        }
        for k in 0..k_users {
            let theta = self.mrrs[k];
            if theta > 0.0 {
                for n in 0..n_slots {
                    let i = k * n_slots + n;
                    out.push((
                        rate[i] / theta,
                        vec![(i, grad[i].0 / theta), (kn + i, grad[i].1 / theta)],
                    ));
                }
            }
        }
        out
    }

    fn hard_min(&self, z: &[f64]) -> f64 {
        self.terms(z).iter().map(|t| t.0).fold(f64::INFINITY, f64::min)
    }

    /// `−τ log Σ exp(−v_i/τ)` and its gradient.
    fn soft(&self, z: &[f64], tau: f64) -> (f64, Vec<f64>) {
        let terms = self.terms(z);
        let m = terms.iter().map(|t| t.0).fold(f64::INFINITY, f64::min);
        let weights: Vec<f64> = terms.iter().map(|t| (-(t.0 - m) / tau).exp()).collect();
        let total: f64 = weights.iter().sum();
        let mut grad = vec![0.0; z.len()];
        for (t, w) in terms.iter().zip(&weights) {
            for &(i, d) in &t.1 {
                grad[i] += w / total * d;
            }
        }
        (m - tau * total.ln(), grad)
    }

    fn project(&self, z: &mut [f64]) {
        let (k_users, n_slots) = (self.k, self.n);
        let kn = k_users * n_slots;
        let mut buf = vec![0.0; k_users];
        for block in [0, kn] {
            for n in 0..n_slots {
                for k in 0..k_users {
                    buf[k] = z[block + k * n_slots + n];
                }
                project_capped_simplex(&mut buf);
                for k in 0..k_users {
                    z[block + k * n_slots + n] = buf[k];
                }
            }
        }
    }
}

/// Max-min allocation by accelerated projected-gradient ascent on a
/// soft-min of `{R_k} ∪ {r_kn / θ_k : θ_k > 0}` with a decreasing smoothing
/// temperature. The reported value is the hard minimum at the final point.
pub fn oracle_allocation(
    scenario: &Scenario,
    trajectory: &crate::scenario::Trajectory,
    mrrs: &[f64],
) -> Result<OracleResult, OracleError> {
    let k_users = scenario.num_users();
    let n_slots = trajectory.len();
    if k_users > 2 || n_slots > 8 {
        return Err(OracleError::TooLarge(format!("K = {k_users}, N = {n_slots}")));
    }
    if mrrs.len() != k_users {
        return Err(OracleError::Shape(format!("{} MRRs for {k_users} users", mrrs.len())));
    }
    let p_max = scenario.uav().p_max;
    let mut snr = Vec::with_capacity(k_users * n_slots);
    for k in 0..k_users {
        for n in 0..n_slots {
            snr.push(snr_per_watt(scenario, trajectory.waypoints[n], k) * p_max);
        }
    }
    let f = SmoothMaxMin {
        k: k_users,
        n: n_slots,
        snr,
        mrrs,
    };
    let kn = k_users * n_slots;
    let share = 1.0 / k_users as f64;
    let mut z = vec![share; 2 * kn];

    let mut stationarity = f64::INFINITY;
    let mut converged = false;
    let schedule = [1.0, 1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7];
    for &tau in &schedule {
        let (s, c) = accelerated_ascent(&f, &mut z, tau, 40_000, 1e-11);
        stationarity = s;
        converged = c;
    }
    let mut value = f.hard_min(&z);
    let mut method = OracleMethod::ProjectedGradient;
    let mut resolution = *schedule.last().expect("non-empty");
    // Smoothing converges slowly when the optimum leaves pairs unserved
    // (the rate's α-curvature blows up at α = 0); the barrier path does not.
    // Both points are feasible, so the better one is reported.
    if let Some((v, zb, gap)) = barrier_path(&f) {
        if v > value {
            value = v;
            z = zb;
            method = OracleMethod::Barrier;
            resolution = gap;
            stationarity = 0.0;
            converged = true;
        }
    }
    let mut argument = z;
    for v in &mut argument[kn..] {
        *v *= p_max;
    }
    Ok(OracleResult {
        value,
        argument,
        method,
        resolution,
        stationarity,
        converged,
    })
}

/// `a log2(1 + s x / a)` with its gradient and Hessian in `(a, x)`.
fn perspective_rate(a: f64, x: f64, s: f64) -> (f64, [f64; 2], [f64; 3]) {
    let ln2 = std::f64::consts::LN_2;
    let u = s * x / a;
    let v = a * log2_1p(u);
    let g = [log2_1p(u) - u / ((1.0 + u) * ln2), s / ((1.0 + u) * ln2)];
    let c = 1.0 / (a * ln2 * (1.0 + u) * (1.0 + u));
    // [h_aa, h_ax, h_xx]
    (v, g, [-u * u * c, s * u * c, -s * s * c])
}

/// Log-barrier path on the epigraph form: maximize `η` subject to
/// `R_k ≥ η`, `r_kn ≥ θ_k η`, `α, x > 0`, per-slot sums `< 1` (power in
/// units of `P_max`). Damped Newton on each centering problem. Returns the
/// hard-min value at the final point, the point and the final gap bound.
fn barrier_path(f: &SmoothMaxMin) -> Option<(f64, Vec<f64>, f64)> {
    use nalgebra::{DMatrix, DVector};
    let (k_users, n_slots) = (f.k, f.n);
    let kn = k_users * n_slots;
    let dim = 2 * kn + 1;
    let eta_ix = 2 * kn;
    let share = 0.5 / k_users as f64;
    let mut z = vec![share; dim];
    z[eta_ix] = 0.0;
    z[eta_ix] = 0.5 * f.hard_min(&z[..2 * kn]);
    if !(z[eta_ix] > 0.0) {
        return None;
    }
    let ratio_rows: usize = f.mrrs.iter().filter(|&&t| t > 0.0).count() * n_slots;
    let m = (k_users + ratio_rows + 2 * kn + 2 * n_slots) as f64;

    // Barrier value, or +∞ outside the domain.
    let phi = |z: &[f64], t: f64| -> f64 {
        let mut total = -t * z[eta_ix];
        let mut push = |g: f64| {
            if g > 0.0 {
                total -= g.ln();
                true
            } else {
                total = f64::INFINITY;
                false
            }
        };
        for &v in &z[..2 * kn] {
            if !push(v) {
                return f64::INFINITY;
            }
        }
        for block in [0, kn] {
            for n in 0..n_slots {
                let used: f64 = (0..k_users).map(|k| z[block + k * n_slots + n]).sum();
                if !push(1.0 - used) {
                    return f64::INFINITY;
                }
            }
        }
        for k in 0..k_users {
            let mut avg = 0.0;
            for n in 0..n_slots {
                let i = k * n_slots + n;
                let r = z[i] * log2_1p(z[kn + i] * f.snr[i] / z[i]);
                avg += r / n_slots as f64;
                if f.mrrs[k] > 0.0 && !push(r - f.mrrs[k] * z[eta_ix]) {
                    return f64::INFINITY;
                }
            }
            if !push(avg - z[eta_ix]) {
                return f64::INFINITY;
            }
        }
        total
    };

    let mut t = 1.0 / z[eta_ix];
    let mut newton_total = 0;
    loop {
        for _ in 0..200 {
            let mut grad = DVector::<f64>::zeros(dim);
            let mut hess = DMatrix::<f64>::zeros(dim, dim);
            grad[eta_ix] = -t;
            // Linear barrier terms.
            for i in 0..2 * kn {
                grad[i] -= 1.0 / z[i];
                hess[(i, i)] += 1.0 / (z[i] * z[i]);
            }
            for block in [0, kn] {
                for n in 0..n_slots {
                    let idx: Vec<usize> = (0..k_users).map(|k| block + k * n_slots + n).collect();
                    let slack = 1.0 - idx.iter().map(|&i| z[i]).sum::<f64>();
                    for &i in &idx {
                        grad[i] += 1.0 / slack;
                        for &j in &idx {
                            hess[(i, j)] += 1.0 / (slack * slack);
                        }
                    }
                }
            }
            // Concave rows g = rate terms − c η: −log g adds
            // −∇g/g to the gradient and ∇g∇gᵀ/g² − ∇²g/g to the Hessian.
            let mut add_row = |g: f64, entries: &[(usize, f64)], curv: &[(usize, usize, f64)]| {
                for &(i, gi) in entries {
                    grad[i] -= gi / g;
                    for &(j, gj) in entries {
                        hess[(i, j)] += gi * gj / (g * g);
                    }
                }
                for &(i, j, h) in curv {
                    hess[(i, j)] -= h / g;
                }
            };
            for k in 0..k_users {
                let w = 1.0 / n_slots as f64;
                let mut avg = 0.0;
                let mut entries = vec![(eta_ix, -1.0)];
                let mut curv = Vec::new();
                for n in 0..n_slots {
                    let i = k * n_slots + n;
                    let (r, g, h) = perspective_rate(z[i], z[kn + i], f.snr[i]);
                    avg += w * r;
                    entries.push((i, w * g[0]));
                    entries.push((kn + i, w * g[1]));
                    curv.extend([
                        (i, i, w * h[0]),
                        (i, kn + i, w * h[1]),
                        (kn + i, i, w * h[1]),
                        (kn + i, kn + i, w * h[2]),
                    ]);
                    let theta = f.mrrs[k];
                    if theta > 0.0 {
                        add_row(
                            r - theta * z[eta_ix],
                            &[(i, g[0]), (kn + i, g[1]), (eta_ix, -theta)],
                            &[
                                (i, i, h[0]),
                                (i, kn + i, h[1]),
                                (kn + i, i, h[1]),
                                (kn + i, kn + i, h[2]),
                            ],
                        );
                    }
                }
                add_row(avg - z[eta_ix], &entries, &curv);
            }
            let chol = hess.clone().cholesky()?;
            let step = chol.solve(&(-&grad));
            let decrement = -grad.dot(&step);
            newton_total += 1;
            if decrement < 1e-14 {
                break;
            }
            let f0 = phi(&z, t);
            let mut s = 1.0;
            loop {
                let trial: Vec<f64> = z.iter().zip(step.iter()).map(|(a, d)| a + s * d).collect();
                let ft = phi(&trial, t);
                if ft.is_finite() && ft <= f0 - 0.25 * s * decrement {
                    z = trial;
                    break;
                }
                s *= 0.5;
                if s < 1e-20 {
                    break;
                }
            }
            if s < 1e-20 {
                break;
            }
        }
        let gap = m / t;
        if gap <= 1e-10 * z[eta_ix].abs().max(1e-12) || newton_total > 20_000 {
            let value = f.hard_min(&z[..2 * kn]);
            z.truncate(2 * kn);
            return Some((value, z, gap));
        }
        t *= 8.0;
    }
}

/// FISTA with backtracking and function-value restarts. Returns the final
/// gradient-mapping norm and whether it fell below `tol`.
fn accelerated_ascent(f: &SmoothMaxMin, z: &mut Vec<f64>, tau: f64, max_iter: usize, tol: f64) -> (f64, bool) {
    let mut step = 1e-2;
    let mut y = z.clone();
    let mut t_mom: f64 = 1.0;
    let (mut fz, _) = f.soft(z, tau);
    let mut last_map = f64::INFINITY;
    for _ in 0..max_iter {
        let (fy, gy) = f.soft(&y, tau);
        let mut next;
        loop {
            next = y.iter().zip(&gy).map(|(a, g)| a + step * g).collect::<Vec<_>>();
            f.project(&mut next);
            let (fn_, _) = f.soft(&next, tau);
            let lin: f64 = next.iter().zip(&y).zip(&gy).map(|((a, b), g)| g * (a - b)).sum();
            let dist2: f64 = next.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum();
            if fn_ >= fy + lin - dist2 / (2.0 * step) - 1e-15 * fy.abs() {
                break;
            }
            step *= 0.5;
            if step < 1e-18 {
                break;
            }
        }
        let (f_next, _) = f.soft(&next, tau);
        let map = next.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt() / step;
        last_map = map;
        if f_next < fz {
            // Restart momentum from the current iterate.
            y = z.clone();
            t_mom = 1.0;
            continue;
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t_mom * t_mom).sqrt());
        let beta = (t_mom - 1.0) / t_next;
        y = next.iter().zip(z.iter()).map(|(a, b)| a + beta * (a - b)).collect();
        f.project(&mut y);
        *z = next;
        fz = f_next;
        t_mom = t_next;
        step *= 1.5;
        if map <= tol {
            return (map, true);
        }
    }
    (last_map, last_map <= tol)
}

/// Exhaustive grid search over waypoints for a fixed allocation.
///
/// Free waypoints are `q[1..N−1]` with `q[N] = q[1]`; each ranges over the
/// grid `box_min + i·grid_step` covering the bounding box of the users
/// (the optimum lies in their convex hull). Candidates violating the speed
/// limit are skipped. The value is `min(min_k R_k, min r_kn/θ_k)` over
/// served pairs (`α_kn > 0`).
pub fn oracle_trajectory(
    scenario: &Scenario,
    allocation: &Allocation,
    mrrs: &[f64],
    grid_step: f64,
) -> Result<OracleResult, OracleError> {
    let n_slots = allocation.slots();
    let k_users = scenario.num_users();
    if !(2..=4).contains(&n_slots) {
        return Err(OracleError::TooLarge(format!("N = {n_slots}")));
    }
    if allocation.users() != k_users || mrrs.len() != k_users {
        return Err(OracleError::Shape("allocation or MRRs do not match the users".into()));
    }
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for u in scenario.users() {
        for d in 0..2 {
            lo[d] = lo[d].min(u.position[d]);
            hi[d] = hi[d].max(u.position[d]);
        }
    }
    let axis = |d: usize| -> Vec<f64> {
        let count = ((hi[d] - lo[d]) / grid_step + 1e-9).floor() as usize;
        (0..=count).map(|i| lo[d] + i as f64 * grid_step).collect()
    };
    let (xs, ys) = (axis(0), axis(1));
    let points: Vec<[f64; 2]> = xs.iter().flat_map(|&x| ys.iter().map(move |&y| [x, y])).collect();
    let free = n_slots - 1;
    let total = points.len().pow(free as u32);
    if total > 50_000_000 {
        return Err(OracleError::TooLarge(format!("{total} grid combinations")));
    }
    let uav = scenario.uav();
    let s_max = uav.v_max * uav.period / n_slots as f64;

    let eval = |wps: &[[f64; 2]]| -> f64 {
        let mut worst = f64::INFINITY;
        for k in 0..k_users {
            let mut avg = 0.0;
            for n in 0..n_slots {
                let a = allocation.bandwidth.get(k, n);
                if a <= 0.0 {
                    continue;
                }
                let r = a * log2_1p(allocation.power.get(k, n) * snr_per_watt(scenario, wps[n], k) / a);
                avg += r / n_slots as f64;
                if mrrs[k] > 0.0 {
                    worst = worst.min(r / mrrs[k]);
                }
            }
            worst = worst.min(avg);
        }
        worst
    };

    let mut best: Option<(f64, Vec<[f64; 2]>)> = None;
    let mut idx = vec![0usize; free];
    let mut wps = vec![[0.0; 2]; n_slots];
    for _ in 0..total {
        for (j, &i) in idx.iter().enumerate() {
            wps[j] = points[i];
        }
        wps[n_slots - 1] = wps[0];
        let feasible = wps.windows(2).all(|w| {
            let d2 = (w[0][0] - w[1][0]).powi(2) + (w[0][1] - w[1][1]).powi(2);
            d2.sqrt() <= s_max * (1.0 + 1e-12)
        });
        if feasible {
            let v = eval(&wps);
            if best.as_ref().is_none_or(|b| v > b.0) {
                best = Some((v, wps.clone()));
            }
        }
        // Lexicographic odometer; ties keep the first (smallest) index.
        for slot in idx.iter_mut().rev() {
            *slot += 1;
            if *slot < points.len() {
                break;
            }
            *slot = 0;
        }
    }
    let (value, wps) = best.ok_or(OracleError::EmptyGrid)?;
    Ok(OracleResult {
        value,
        argument: wps.iter().flat_map(|p| [p[0], p[1]]).collect(),
        method: OracleMethod::Grid,
        resolution: grid_step,
        stationarity: 0.0,
        converged: true,
    })
}

/// Best relative deviation, over `h ∈ {1e-4, 1e-5, 1e-6}` (scaled by
/// `max(1, ‖x‖∞)`), between central differences of `f` along `direction`
/// and the analytic directional derivative.
pub fn finite_difference_check(f: impl Fn(&[f64]) -> f64, point: &[f64], direction: &[f64], analytic: f64) -> f64 {
    let scale = point.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    let mut best = f64::INFINITY;
    for base in [1e-4, 1e-5, 1e-6] {
        let h = base * scale;
        let plus: Vec<f64> = point.iter().zip(direction).map(|(x, d)| x + h * d).collect();
        let minus: Vec<f64> = point.iter().zip(direction).map(|(x, d)| x - h * d).collect();
        let fd = (f(&plus) - f(&minus)) / (2.0 * h);
        let dev = (fd - analytic).abs() / analytic.abs().max(1e-12);
        best = best.min(dev);
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn capped_simplex_projection() {
        let mut v = [0.2, -0.3];
        project_capped_simplex(&mut v);
        assert_eq!(v, [0.2, 0.0]);
        let mut v = [0.9, 0.5];
        project_capped_simplex(&mut v);
        assert!((v[0] - 0.7).abs() < 1e-15 && (v[1] - 0.3).abs() < 1e-15);
        let mut v = [3.0, -1.0, 0.5];
        project_capped_simplex(&mut v);
        assert_eq!(v, [1.0, 0.0, 0.0]);
    }

    #[test]
    fn finite_difference_exact_for_quadratics() {
        let f = |x: &[f64]| 3.0 * x[0] * x[0] - 2.0 * x[0] * x[1] + x[1];
        let x = [0.7, -1.3];
        let d = [0.6, 0.8];
        let analytic = (6.0 * x[0] - 2.0 * x[1]) * d[0] + (-2.0 * x[0] + 1.0) * d[1];
        assert!(finite_difference_check(f, &x, &d, analytic) <= 1e-9);
    }
}
