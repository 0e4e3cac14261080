//! Trajectory optimization for a fixed allocation by successive convex
//! approximation.
//!
//! For fixed `(α, p)` the rate `α log2(1 + γ/(H² + d²))` is convex in the
//! squared distance `d² = ‖q − w‖²`, so its tangent in `d²` at an anchor is a
//! global under-estimator that is concave in `q`. Replacing every rate by
//! that tangent turns the trajectory problem into a convex QCQP whose
//! optimum is feasible for the original problem; re-anchoring at the new
//! trajectory and repeating never lowers the objective.

use std::f64::consts::LOG2_E;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::UserSlotMatrix;
use crate::numerics::qcqp::{solve_qcqp_with, ConvexQcqp, LinearEquality, QcqpError, QcqpOptions, QuadraticConstraint};
use crate::scenario::{dist2, instantaneous_rate, Allocation, Scenario, Trajectory, Waypoint};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrajectoryError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("minimum-rate ratio {0} is outside [0, 1]")]
    Mrr(f64),
    #[error("trajectory subproblem failed: {0}")]
    Solver(#[from] QcqpError),
}

/// Tangent coefficients of every rate in the squared distance, taken at
/// `anchor`: `r ≥ α (B − A (d² − d_r²))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaCoefficients {
    /// `A_k[n] ≥ 0`, in bps/Hz per m².
    pub a: UserSlotMatrix,
    /// `B_k[n] = log2(1 + γ_k[n]/(H² + d_r²))`, bps/Hz.
    pub b: UserSlotMatrix,
    pub anchor: Trajectory,
    /// Squared anchor distances `H² + ‖q_r[n] − w_k‖²`.
    pub anchor_d2: UserSlotMatrix,
    pub altitude: f64,
    pub users: Vec<Waypoint>,
}

/// `γ_k[n] = (p/α) γ_0`, or 0 for an unserved pair.
fn slot_snr(scenario: &Scenario, allocation: &Allocation, k: usize, n: usize) -> f64 {
    let alpha = allocation.bandwidth.get(k, n);
    if alpha > 0.0 {
        allocation.power.get(k, n) / alpha * scenario.gamma0()
    } else {
        0.0
    }
}

fn check_shapes(scenario: &Scenario, allocation: &Allocation, trajectory: &Trajectory) -> Result<(), TrajectoryError> {
    if allocation.users() != scenario.num_users() || allocation.slots() != trajectory.len() {
        return Err(TrajectoryError::Shape(format!(
            "allocation is {}x{}, trajectory has {} waypoints for {} users",
            allocation.users(),
            allocation.slots(),
            trajectory.len(),
            scenario.num_users()
        )));
    }
    Ok(())
}

pub fn sca_coefficients(
    scenario: &Scenario,
    allocation: &Allocation,
    anchor: &Trajectory,
) -> Result<ScaCoefficients, TrajectoryError> {
    check_shapes(scenario, allocation, anchor)?;
    let (k_users, n_slots) = (scenario.num_users(), anchor.len());
    let h2 = scenario.altitude().powi(2);
    let users: Vec<Waypoint> = (0..k_users).map(|k| scenario.user_position(k)).collect();
    let anchor_d2 = UserSlotMatrix::from_fn(k_users, n_slots, |k, n| h2 + dist2(anchor.waypoints[n], users[k]));
    let mut a = UserSlotMatrix::zeros(k_users, n_slots);
    let mut b = UserSlotMatrix::zeros(k_users, n_slots);
    for k in 0..k_users {
        for n in 0..n_slots {
            let gamma = slot_snr(scenario, allocation, k, n);
            if gamma > 0.0 {
                let d2 = anchor_d2.get(k, n);
                a.set(k, n, gamma * LOG2_E / (d2 * (d2 + gamma)));
                b.set(k, n, (gamma / d2).ln_1p() * LOG2_E);
            }
        }
    }
    Ok(ScaCoefficients {
        a,
        b,
        anchor: anchor.clone(),
        anchor_d2,
        altitude: scenario.altitude(),
        users,
    })
}

/// Tangent lower bound on `r_k[n]` at waypoint `trajectory[n]`.
pub fn surrogate_rate(
    coeffs: &ScaCoefficients,
    allocation: &Allocation,
    trajectory: &Trajectory,
    k: usize,
    n: usize,
) -> f64 {
    let alpha = allocation.bandwidth.get(k, n);
    if alpha <= 0.0 {
        return 0.0;
    }
    let d2 = coeffs.altitude.powi(2) + dist2(trajectory.waypoints[n], coeffs.users[k]);
    alpha * (coeffs.b.get(k, n) - coeffs.a.get(k, n) * (d2 - coeffs.anchor_d2.get(k, n)))
}

/// `min(min_k R_k, min r_k[n]/θ_k)` with the rate-ratio terms restricted to
/// served pairs (`α > 0`) of users with `θ_k > 0`.
fn served_min(rates: &UserSlotMatrix, allocation: &Allocation, mrrs: &[f64]) -> f64 {
    let n_slots = rates.slots() as f64;
    let mut eta = f64::INFINITY;
    for (k, &theta) in mrrs.iter().enumerate() {
        eta = eta.min(rates.row(k).iter().sum::<f64>() / n_slots);
        if theta > 0.0 {
            for (n, &r) in rates.row(k).iter().enumerate() {
                if allocation.bandwidth.get(k, n) > 0.0 {
                    eta = eta.min(r / theta);
                }
            }
        }
    }
    eta
}

/// Largest `η` the surrogate rates certify at `trajectory`.
pub fn surrogate_eta(coeffs: &ScaCoefficients, allocation: &Allocation, trajectory: &Trajectory, mrrs: &[f64]) -> f64 {
    let rates = UserSlotMatrix::from_fn(allocation.users(), allocation.slots(), |k, n| {
        surrogate_rate(coeffs, allocation, trajectory, k, n)
    });
    served_min(&rates, allocation, mrrs)
}

/// Largest `η` the true rates support, with the rate-ratio constraints
/// restricted to served pairs.
pub fn served_eta(scenario: &Scenario, trajectory: &Trajectory, allocation: &Allocation, mrrs: &[f64]) -> f64 {
    let rates = UserSlotMatrix::from_fn(allocation.users(), allocation.slots(), |k, n| {
        let g = scenario.gain_over_noise_at(trajectory.waypoints[n], k);
        instantaneous_rate(allocation.bandwidth.get(k, n), allocation.power.get(k, n), g)
    });
    served_min(&rates, allocation, mrrs)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryStep {
    pub trajectory: Trajectory,
    /// Surrogate objective at `trajectory` (a lower bound on the true `η`).
    pub eta_lb: f64,
    /// Surrogate objective at the anchor.
    pub anchor_eta_lb: f64,
    pub newton_steps: usize,
}

/// Factor applied to the anchor about its centroid when a hop sits on the
/// speed limit, so that the barrier starts strictly inside.
const INTERIOR_SHRINK: f64 = 1.0 - 1e-7;

/// Variable index of `x[n]`; `y[n]` follows. Index 0 is `η`.
fn coord(n: usize) -> usize {
    1 + 2 * n
}

/// One surrogate QCQP around `anchor`.
///
/// Variables are `η` and the waypoints expressed in units of the altitude.
/// Rate-ratio rows are kept only for served pairs of users with `θ_k > 0`.
pub fn solve_trajectory_step(
    scenario: &Scenario,
    allocation: &Allocation,
    mrrs: &[f64],
    anchor: &Trajectory,
) -> Result<TrajectoryStep, TrajectoryError> {
    solve_trajectory_step_with(scenario, allocation, mrrs, anchor, &QcqpOptions::default())
}

pub fn solve_trajectory_step_with(
    scenario: &Scenario,
    allocation: &Allocation,
    mrrs: &[f64],
    anchor: &Trajectory,
    options: &QcqpOptions,
) -> Result<TrajectoryStep, TrajectoryError> {
    if mrrs.len() != scenario.num_users() {
        return Err(TrajectoryError::Shape(format!(
            "{} MRR values for {} users",
            mrrs.len(),
            scenario.num_users()
        )));
    }
    if let Some(&bad) = mrrs.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        return Err(TrajectoryError::Mrr(bad));
    }
    let coeffs = sca_coefficients(scenario, allocation, anchor)?;
    let anchor_eta_lb = surrogate_eta(&coeffs, allocation, anchor, mrrs);
    let (k_users, n_slots) = (scenario.num_users(), anchor.len());
    let scale = scenario.altitude();
    let s_max = scenario.max_hop() / scale;
    let n_vars = 1 + 2 * n_slots;

    let mut objective = vec![0.0; n_vars];
    objective[0] = -1.0;

    // α A ‖q − w‖² − α (B + A d_r²) expressed in scaled coordinates,
    // accumulated into `row` with weight `wgt`.
    let add_rate = |row: &mut QuadraticConstraint, k: usize, n: usize, wgt: f64| {
        let alpha = allocation.bandwidth.get(k, n);
        let a = coeffs.a.get(k, n);
        if alpha <= 0.0 || (a == 0.0 && coeffs.b.get(k, n) == 0.0) {
            return;
        }
        let w = coeffs.users[k];
        let (wx, wy) = (w[0] / scale, w[1] / scale);
        let quad = wgt * alpha * a * scale * scale;
        let (ix, iy) = (coord(n), coord(n) + 1);
        row.quadratic.push((ix, ix, quad));
        row.quadratic.push((iy, iy, quad));
        row.linear.push((ix, -2.0 * quad * wx));
        row.linear.push((iy, -2.0 * quad * wy));
        let h2 = coeffs.altitude.powi(2);
        let horizontal_r2 = coeffs.anchor_d2.get(k, n) - h2;
        row.constant += quad * (wx * wx + wy * wy) - wgt * alpha * (coeffs.b.get(k, n) + a * horizontal_r2);
    };

    let mut constraints = Vec::new();
    for k in 0..k_users {
        let mut row = QuadraticConstraint::linear(vec![(0, 1.0)], 0.0);
        for n in 0..n_slots {
            add_rate(&mut row, k, n, 1.0 / n_slots as f64);
        }
        constraints.push(row);
    }
    for (k, &theta) in mrrs.iter().enumerate() {
        if theta <= 0.0 {
            continue;
        }
        for n in 0..n_slots {
            if allocation.bandwidth.get(k, n) <= 0.0 {
                continue;
            }
            let mut row = QuadraticConstraint::linear(vec![(0, theta)], 0.0);
            add_rate(&mut row, k, n, 1.0);
            constraints.push(row);
        }
    }
    let inv_s2 = 1.0 / (s_max * s_max);
    for n in 0..n_slots - 1 {
        let (i, j) = (coord(n), coord(n + 1));
        let mut quadratic = Vec::with_capacity(6);
        for d in 0..2 {
            quadratic.push((i + d, i + d, inv_s2));
            quadratic.push((j + d, j + d, inv_s2));
            quadratic.push((i + d, j + d, -inv_s2));
        }
        constraints.push(QuadraticConstraint {
            quadratic,
            linear: Vec::new(),
            constant: -1.0,
        });
    }
    let last = coord(n_slots - 1);
    let equalities = (0..2)
        .map(|d| LinearEquality {
            coefficients: vec![(coord(0) + d, 1.0), (last + d, -1.0)],
            rhs: 0.0,
        })
        .collect();
    let qcqp = ConvexQcqp {
        objective,
        constraints,
        equalities,
    };

    let start = strictly_inside(anchor, scenario.max_hop());
    let start_coeffs_eta = surrogate_eta(&coeffs, allocation, &start, mrrs);
    let margin = 1e-6 * start_coeffs_eta.abs().max(1e-3);
    let mut x0 = vec![start_coeffs_eta - margin];
    for q in &start.waypoints {
        x0.push(q[0] / scale);
        x0.push(q[1] / scale);
    }

    let (x, newton_steps) = match solve_qcqp_with(&qcqp, &x0, options) {
        Ok(sol) => (sol.x, sol.newton_steps),
        Err(QcqpError::MaxIterations(sol)) => {
            log::debug!("trajectory QCQP hit its iteration limit");
            (sol.x, sol.newton_steps)
        }
        Err(e) => return Err(e.into()),
    };
    let mut waypoints: Vec<Waypoint> = (0..n_slots)
        .map(|n| [x[coord(n)] * scale, x[coord(n) + 1] * scale])
        .collect();
    waypoints[n_slots - 1] = waypoints[0];
    let candidate = Trajectory::new(waypoints);
    let candidate_eta = surrogate_eta(&coeffs, allocation, &candidate, mrrs);
    let hop_ok = candidate.max_hop() <= scenario.max_hop() * (1.0 + 1e-9);
    // The anchor is feasible for the surrogate problem, so never return less.
    if hop_ok && candidate_eta >= anchor_eta_lb {
        Ok(TrajectoryStep {
            trajectory: candidate,
            eta_lb: candidate_eta,
            anchor_eta_lb,
            newton_steps,
        })
    } else {
        Ok(TrajectoryStep {
            trajectory: anchor.clone(),
            eta_lb: anchor_eta_lb,
            anchor_eta_lb,
            newton_steps,
        })
    }
}

/// `anchor`, or a copy shrunk slightly about its centroid when a hop is at
/// (or numerically beyond) the speed limit.
fn strictly_inside(anchor: &Trajectory, s_max: f64) -> Trajectory {
    if anchor.max_hop() < s_max * (1.0 - 1e-9) {
        return anchor.clone();
    }
    let m = anchor.len() as f64;
    let (cx, cy) = anchor
        .waypoints
        .iter()
        .fold((0.0, 0.0), |(x, y), q| (x + q[0] / m, y + q[1] / m));
    let factor = (INTERIOR_SHRINK * s_max / anchor.max_hop()).min(INTERIOR_SHRINK);
    Trajectory::new(
        anchor
            .waypoints
            .iter()
            .map(|q| [cx + factor * (q[0] - cx), cy + factor * (q[1] - cy)])
            .collect(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaOptions {
    /// Stop once the surrogate objective improves by less than this
    /// fraction.
    pub relative_tol: f64,
    pub max_iterations: usize,
    pub qcqp: QcqpOptions,
}

impl Default for ScaOptions {
    fn default() -> Self {
        Self {
            relative_tol: 1e-4,
            max_iterations: 30,
            qcqp: QcqpOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScaResult {
    pub trajectory: Trajectory,
    /// True (not surrogate) objective at `trajectory`.
    pub eta: f64,
    /// Surrogate objective after each step.
    pub eta_lb_history: Vec<f64>,
    pub iterations: usize,
}

pub fn sca_loop(
    scenario: &Scenario,
    allocation: &Allocation,
    mrrs: &[f64],
    initial: &Trajectory,
) -> Result<ScaResult, TrajectoryError> {
    sca_loop_with(scenario, allocation, mrrs, initial, &ScaOptions::default())
}

pub fn sca_loop_with(
    scenario: &Scenario,
    allocation: &Allocation,
    mrrs: &[f64],
    initial: &Trajectory,
    options: &ScaOptions,
) -> Result<ScaResult, TrajectoryError> {
    let mut trajectory = initial.clone();
    let mut history = Vec::new();
    let mut iterations = 0;
    while iterations < options.max_iterations.max(1) {
        let step = solve_trajectory_step_with(scenario, allocation, mrrs, &trajectory, &options.qcqp)?;
        iterations += 1;
        let gain = step.eta_lb - step.anchor_eta_lb;
        trajectory = step.trajectory;
        history.push(step.eta_lb);
        if gain <= options.relative_tol * step.anchor_eta_lb.abs().max(1e-12) {
            break;
        }
    }
    let eta = served_eta(scenario, &trajectory, allocation, mrrs);
    Ok(ScaResult {
        trajectory,
        eta,
        eta_lb_history: history,
        iterations,
    })
}
