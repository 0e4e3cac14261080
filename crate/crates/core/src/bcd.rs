//! Alternating optimization of allocation and trajectory with annealed
//! temporary minimum-rate ratios, plus the initial and baseline
//! trajectories it is compared against.
//!
//! Every user with a nonzero target starts from a temporary ratio of one and
//! is relaxed towards its target before each trajectory step. Both blocks
//! are solved under the current temporary ratios, so each block step keeps
//! the previous point feasible and the objective never decreases; once the
//! temporaries reach the targets the iterates are feasible for the original
//! problem.

use std::f64::consts::PI;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::allocation::{solve_allocation_with, AllocationError, AllocationOptions};
use crate::scenario::{achievable_eta, dist2, rate_matrix, Allocation, Scenario, ScenarioError, Trajectory, Waypoint};
use crate::trajectory::{sca_loop_with, served_eta, ScaOptions, TrajectoryError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BcdError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Allocation(#[from] AllocationError),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
    #[error("fly-and-hover needs a period of at least {min_period:.3} s (have {period:.3} s)")]
    PeriodTooShort { min_period: f64, period: f64 },
    #[error("invalid configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnnealingSchedule {
    /// `θ_temp ← max(θ_temp − (r+1) θ_step, θ)`: the decrement grows with
    /// the iteration count.
    Accelerating,
    /// `θ_temp ← max(θ_ini − (r+1) θ_step, θ)`.
    Constant,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BcdConfig {
    /// Number of annealing steps `L_max ≥ 1`.
    pub l_max: usize,
    /// Relative-improvement threshold `ε > 0`.
    pub epsilon: f64,
    pub max_outer_iterations: usize,
    pub theta_targets: Vec<f64>,
    pub schedule: AnnealingSchedule,
    /// Starting trajectory; the initial circle when `None`.
    pub initial: Option<Trajectory>,
    pub allocation: AllocationOptions,
    pub sca: ScaOptions,
}

impl BcdConfig {
    /// Defaults with the scenario's own ratios as targets.
    pub fn for_scenario(scenario: &Scenario) -> Self {
        Self {
            l_max: 10,
            epsilon: 1e-3,
            max_outer_iterations: 60,
            theta_targets: scenario.mrrs(),
            schedule: AnnealingSchedule::Accelerating,
            initial: None,
            allocation: AllocationOptions::default(),
            sca: ScaOptions::default(),
        }
    }

    fn validate(&self, users: usize) -> Result<(), BcdError> {
        if self.l_max == 0 {
            return Err(BcdError::Config("l_max must be at least 1".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(BcdError::Config("epsilon must be positive".into()));
        }
        if self.max_outer_iterations == 0 {
            return Err(BcdError::Config("max_outer_iterations must be at least 1".into()));
        }
        if self.theta_targets.len() != users {
            return Err(BcdError::Config(format!(
                "{} MRR targets for {users} users",
                self.theta_targets.len()
            )));
        }
        if let Some(bad) = self.theta_targets.iter().find(|t| !(0.0..=1.0).contains(*t)) {
            return Err(BcdError::Config(format!("MRR target {bad} is outside [0, 1]")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    MaxIterations,
    /// The trajectory step failed even with the annealing decrement
    /// withdrawn; the last feasible iterate is returned.
    TrajectoryFailure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    /// Temporary ratios used by this iteration's trajectory step.
    pub theta_temp: Vec<f64>,
    /// Optimal `η` of the allocation step (under the previous ratios).
    pub allocation_eta: f64,
    /// `η` after the trajectory step.
    pub eta: f64,
    pub sca_iterations: usize,
    /// Halvings of the annealing decrement this iteration needed.
    pub retries: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    /// `η` after every outer iteration.
    pub eta_history: Vec<f64>,
    pub theta_temp_history: Vec<Vec<f64>>,
    pub iterations: Vec<IterationRecord>,
    pub trajectory: Trajectory,
    pub allocation: Allocation,
    /// Max-min throughput of `(trajectory, allocation)` under the targets.
    pub eta: f64,
    pub wall_time_s: f64,
    pub termination: Termination,
}

/// Circle about the user centroid with radius `(1 − mean θ)·r_0`, where
/// `r_0 = min(V_max T/(2π), r_min/2)` and `r_min` is the largest user
/// distance from the centroid.
///
/// The radius is reduced further if the `N − 1` hops would exceed the
/// per-slot distance limit.
pub fn initial_circular_trajectory(scenario: &Scenario) -> Trajectory {
    circle_for(scenario, &scenario.mrrs())
}

fn circle_for(scenario: &Scenario, thetas: &[f64]) -> Trajectory {
    let center = scenario.user_centroid();
    let uav = scenario.uav();
    let r_min = scenario
        .users()
        .iter()
        .map(|u| dist2(u.position, center).sqrt())
        .fold(0.0, f64::max);
    let r0 = (uav.v_max * uav.period / (2.0 * PI)).min(r_min / 2.0);
    let mean_theta = thetas.iter().sum::<f64>() / thetas.len() as f64;
    let n = uav.slots;
    let step = 2.0 * PI / (n - 1) as f64;
    // Chord between consecutive waypoints is 2 r sin(step/2).
    let chord_limit = scenario.max_hop() / (2.0 * (step / 2.0).sin());
    let radius = ((1.0 - mean_theta) * r0).min(chord_limit).max(0.0);
    Trajectory::new(
        (0..n)
            .map(|i| {
                let phi = step * i as f64;
                [center[0] + radius * phi.cos(), center[1] + radius * phi.sin()]
            })
            .collect(),
    )
}

/// `θ_ini,k = 1` for users with a nonzero target, 0 otherwise.
pub fn initial_mrrs(theta_targets: &[f64]) -> Vec<f64> {
    theta_targets.iter().map(|&t| if t > 0.0 { 1.0 } else { 0.0 }).collect()
}

fn anneal(
    schedule: AnnealingSchedule,
    current: &[f64],
    start: &[f64],
    step: &[f64],
    targets: &[f64],
    r: usize,
) -> Vec<f64> {
    (0..targets.len())
        .map(|k| {
            let from = match schedule {
                AnnealingSchedule::Accelerating => current[k],
                AnnealingSchedule::Constant => start[k],
            };
            (from - (r + 1) as f64 * step[k]).max(targets[k])
        })
        .collect()
}

/// Largest `η` the given point supports under `mrrs`, over all pairs.
fn strict_eta(scenario: &Scenario, trajectory: &Trajectory, allocation: &Allocation, mrrs: &[f64]) -> f64 {
    achievable_eta(&rate_matrix(scenario, trajectory, allocation), mrrs)
}

/// Largest `η` the given point supports under `mrrs`, with the rate-ratio
/// terms restricted to served pairs.
fn point_eta(scenario: &Scenario, trajectory: &Trajectory, allocation: &Allocation, mrrs: &[f64]) -> f64 {
    served_eta(scenario, trajectory, allocation, mrrs)
}

pub fn run_bcd(scenario: &Scenario, config: &BcdConfig) -> Result<SolveReport, BcdError> {
    let started = Instant::now();
    let k_users = scenario.num_users();
    config.validate(k_users)?;
    let targets = &config.theta_targets;
    let mut trajectory = match &config.initial {
        Some(t) => {
            if t.len() != scenario.slots() {
                return Err(BcdError::Config(format!(
                    "initial trajectory has {} waypoints, scenario has {} slots",
                    t.len(),
                    scenario.slots()
                )));
            }
            t.clone()
        }
        None => circle_for(scenario, targets),
    };
    let theta_ini = initial_mrrs(targets);
    let theta_step: Vec<f64> = theta_ini
        .iter()
        .zip(targets)
        .map(|(i, t)| (i - t) / config.l_max as f64)
        .collect();
    let mut theta_temp = theta_ini.clone();

    // Fallback: the starting trajectory with its optimal allocation under the
    // targets. The annealed run is not allowed to end below it.
    let fallback = solve_allocation_with(scenario, &trajectory, targets, &config.allocation)?;
    let fallback = (trajectory.clone(), fallback.allocation, fallback.eta);

    let mut allocation: Option<Allocation> = None;
    let mut eta_history = Vec::new();
    let mut theta_history = Vec::new();
    let mut records = Vec::new();
    let mut termination = Termination::MaxIterations;

    for r in 0..config.max_outer_iterations {
        // Allocation step under the current temporary ratios.
        let solved = solve_allocation_with(scenario, &trajectory, &theta_temp, &config.allocation)?;
        let (alloc, allocation_eta) = match &allocation {
            // Keep the previous allocation if the solver returns less than it
            // still delivers on the new trajectory.
            Some(prev) => {
                let kept = point_eta(scenario, &trajectory, prev, &theta_temp);
                if solved.eta >= kept {
                    (solved.allocation, solved.eta)
                } else {
                    log::debug!(
                        "allocation step below previous point ({} < {kept}); kept it",
                        solved.eta
                    );
                    (prev.clone(), kept)
                }
            }
            None => (solved.allocation, solved.eta),
        };

        // Annealing, then the trajectory step; on failure the decrement is
        // halved, and withdrawn after five tries.
        let proposed = anneal(config.schedule, &theta_temp, &theta_ini, &theta_step, targets, r);
        let mut retries = 0;
        let mut candidate = proposed.clone();
        let outcome = loop {
            match sca_loop_with(scenario, &alloc, &candidate, &trajectory, &config.sca) {
                Ok(res) => break Some((res, candidate.clone())),
                Err(e) => {
                    log::warn!("trajectory step failed at θ_temp = {candidate:?}: {e}");
                    if retries == 5 {
                        break None;
                    }
                    retries += 1;
                    candidate = theta_temp
                        .iter()
                        .zip(&candidate)
                        .map(|(old, new)| old - (old - new) / 2.0)
                        .collect();
                }
            }
        };
        let Some((sca, used)) = outcome else {
            allocation = Some(alloc);
            termination = Termination::TrajectoryFailure;
            break;
        };
        theta_temp = used;
        trajectory = sca.trajectory;
        allocation = Some(alloc);
        let eta = sca.eta;
        let previous = eta_history.last().copied();
        eta_history.push(eta);
        theta_history.push(theta_temp.clone());
        records.push(IterationRecord {
            theta_temp: theta_temp.clone(),
            allocation_eta,
            eta,
            sca_iterations: sca.iterations,
            retries,
        });
        log::info!("iteration {r}: η = {eta:.6}, θ_temp = {theta_temp:?}");

        let at_targets = theta_temp.iter().zip(targets).all(|(a, b)| a == b);
        if at_targets {
            if let Some(prev) = previous {
                if eta - prev < config.epsilon * prev.abs() {
                    termination = Termination::Converged;
                    break;
                }
            }
        }
    }

    let allocation = allocation.expect("at least one allocation step ran");
    let eta = strict_eta(scenario, &trajectory, &allocation, targets);
    let mut best = (trajectory, allocation, eta);
    // One last allocation step on the final trajectory under the targets.
    let last = solve_allocation_with(scenario, &best.0, targets, &config.allocation)?;
    if last.eta > best.2 {
        best = (best.0, last.allocation, last.eta);
    }
    if fallback.2 > best.2 {
        log::info!("annealed run ended below its starting point; returning the start");
        best = fallback;
    }
    Ok(SolveReport {
        eta_history,
        theta_temp_history: theta_history,
        iterations: records,
        trajectory: best.0,
        allocation: best.1,
        eta: best.2,
        wall_time_s: started.elapsed().as_secs_f64(),
        termination,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    /// Hover above the user centroid for the whole period.
    Static,
    /// The initial circle.
    Circular,
    /// Visit every user at full speed and hover above each for an equal
    /// share of the remaining time.
    FlyAndHover,
}

pub fn baseline_trajectory(scenario: &Scenario, kind: BaselineKind) -> Result<Trajectory, BcdError> {
    match kind {
        BaselineKind::Static => Ok(Trajectory::hover(scenario.user_centroid(), scenario.slots())),
        BaselineKind::Circular => Ok(initial_circular_trajectory(scenario)),
        BaselineKind::FlyAndHover => fly_and_hover(scenario),
    }
}

/// Users in nearest-neighbor order, starting from the one closest to the
/// centroid (ties broken by index).
fn tour_order(scenario: &Scenario) -> Vec<Waypoint> {
    let mut remaining: Vec<Waypoint> = scenario.users().iter().map(|u| u.position).collect();
    let mut at = scenario.user_centroid();
    let mut order = Vec::with_capacity(remaining.len());
    while !remaining.is_empty() {
        let mut best = 0;
        for (i, &w) in remaining.iter().enumerate() {
            if dist2(w, at) < dist2(remaining[best], at) {
                best = i;
            }
        }
        at = remaining.remove(best);
        order.push(at);
    }
    order
}

/// Hops each leg of the closed tour needs at per-slot distance `s_max`.
fn leg_hops(order: &[Waypoint], s_max: f64) -> Vec<usize> {
    let k = order.len();
    (0..k)
        .map(|i| {
            let d = dist2(order[i], order[(i + 1) % k]).sqrt();
            // A hair of slack so that a leg of exactly m hops is not rounded up.
            (d / s_max * (1.0 - 1e-12)).ceil() as usize
        })
        .collect()
}

fn fly_and_hover(scenario: &Scenario) -> Result<Trajectory, BcdError> {
    let order = tour_order(scenario);
    let n = scenario.slots();
    let hops = leg_hops(&order, scenario.max_hop());
    let travel: usize = hops.iter().sum();
    if travel > n - 1 {
        return Err(BcdError::PeriodTooShort {
            min_period: min_fly_and_hover_period(scenario, &order),
            period: scenario.uav().period,
        });
    }
    let k = order.len();
    let spare = n - 1 - travel;
    let mut waypoints = Vec::with_capacity(n);
    waypoints.push(order[0]);
    for i in 0..k {
        let hover = spare / k + usize::from(i < spare % k);
        let here = order[i];
        waypoints.extend(std::iter::repeat_n(here, hover));
        let next = order[(i + 1) % k];
        let m = hops[i];
        for j in 1..=m {
            let f = j as f64 / m as f64;
            waypoints.push([here[0] + f * (next[0] - here[0]), here[1] + f * (next[1] - here[1])]);
        }
    }
    debug_assert_eq!(waypoints.len(), n);
    waypoints[n - 1] = waypoints[0];
    Ok(Trajectory::new(waypoints))
}

/// Smallest period for which the tour fits in `N − 1` hops.
fn min_fly_and_hover_period(scenario: &Scenario, order: &[Waypoint]) -> f64 {
    let n = scenario.slots();
    let uav = scenario.uav();
    let fits = |period: f64| {
        let s_max = uav.v_max * period / n as f64;
        leg_hops(order, s_max).iter().sum::<usize>() < n
    };
    let (mut lo, mut hi) = (0.0, uav.period.max(1.0));
    while !fits(hi) {
        hi *= 2.0;
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if fits(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepMode {
    /// Every trajectory is built once for zero ratios and only the
    /// allocation is re-solved along the grid.
    FixedTrajectory,
    /// Trajectories are rebuilt for each grid point and the proposed one is
    /// optimized by [`run_bcd`].
    FullBcd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryKind {
    Proposed,
    FlyAndHover,
    Circular,
    Static,
}

impl TrajectoryKind {
    pub const ALL: [TrajectoryKind; 4] = [
        TrajectoryKind::Proposed,
        TrajectoryKind::FlyAndHover,
        TrajectoryKind::Circular,
        TrajectoryKind::Static,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TrajectoryKind::Proposed => "proposed",
            TrajectoryKind::FlyAndHover => "fly_and_hover",
            TrajectoryKind::Circular => "circular",
            TrajectoryKind::Static => "static",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub thetas: Vec<f64>,
    /// One cell per [`TrajectoryKind::ALL`] entry.
    pub cells: Vec<Result<f64, String>>,
}

/// Trajectory, allocation and max-min throughput of one trajectory kind at
/// ratios `thetas`.
pub fn solve_cell(
    scenario: &Scenario,
    kind: TrajectoryKind,
    thetas: &[f64],
    config: &BcdConfig,
) -> Result<(Trajectory, Allocation, f64), BcdError> {
    let scenario = scenario.with_mrrs(thetas)?;
    let trajectory = match kind {
        TrajectoryKind::Proposed => {
            let config = BcdConfig {
                theta_targets: thetas.to_vec(),
                ..config.clone()
            };
            let report = run_bcd(&scenario, &config)?;
            return Ok((report.trajectory, report.allocation, report.eta));
        }
        TrajectoryKind::FlyAndHover => baseline_trajectory(&scenario, BaselineKind::FlyAndHover)?,
        TrajectoryKind::Circular => baseline_trajectory(&scenario, BaselineKind::Circular)?,
        TrajectoryKind::Static => baseline_trajectory(&scenario, BaselineKind::Static)?,
    };
    let solution = solve_allocation_with(&scenario, &trajectory, thetas, &config.allocation)?;
    Ok((trajectory, solution.allocation, solution.eta))
}

/// `η` for every trajectory kind at every grid point; each grid entry is a
/// full ratio vector.
pub fn theta_sweep(
    scenario: &Scenario,
    grid: &[Vec<f64>],
    mode: SweepMode,
    config: &BcdConfig,
) -> Result<Vec<SweepRow>, BcdError> {
    let k_users = scenario.num_users();
    if let Some(bad) = grid.iter().find(|t| t.len() != k_users) {
        return Err(BcdError::Config(format!("grid point {bad:?} has the wrong length")));
    }
    let fixed: Option<Vec<Result<Trajectory, String>>> = match mode {
        SweepMode::FullBcd => None,
        SweepMode::FixedTrajectory => {
            let zero = vec![0.0; k_users];
            let base = scenario.with_mrrs(&zero)?;
            Some(
                TrajectoryKind::ALL
                    .iter()
                    .map(|&kind| {
                        solve_cell(&base, kind, &zero, config)
                            .map(|(t, _, _)| t)
                            .map_err(|e| e.to_string())
                    })
                    .collect(),
            )
        }
    };
    let mut rows = Vec::with_capacity(grid.len());
    for thetas in grid {
        let cells = TrajectoryKind::ALL
            .iter()
            .enumerate()
            .map(|(i, &kind)| match &fixed {
                None => solve_cell(scenario, kind, thetas, config)
                    .map(|(_, _, eta)| eta)
                    .map_err(|e| e.to_string()),
                Some(trajectories) => match &trajectories[i] {
                    Ok(t) => {
                        let s = scenario.with_mrrs(thetas).map_err(|e| e.to_string())?;
                        solve_allocation_with(&s, t, thetas, &config.allocation)
                            .map(|sol| sol.eta)
                            .map_err(|e| e.to_string())
                    }
                    Err(e) => Err(e.clone()),
                },
            })
            .collect();
        rows.push(SweepRow {
            thetas: thetas.clone(),
            cells,
        });
    }
    Ok(rows)
}
