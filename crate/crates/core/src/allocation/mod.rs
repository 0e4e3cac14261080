//! Optimal bandwidth and power allocation for a fixed trajectory.
//!
//! The problem is convex in `(η, α, p)` and is solved through its Lagrange
//! dual: multipliers are located by a dual search, the power densities
//! follow by water-filling, and the bandwidth split is recovered from a
//! linear program with the densities held fixed.
//!
//! Two dual searches are available. The ellipsoid method works directly on
//! the dual function and is the reference route; its step count grows with
//! the square of the dual dimension `K + K N + 2N`, so for long horizons the
//! allocation and multipliers are instead read off a primal barrier path
//! (see [`central_path`]); the recovery LP is then only run on small
//! instances, since its dense simplex would dominate the cost beyond that.

pub mod central_path;
pub mod dual;
pub mod ellipsoid_search;
pub mod recovery;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use central_path::CentralPathOptions;
pub use dual::{
    bandwidth_indicator, dual_function, subgradients, waterfill_power_density, DualEvaluation, DualState,
    FeasibilityCut, Indicator,
};
pub use ellipsoid_search::EllipsoidSearchOptions;
pub use recovery::KktReport;

use crate::matrix::UserSlotMatrix;
use crate::numerics::lp::LpError;
use crate::scenario::{gain_over_noise, Allocation, Scenario, Trajectory};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AllocationError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("minimum-rate ratio {0} is outside [0, 1]")]
    Mrr(f64),
    #[error("recovery LP failed: {0}")]
    Recovery(#[from] LpError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DualSearch {
    Ellipsoid,
    CentralPath,
    /// Ellipsoid when the working dual dimension is at most the given
    /// value, barrier path otherwise.
    Auto {
        max_ellipsoid_dim: usize,
    },
}

impl Default for DualSearch {
    fn default() -> Self {
        DualSearch::Auto { max_ellipsoid_dim: 64 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchMethod {
    Ellipsoid,
    CentralPath,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AllocationOptions {
    pub search: DualSearch,
    pub ellipsoid: EllipsoidSearchOptions,
    pub central_path: CentralPathOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationSolution {
    /// Max-min throughput delivered by `allocation`, bps/Hz.
    pub eta: f64,
    pub allocation: Allocation,
    /// Dual point satisfying `Σλ + ΣΣθμ = 1`.
    pub dual: DualState,
    /// Dual function value at `dual`: an upper bound on the optimal `η`.
    pub dual_bound: f64,
    pub kkt: KktReport,
    pub method: SearchMethod,
    /// Ellipsoid steps or Newton steps, depending on `method`.
    pub iterations: usize,
}

/// Largest `K N` for which the barrier route still polishes its allocation
/// with the recovery LP.
const LP_POLISH_MAX_PAIRS: usize = 128;

fn validate(gains: &UserSlotMatrix, mrrs: &[f64]) -> Result<(), AllocationError> {
    if mrrs.len() != gains.users() {
        return Err(AllocationError::Shape(format!(
            "{} MRR values for {} users",
            mrrs.len(),
            gains.users()
        )));
    }
    if let Some(&bad) = mrrs.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        return Err(AllocationError::Mrr(bad));
    }
    Ok(())
}

pub fn solve_allocation(
    scenario: &Scenario,
    trajectory: &Trajectory,
    mrrs: &[f64],
) -> Result<AllocationSolution, AllocationError> {
    solve_allocation_with(scenario, trajectory, mrrs, &AllocationOptions::default())
}

pub fn solve_allocation_with(
    scenario: &Scenario,
    trajectory: &Trajectory,
    mrrs: &[f64],
    options: &AllocationOptions,
) -> Result<AllocationSolution, AllocationError> {
    let gains = gain_over_noise(scenario, trajectory);
    solve_for_gains(&gains, mrrs, scenario.p_max(), options)
}

/// Allocation for explicit gain-to-noise ratios `g_kn = h_kn/(B N_0)`.
pub fn solve_for_gains(
    gains: &UserSlotMatrix,
    mrrs: &[f64],
    p_max: f64,
    options: &AllocationOptions,
) -> Result<AllocationSolution, AllocationError> {
    validate(gains, mrrs)?;
    let mrr_users = mrrs.iter().filter(|&&t| t > 0.0).count();
    let dim = ellipsoid_search::search_dimension(gains.users(), gains.slots(), mrr_users);
    let method = match options.search {
        DualSearch::Ellipsoid => SearchMethod::Ellipsoid,
        DualSearch::CentralPath => SearchMethod::CentralPath,
        DualSearch::Auto { max_ellipsoid_dim } if dim <= max_ellipsoid_dim => SearchMethod::Ellipsoid,
        DualSearch::Auto { .. } => SearchMethod::CentralPath,
    };
    match method {
        SearchMethod::Ellipsoid => {
            let run = ellipsoid_search::ellipsoid_dual_search(gains, mrrs, p_max, &options.ellipsoid);
            log::debug!(
                "ellipsoid dual search: {} steps, {:?}, bound {:.9e}",
                run.steps,
                run.termination,
                run.value
            );
            let allocation = lp_recovery(gains, mrrs, p_max, &run.dual)?;
            Ok(finish(
                gains, mrrs, p_max, run.dual, run.value, allocation, method, run.steps,
            ))
        }
        SearchMethod::CentralPath => {
            let cp = central_path::central_path_allocation(gains, mrrs, p_max, &options.central_path);
            if !cp.converged {
                log::debug!("barrier path stopped short of its gap target");
            }
            let bound = cp.dual_bound;
            let barrier = Allocation {
                bandwidth: cp.bandwidth,
                power: cp.power,
            };
            // The barrier iterate keeps small shares on pairs the optimum does
            // not serve; on small instances the recovery LP removes them.
            let allocation = if gains.users() * gains.slots() <= LP_POLISH_MAX_PAIRS {
                let polished = lp_recovery(gains, mrrs, p_max, &cp.dual)?;
                let eta = |a: &Allocation| recovery::delivered_eta(gains, mrrs, &a.bandwidth, &a.power);
                if eta(&polished) >= eta(&barrier) {
                    polished
                } else {
                    barrier
                }
            } else {
                barrier
            };
            Ok(finish(
                gains,
                mrrs,
                p_max,
                cp.dual,
                bound,
                allocation,
                method,
                cp.newton_steps,
            ))
        }
    }
}

/// Water-filling densities at `dual` and the recovery LP.
fn lp_recovery(
    gains: &UserSlotMatrix,
    mrrs: &[f64],
    p_max: f64,
    dual: &DualState,
) -> Result<Allocation, AllocationError> {
    let densities = recovery::waterfill_densities(gains, dual, p_max);
    let recovered = recovery::recover_allocation(gains, mrrs, p_max, &densities)?;
    Ok(Allocation {
        bandwidth: recovered.bandwidth,
        power: recovered.power,
    })
}

/// Refits the per-slot multipliers against `allocation` and assembles the
/// diagnostics.
#[allow(clippy::too_many_arguments)]
fn finish(
    gains: &UserSlotMatrix,
    mrrs: &[f64],
    p_max: f64,
    dual: DualState,
    dual_bound: f64,
    allocation: Allocation,
    method: SearchMethod,
    iterations: usize,
) -> AllocationSolution {
    let eta = recovery::delivered_eta(gains, mrrs, &allocation.bandwidth, &allocation.power);
    // The search leaves the per-slot multipliers loosely determined along
    // flat directions of the dual; re-estimate them against the allocation.
    let refit = recovery::refit_slot_multipliers(gains, &allocation.bandwidth, &allocation.power, &dual);
    let refit_bound = dual_function(gains, mrrs, p_max, &refit, f64::INFINITY).value;
    let (dual, dual_bound) = if refit_bound <= dual_bound * (1.0 + 1e-9) {
        (refit, refit_bound)
    } else {
        (dual, dual_bound)
    };
    let kkt = recovery::kkt_report(
        gains,
        mrrs,
        p_max,
        &allocation.bandwidth,
        &allocation.power,
        eta,
        &dual,
        dual_bound,
    );
    AllocationSolution {
        eta,
        allocation,
        dual,
        dual_bound,
        kkt,
        method,
        iterations,
    }
}

/// Primal allocation for a given (converged) dual point.
pub fn recover_primal(
    scenario: &Scenario,
    trajectory: &Trajectory,
    mrrs: &[f64],
    dual: &DualState,
) -> Result<AllocationSolution, AllocationError> {
    let gains = gain_over_noise(scenario, trajectory);
    validate(&gains, mrrs)?;
    if dual.users() != gains.users() || dual.slots() != gains.slots() {
        return Err(AllocationError::Shape("dual state does not match the scenario".into()));
    }
    // The dual function is positively homogeneous, so rescaling onto the
    // boundedness set keeps the densities and yields a valid bound.
    let weight = dual.eta_weight(mrrs);
    let dual = if weight > 0.0 {
        dual.scaled(weight)
    } else {
        dual.clone()
    };
    let bound = dual_function(&gains, mrrs, scenario.p_max(), &dual, f64::INFINITY).value;
    let allocation = lp_recovery(&gains, mrrs, scenario.p_max(), &dual)?;
    Ok(finish(
        &gains,
        mrrs,
        scenario.p_max(),
        dual,
        bound,
        allocation,
        SearchMethod::Ellipsoid,
        0,
    ))
}
