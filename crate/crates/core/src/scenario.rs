//! System model: users, UAV parameters, trajectories, allocations and the
//! free-space rate formulas every solver builds on.
//!
//! All quantities are stored in linear SI units. The two logarithmic inputs
//! (noise power spectral density in dBm/Hz and the reference channel gain in
//! dB) are converted exactly once, when a [`Scenario`] is constructed.

use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::UserSlotMatrix;

/// Horizontal position in meters.
pub type Waypoint = [f64; 2];

#[inline]
pub fn dist2(a: Waypoint, b: Waypoint) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    dx * dx + dy * dy
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("invalid `{field}`: {reason}")]
    Invalid { field: &'static str, reason: String },
    #[error("{what} index {index} out of range (size {size})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        size: usize,
    },
    #[error("shape mismatch: {0}")]
    Shape(String),
}

fn invalid(field: &'static str, reason: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid {
        field,
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UserSpec {
    /// Ground position `w_k` in meters.
    pub position: Waypoint,
    /// Minimum-rate ratio `θ_k ∈ [0, 1]`.
    pub mrr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UavParams {
    /// Flight altitude `H` in meters.
    pub altitude: f64,
    /// Maximum horizontal speed in m/s.
    pub v_max: f64,
    /// Per-slot transmit power budget in watts.
    pub p_max: f64,
    /// Flight period `T` in seconds.
    pub period: f64,
    /// Number of time slots `N`.
    pub slots: usize,
    /// System bandwidth `B` in Hz.
    pub bandwidth: f64,
    /// Noise power spectral density `N_0` in dBm/Hz.
    pub noise_psd_dbm_hz: f64,
    /// Channel power gain at 1 m, in dB.
    pub ref_gain_db: f64,
}

/// Validated problem instance with the linear-scale constants precomputed.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    users: Vec<UserSpec>,
    uav: UavParams,
    ref_gain: f64,
    noise_psd: f64,
    gamma0: f64,
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

impl Scenario {
    pub fn new(users: Vec<UserSpec>, uav: UavParams) -> Result<Self, ScenarioError> {
        if users.is_empty() {
            return Err(invalid("users", "at least one user is required"));
        }
        for u in &users {
            if !(u.position[0].is_finite() && u.position[1].is_finite()) {
                return Err(invalid("position", "user position must be finite"));
            }
            if !(0.0..=1.0).contains(&u.mrr) {
                return Err(invalid("mrr", format!("{} is outside [0, 1]", u.mrr)));
            }
        }
        let positive = [
            ("altitude", uav.altitude),
            ("v_max", uav.v_max),
            ("p_max", uav.p_max),
            ("period", uav.period),
            ("bandwidth", uav.bandwidth),
        ];
        for (field, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(invalid(field, format!("{value} must be finite and > 0")));
            }
        }
        if uav.slots < 2 {
            return Err(invalid("slots", format!("{} must be at least 2", uav.slots)));
        }
        for (field, value) in [("noise_psd", uav.noise_psd_dbm_hz), ("ref_gain", uav.ref_gain_db)] {
            if !value.is_finite() {
                return Err(invalid(field, "must be finite"));
            }
        }
        for (i, a) in users.iter().enumerate() {
            if users[..i].iter().any(|b| b.position == a.position) {
                log::warn!("user {} shares its position {:?} with an earlier user", i, a.position);
            }
        }

        let ref_gain = db_to_linear(uav.ref_gain_db);
        let noise_psd = dbm_to_watts(uav.noise_psd_dbm_hz);
        let gamma0 = ref_gain / (uav.bandwidth * noise_psd);
        Ok(Self {
            users,
            uav,
            ref_gain,
            noise_psd,
            gamma0,
        })
    }

    pub fn users(&self) -> &[UserSpec] {
        &self.users
    }

    pub fn uav(&self) -> &UavParams {
        &self.uav
    }

    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn slots(&self) -> usize {
        self.uav.slots
    }

    pub fn user_position(&self, k: usize) -> Waypoint {
        self.users[k].position
    }

    pub fn mrrs(&self) -> Vec<f64> {
        self.users.iter().map(|u| u.mrr).collect()
    }

    /// `δ_t = T / N`.
    pub fn slot_duration(&self) -> f64 {
        self.uav.period / self.uav.slots as f64
    }

    /// `S_max = V_max · δ_t`.
    pub fn max_hop(&self) -> f64 {
        self.uav.v_max * self.slot_duration()
    }

    /// Reference channel gain in linear scale.
    pub fn ref_gain(&self) -> f64 {
        self.ref_gain
    }

    /// Noise power spectral density in W/Hz.
    pub fn noise_psd(&self) -> f64 {
        self.noise_psd
    }

    /// `γ_0 = ρ_0 / (B N_0)`.
    pub fn gamma0(&self) -> f64 {
        self.gamma0
    }

    pub fn altitude(&self) -> f64 {
        self.uav.altitude
    }

    pub fn p_max(&self) -> f64 {
        self.uav.p_max
    }

    /// Geometric center of the user positions.
    pub fn user_centroid(&self) -> Waypoint {
        let k = self.users.len() as f64;
        let (sx, sy) = self
            .users
            .iter()
            .fold((0.0, 0.0), |(x, y), u| (x + u.position[0], y + u.position[1]));
        [sx / k, sy / k]
    }

    /// Copy of this scenario with the minimum-rate ratios replaced.
    pub fn with_mrrs(&self, mrrs: &[f64]) -> Result<Self, ScenarioError> {
        if mrrs.len() != self.users.len() {
            return Err(ScenarioError::Shape(format!(
                "{} MRR values for {} users",
                mrrs.len(),
                self.users.len()
            )));
        }
        let users = self
            .users
            .iter()
            .zip(mrrs)
            .map(|(u, &mrr)| UserSpec {
                position: u.position,
                mrr,
            })
            .collect();
        Self::new(users, self.uav)
    }

    /// Copy with a different flight period and slot count.
    pub fn with_period(&self, period: f64, slots: usize) -> Result<Self, ScenarioError> {
        let uav = UavParams {
            period,
            slots,
            ..self.uav
        };
        Self::new(self.users.clone(), uav)
    }

    /// Channel gain divided by the noise power over the full band:
    /// `g = γ_0 / (H² + ‖q − w‖²)`.
    pub fn gain_over_noise_at(&self, q: Waypoint, k: usize) -> f64 {
        self.gamma0 / (self.uav.altitude.powi(2) + dist2(q, self.users[k].position))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub waypoints: Vec<Waypoint>,
}

impl Trajectory {
    pub fn new(waypoints: Vec<Waypoint>) -> Self {
        Self { waypoints }
    }

    /// `n` copies of the same point.
    pub fn hover(point: Waypoint, n: usize) -> Self {
        Self::new(vec![point; n])
    }

    pub fn len(&self) -> usize {
        self.waypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.waypoints.is_empty()
    }

    /// Longest distance between consecutive waypoints.
    pub fn max_hop(&self) -> f64 {
        self.waypoints
            .windows(2)
            .map(|w| dist2(w[0], w[1]).sqrt())
            .fold(0.0, f64::max)
    }

    /// `‖q[1] − q[N]‖`.
    pub fn closure_gap(&self) -> f64 {
        match (self.waypoints.first(), self.waypoints.last()) {
            (Some(&a), Some(&b)) => dist2(a, b).sqrt(),
            _ => 0.0,
        }
    }

    pub fn max_distance_from(&self, center: Waypoint) -> f64 {
        self.waypoints
            .iter()
            .map(|&q| dist2(q, center).sqrt())
            .fold(0.0, f64::max)
    }

    /// Largest pairwise distance between waypoints.
    pub fn spread(&self) -> f64 {
        let mut best: f64 = 0.0;
        for (i, &a) in self.waypoints.iter().enumerate() {
            for &b in &self.waypoints[i + 1..] {
                best = best.max(dist2(a, b));
            }
        }
        best.sqrt()
    }

    /// Total length of the closed polyline.
    pub fn path_length(&self) -> f64 {
        self.waypoints.windows(2).map(|w| dist2(w[0], w[1]).sqrt()).sum()
    }
}

/// Bandwidth fractions `α_k[n]` and transmit powers `p_k[n]` (watts).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub bandwidth: UserSlotMatrix,
    pub power: UserSlotMatrix,
}

impl Allocation {
    pub fn zeros(users: usize, slots: usize) -> Self {
        Self {
            bandwidth: UserSlotMatrix::zeros(users, slots),
            power: UserSlotMatrix::zeros(users, slots),
        }
    }

    /// Equal split of bandwidth and power in every slot.
    pub fn uniform(users: usize, slots: usize, p_max: f64) -> Self {
        let share = 1.0 / users as f64;
        Self {
            bandwidth: UserSlotMatrix::filled(users, slots, share),
            power: UserSlotMatrix::filled(users, slots, p_max * share),
        }
    }

    pub fn users(&self) -> usize {
        self.bandwidth.users()
    }

    pub fn slots(&self) -> usize {
        self.bandwidth.slots()
    }
}

fn check_indices(scenario: &Scenario, trajectory: &Trajectory, k: usize, n: usize) -> Result<(), ScenarioError> {
    if k >= scenario.num_users() {
        return Err(ScenarioError::IndexOutOfRange {
            what: "user",
            index: k,
            size: scenario.num_users(),
        });
    }
    if n >= trajectory.len() {
        return Err(ScenarioError::IndexOutOfRange {
            what: "slot",
            index: n,
            size: trajectory.len(),
        });
    }
    Ok(())
}

/// Free-space channel power gain `h_k[n] = ρ_0 / (H² + ‖q[n] − w_k‖²)`.
pub fn channel_gain(scenario: &Scenario, trajectory: &Trajectory, k: usize, n: usize) -> Result<f64, ScenarioError> {
    check_indices(scenario, trajectory, k, n)?;
    let d2 = scenario.altitude().powi(2) + dist2(trajectory.waypoints[n], scenario.user_position(k));
    Ok(scenario.ref_gain() / d2)
}

/// `g_k[n] = h_k[n] / (B N_0)` for every user and slot.
pub fn gain_over_noise(scenario: &Scenario, trajectory: &Trajectory) -> UserSlotMatrix {
    UserSlotMatrix::from_fn(scenario.num_users(), trajectory.len(), |k, n| {
        scenario.gain_over_noise_at(trajectory.waypoints[n], k)
    })
}

/// Rate of a user holding bandwidth fraction `alpha` and power `power` on a
/// channel with gain-to-noise ratio `gain`, in bps/Hz:
/// `α log2(1 + p g / α)`, extended by continuity to 0 at `α = 0`.
#[inline]
pub fn instantaneous_rate(alpha: f64, power: f64, gain: f64) -> f64 {
    if alpha <= 0.0 {
        return 0.0;
    }
    alpha * (power * gain / alpha).ln_1p() / LN_2
}

/// `r_k[n]` for every user and slot.
pub fn rate_matrix(scenario: &Scenario, trajectory: &Trajectory, allocation: &Allocation) -> UserSlotMatrix {
    let g = gain_over_noise(scenario, trajectory);
    UserSlotMatrix::from_fn(allocation.users(), allocation.slots(), |k, n| {
        instantaneous_rate(allocation.bandwidth.get(k, n), allocation.power.get(k, n), g.get(k, n))
    })
}

/// `R_k = (1/N) Σ_n r_k[n]`.
pub fn average_throughput(scenario: &Scenario, trajectory: &Trajectory, allocation: &Allocation, k: usize) -> f64 {
    let n_slots = trajectory.len();
    let sum: f64 = (0..n_slots)
        .map(|n| {
            let g = scenario.gain_over_noise_at(trajectory.waypoints[n], k);
            instantaneous_rate(allocation.bandwidth.get(k, n), allocation.power.get(k, n), g)
        })
        .sum();
    sum / n_slots as f64
}

pub fn average_throughputs(rates: &UserSlotMatrix) -> Vec<f64> {
    (0..rates.users())
        .map(|k| rates.row(k).iter().sum::<f64>() / rates.slots() as f64)
        .collect()
}

/// Largest `η` such that `R_k ≥ η` and `r_k[n] ≥ θ_k η` hold for the given
/// rates.
pub fn achievable_eta(rates: &UserSlotMatrix, mrrs: &[f64]) -> f64 {
    let mut eta = average_throughputs(rates).into_iter().fold(f64::INFINITY, f64::min);
    for (k, &theta) in mrrs.iter().enumerate() {
        if theta > 0.0 {
            for &r in rates.row(k) {
                eta = eta.min(r / theta);
            }
        }
    }
    eta
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConstraintKind {
    AverageThroughput { user: usize },
    MinRateRatio { user: usize, slot: usize },
    SlotPower { slot: usize },
    SlotBandwidth { slot: usize },
    BandwidthRange { user: usize, slot: usize },
    NonNegativePower { user: usize, slot: usize },
    PowerWithoutBandwidth { user: usize, slot: usize },
    Speed { hop: usize },
    Periodicity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub constraint: ConstraintKind,
    /// Signed slack; negative means violated.
    pub slack: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub violations: Vec<Violation>,
}

impl FeasibilityReport {
    pub fn is_feasible(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn worst_slack(&self) -> f64 {
        self.violations.iter().map(|v| v.slack).fold(0.0, f64::min)
    }
}

/// Tolerance used by [`check_feasibility_with`]: a constraint counts as
/// violated when its slack is below `-relative * max(1, |reference|)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeasibilityTolerance {
    pub relative: f64,
}

impl Default for FeasibilityTolerance {
    fn default() -> Self {
        Self { relative: 1e-6 }
    }
}

pub fn check_feasibility(
    scenario: &Scenario,
    trajectory: &Trajectory,
    allocation: &Allocation,
    eta: f64,
) -> Result<FeasibilityReport, ScenarioError> {
    check_feasibility_with(scenario, trajectory, allocation, eta, FeasibilityTolerance::default())
}

pub fn check_feasibility_with(
    scenario: &Scenario,
    trajectory: &Trajectory,
    allocation: &Allocation,
    eta: f64,
    tol: FeasibilityTolerance,
) -> Result<FeasibilityReport, ScenarioError> {
    let k_users = scenario.num_users();
    let n_slots = trajectory.len();
    if allocation.users() != k_users || allocation.slots() != n_slots {
        return Err(ScenarioError::Shape(format!(
            "allocation is {}x{}, expected {}x{}",
            allocation.users(),
            allocation.slots(),
            k_users,
            n_slots
        )));
    }
    let mut report = FeasibilityReport::default();
    let mut push = |constraint, slack: f64, reference: f64| {
        if slack < -tol.relative * reference.abs().max(1.0) {
            report.violations.push(Violation { constraint, slack });
        }
    };

    let rates = rate_matrix(scenario, trajectory, allocation);
    let averages = average_throughputs(&rates);
    for (k, &avg) in averages.iter().enumerate() {
        push(ConstraintKind::AverageThroughput { user: k }, avg - eta, eta);
    }
    for k in 0..k_users {
        let theta = scenario.users()[k].mrr;
        for n in 0..n_slots {
            push(
                ConstraintKind::MinRateRatio { user: k, slot: n },
                rates.get(k, n) - theta * eta,
                theta * eta,
            );
        }
    }
    let p_max = scenario.p_max();
    for n in 0..n_slots {
        push(
            ConstraintKind::SlotPower { slot: n },
            p_max - allocation.power.column_sum(n),
            p_max,
        );
        push(
            ConstraintKind::SlotBandwidth { slot: n },
            1.0 - allocation.bandwidth.column_sum(n),
            1.0,
        );
    }
    for k in 0..k_users {
        for n in 0..n_slots {
            let a = allocation.bandwidth.get(k, n);
            let p = allocation.power.get(k, n);
            push(ConstraintKind::BandwidthRange { user: k, slot: n }, a.min(1.0 - a), 1.0);
            push(ConstraintKind::NonNegativePower { user: k, slot: n }, p, p_max);
            if a == 0.0 {
                push(
                    ConstraintKind::PowerWithoutBandwidth { user: k, slot: n },
                    -p.abs(),
                    p_max,
                );
            }
        }
    }
    let s_max = scenario.max_hop();
    for (i, w) in trajectory.waypoints.windows(2).enumerate() {
        push(
            ConstraintKind::Speed { hop: i },
            s_max - dist2(w[0], w[1]).sqrt(),
            s_max,
        );
    }
    push(ConstraintKind::Periodicity, -trajectory.closure_gap(), s_max);
    Ok(report)
}
