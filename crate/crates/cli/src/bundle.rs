//! Result bundles, trajectory CSV export and atomic file writes.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use uav_ofdma::bcd::IterationRecord;
use uav_ofdma::scenario::{achievable_eta, average_throughputs, rate_matrix};
use uav_ofdma::{Allocation, Scenario, Trajectory, UserSlotMatrix};

use crate::error::{CliError, Result};
use crate::scenario_file::ScenarioFile;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Flags that shaped a solve, echoed into its bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveConfig {
    pub trajectory: String,
    pub theta: Vec<f64>,
    pub sample_interval_s: f64,
    pub seedless: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultBundle {
    pub version: String,
    pub scenario: ScenarioFile,
    pub config: SolveConfig,
    /// Max-min throughput, bps/Hz.
    pub eta: f64,
    /// Period-average throughput `R_k` per user, bps/Hz.
    pub throughput: Vec<f64>,
    /// Waypoints `(x, y)` in meters, one per slot.
    pub trajectory: Vec<[f64; 2]>,
    /// Bandwidth shares, `K` rows of `N` slots.
    pub bandwidth: Vec<Vec<f64>>,
    /// Transmit power in watts, `K × N`.
    pub power: Vec<Vec<f64>>,
    /// Instantaneous rates `r_k[n]`, bps/Hz, `K × N`.
    pub rates: Vec<Vec<f64>>,
    pub termination: String,
    pub iterations: Vec<IterationRecord>,
    /// SHA-256 of the bundle serialized with this field empty.
    pub determinism_hash: String,
}

fn rows(m: &UserSlotMatrix) -> Vec<Vec<f64>> {
    (0..m.users()).map(|k| m.row(k).to_vec()).collect()
}

fn matrix(rows: &[Vec<f64>]) -> Result<UserSlotMatrix> {
    let users = rows.len();
    let slots = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != slots) {
        return Err(CliError::Validation("bundle matrix rows have different lengths".into()));
    }
    Ok(UserSlotMatrix::from_fn(users, slots, |k, n| rows[k][n]))
}

impl ResultBundle {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        scenario_file: ScenarioFile,
        scenario: &Scenario,
        config: SolveConfig,
        trajectory: &Trajectory,
        allocation: &Allocation,
        eta: f64,
        termination: String,
        iterations: Vec<IterationRecord>,
    ) -> Self {
        let rates = rate_matrix(scenario, trajectory, allocation);
        let mut bundle = Self {
            version: TOOL_VERSION.to_string(),
            scenario: scenario_file,
            config,
            eta,
            throughput: average_throughputs(&rates),
            trajectory: trajectory.waypoints.clone(),
            bandwidth: rows(&allocation.bandwidth),
            power: rows(&allocation.power),
            rates: rows(&rates),
            termination,
            iterations,
            determinism_hash: String::new(),
        };
        bundle.determinism_hash = bundle.compute_hash();
        bundle
    }

    pub fn compute_hash(&self) -> String {
        let mut unhashed = self.clone();
        unhashed.determinism_hash.clear();
        let bytes = serde_json::to_vec(&unhashed).expect("bundles always serialize");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("bundles always serialize") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| CliError::Validation(format!("result bundle: {e}")))
    }

    pub fn allocation(&self) -> Result<Allocation> {
        Ok(Allocation {
            bandwidth: matrix(&self.bandwidth)?,
            power: matrix(&self.power)?,
        })
    }
}

/// Stored `η` against the value recomputed from the stored trajectory and
/// allocation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BundleCheck {
    pub stored_eta: f64,
    pub recomputed_eta: f64,
    pub hash_matches: bool,
    pub feasible: bool,
    pub worst_slack: f64,
}

impl BundleCheck {
    pub fn passes(&self) -> bool {
        self.hash_matches
            && self.feasible
            && (self.stored_eta - self.recomputed_eta).abs() <= 1e-9 * self.stored_eta.abs().max(1.0)
    }
}

pub fn check_bundle(bundle: &ResultBundle) -> Result<BundleCheck> {
    let scenario = bundle.scenario.scenario()?;
    let scenario = scenario.with_mrrs(&bundle.config.theta)?;
    let trajectory = Trajectory::new(bundle.trajectory.clone());
    let allocation = bundle.allocation()?;
    if allocation.users() != scenario.num_users() || allocation.slots() != trajectory.len() {
        return Err(CliError::Validation("bundle shapes do not match its scenario".into()));
    }
    let rates = rate_matrix(&scenario, &trajectory, &allocation);
    let recomputed_eta = achievable_eta(&rates, &bundle.config.theta);
    let report = uav_ofdma::scenario::check_feasibility(&scenario, &trajectory, &allocation, bundle.eta)?;
    Ok(BundleCheck {
        stored_eta: bundle.eta,
        recomputed_eta,
        hash_matches: bundle.compute_hash() == bundle.determinism_hash,
        feasible: report.is_feasible(),
        worst_slack: report.worst_slack(),
    })
}

/// Position at time `t` by linear interpolation between waypoints; slot `n`
/// starts at `n δ_t` and the last waypoint is held until `T`.
pub fn position_at(trajectory: &Trajectory, slot_duration: f64, t: f64) -> [f64; 2] {
    let wps = &trajectory.waypoints;
    let u = (t / slot_duration).max(0.0);
    let i = u.floor() as usize;
    if i + 1 >= wps.len() {
        return wps[wps.len() - 1];
    }
    let f = u - i as f64;
    [
        wps[i][0] + f * (wps[i + 1][0] - wps[i][0]),
        wps[i][1] + f * (wps[i + 1][1] - wps[i][1]),
    ]
}

/// CSV with columns `t_seconds,x_m,y_m`, one row every `interval` seconds
/// from 0 to `T` inclusive (`⌊T/interval⌋ + 1` rows).
pub fn trajectory_csv(trajectory: &Trajectory, period: f64, slot_duration: f64, interval: f64) -> String {
    let count = (period / interval + 1e-9).floor() as usize;
    let mut out = String::from("t_seconds,x_m,y_m\n");
    for j in 0..=count {
        let t = j as f64 * interval;
        let q = position_at(trajectory, slot_duration, t);
        out.push_str(&format!("{t},{},{}\n", q[0], q[1]));
    }
    out
}

/// Writes `contents` to `path` through a temporary file in the same
/// directory and an atomic rename.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(format!("creating {}", dir.display()), e))?;
    let mut tmp =
        tempfile::NamedTempFile::new_in(dir).map_err(|e| CliError::io(format!("temp file in {}", dir.display()), e))?;
    tmp.write_all(contents)
        .map_err(|e| CliError::io(format!("writing {}", path.display()), e))?;
    tmp.persist(path)
        .map_err(|e| CliError::io(format!("renaming into {}", path.display()), e.error))?;
    Ok(())
}
