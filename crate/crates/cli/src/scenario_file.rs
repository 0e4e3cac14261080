//! TOML scenario files. Every dimensional key carries its unit as a suffix;
//! unknown keys are rejected.
//!
//! ```toml
//! [uav]
//! altitude_m = 500.0
//! v_max_mps = 50.0
//! p_max_w = 0.1
//! period_s = 270.0
//! slots = 540
//! bandwidth_hz = 10000000.0
//! noise_psd_dbm_hz = -169.0
//! ref_gain_db = -50.0
//!
//! [[users]]
//! position_m = [400.0, 400.0]
//! mrr = 0.0
//!
//! [solver]            # optional
//! l_max = 10
//! epsilon = 0.001
//! max_outer_iterations = 60
//! schedule = "accelerating"
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use uav_ofdma::bcd::{AnnealingSchedule, BcdConfig};
use uav_ofdma::{Scenario, UavParams, UserSpec};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UavSection {
    pub altitude_m: f64,
    pub v_max_mps: f64,
    pub p_max_w: f64,
    pub period_s: f64,
    pub slots: usize,
    pub bandwidth_hz: f64,
    pub noise_psd_dbm_hz: f64,
    pub ref_gain_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserSection {
    pub position_m: [f64; 2],
    pub mrr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    #[serde(default = "default_l_max")]
    pub l_max: usize,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_max_outer")]
    pub max_outer_iterations: usize,
    #[serde(default)]
    pub schedule: Schedule,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    #[default]
    Accelerating,
    Constant,
}

fn default_l_max() -> usize {
    10
}

fn default_epsilon() -> f64 {
    1e-3
}

fn default_max_outer() -> usize {
    60
}

impl Default for SolverSection {
    fn default() -> Self {
        Self {
            l_max: default_l_max(),
            epsilon: default_epsilon(),
            max_outer_iterations: default_max_outer(),
            schedule: Schedule::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub uav: UavSection,
    pub users: Vec<UserSection>,
    #[serde(default)]
    pub solver: SolverSection,
}

impl ScenarioFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::Validation(format!("scenario file: {e}")))
    }

    /// Canonical text form; parsing it back yields an identical value.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario files always serialize")
    }

    pub fn from_scenario(scenario: &Scenario, solver: SolverSection) -> Self {
        let uav = scenario.uav();
        Self {
            uav: UavSection {
                altitude_m: uav.altitude,
                v_max_mps: uav.v_max,
                p_max_w: uav.p_max,
                period_s: uav.period,
                slots: uav.slots,
                bandwidth_hz: uav.bandwidth,
                noise_psd_dbm_hz: uav.noise_psd_dbm_hz,
                ref_gain_db: uav.ref_gain_db,
            },
            users: scenario
                .users()
                .iter()
                .map(|u| UserSection {
                    position_m: u.position,
                    mrr: u.mrr,
                })
                .collect(),
            solver,
        }
    }

    pub fn scenario(&self) -> Result<Scenario> {
        let u = &self.uav;
        let uav = UavParams {
            altitude: u.altitude_m,
            v_max: u.v_max_mps,
            p_max: u.p_max_w,
            period: u.period_s,
            slots: u.slots,
            bandwidth: u.bandwidth_hz,
            noise_psd_dbm_hz: u.noise_psd_dbm_hz,
            ref_gain_db: u.ref_gain_db,
        };
        let users = self
            .users
            .iter()
            .map(|u| UserSpec {
                position: u.position_m,
                mrr: u.mrr,
            })
            .collect();
        Ok(Scenario::new(users, uav)?)
    }

    /// Solver defaults with the scenario's own ratios as targets.
    pub fn bcd_config(&self, scenario: &Scenario) -> Result<BcdConfig> {
        let s = &self.solver;
        if s.l_max == 0 || !(s.epsilon > 0.0) || s.max_outer_iterations == 0 {
            return Err(CliError::Validation(
                "solver: l_max and max_outer_iterations must be ≥ 1 and epsilon > 0".into(),
            ));
        }
        Ok(BcdConfig {
            l_max: s.l_max,
            epsilon: s.epsilon,
            max_outer_iterations: s.max_outer_iterations,
            schedule: match s.schedule {
                Schedule::Accelerating => AnnealingSchedule::Accelerating,
                Schedule::Constant => AnnealingSchedule::Constant,
            },
            ..BcdConfig::for_scenario(scenario)
        })
    }
}

/// Reads, parses and validates a scenario file.
pub fn load_scenario_file(path: &Path) -> Result<(ScenarioFile, Scenario)> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))?;
    let file = ScenarioFile::parse(&text)?;
    let scenario = file.scenario()?;
    Ok((file, scenario))
}

pub fn load_scenario(path: &Path) -> Result<Scenario> {
    load_scenario_file(path).map(|(_, s)| s)
}
