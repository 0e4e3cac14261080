//! `solve`, `baseline` and `validate`.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use uav_ofdma::allocation::solve_allocation_with;
use uav_ofdma::bcd::{baseline_trajectory, run_bcd, BaselineKind, BcdConfig, Termination, TrajectoryKind};
use uav_ofdma::Scenario;

use crate::bundle::{check_bundle, trajectory_csv, write_atomic, BundleCheck, ResultBundle, SolveConfig};
use crate::error::{CliError, Result};
use crate::scenario_file::{load_scenario_file, ScenarioFile};

/// `--theta`: one value for every user, or one per user.
#[derive(Debug, Clone, PartialEq)]
pub enum ThetaSpec {
    Uniform(f64),
    PerUser(Vec<f64>),
}

impl ThetaSpec {
    /// Parses `0.4` or `0.1,0.2,0.3,0.4`.
    pub fn parse(text: &str) -> Result<Self> {
        let values: Vec<f64> = text
            .split(',')
            .map(|v| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|_| CliError::Validation(format!("--theta: `{}` is not a number", v.trim())))
            })
            .collect::<Result<_>>()?;
        if let Some(bad) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(CliError::Validation(format!("--theta: {bad} is outside [0, 1]")));
        }
        Ok(match values.as_slice() {
            [v] => ThetaSpec::Uniform(*v),
            _ => ThetaSpec::PerUser(values),
        })
    }

    pub fn resolve(&self, users: usize) -> Result<Vec<f64>> {
        match self {
            ThetaSpec::Uniform(v) => Ok(vec![*v; users]),
            ThetaSpec::PerUser(v) if v.len() == users => Ok(v.clone()),
            ThetaSpec::PerUser(v) => Err(CliError::Validation(format!(
                "--theta has {} values for {users} users",
                v.len()
            ))),
        }
    }
}

pub fn kind_flag_name(kind: TrajectoryKind) -> &'static str {
    match kind {
        TrajectoryKind::Proposed => "proposed",
        TrajectoryKind::FlyAndHover => "fly-and-hover",
        TrajectoryKind::Circular => "circular",
        TrajectoryKind::Static => "static",
    }
}

#[derive(Debug, Clone)]
pub struct SolveOptions {
    pub theta: Option<ThetaSpec>,
    pub trajectory: TrajectoryKind,
    pub out: Option<PathBuf>,
    /// Trajectory CSV sampling interval in seconds.
    pub sample_interval: f64,
    /// Solve twice and fail unless both bundles hash identically.
    pub seedless: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            theta: None,
            trajectory: TrajectoryKind::Proposed,
            out: None,
            sample_interval: 4.0,
            seedless: false,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Timing {
    pub wall_time_s: f64,
}

#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub bundle: ResultBundle,
    pub timing: Timing,
    pub trajectory_csv: String,
}

/// Solves one scenario file with the given flags.
pub fn solve_file(file: &ScenarioFile, scenario: &Scenario, options: &SolveOptions) -> Result<SolveOutcome> {
    if !(options.sample_interval > 0.0 && options.sample_interval.is_finite()) {
        return Err(CliError::Validation("--sample-interval must be positive".into()));
    }
    let theta = match &options.theta {
        Some(spec) => spec.resolve(scenario.num_users())?,
        None => scenario.mrrs(),
    };
    let scenario = scenario.with_mrrs(&theta)?;
    let mut echo = file.clone();
    for (u, &t) in echo.users.iter_mut().zip(&theta) {
        u.mrr = t;
    }
    let config = BcdConfig {
        theta_targets: theta.clone(),
        ..file.bcd_config(&scenario)?
    };
    let start = Instant::now();
    let (trajectory, allocation, eta, termination, iterations) = match options.trajectory {
        TrajectoryKind::Proposed => {
            let report = run_bcd(&scenario, &config)?;
            let termination = match report.termination {
                Termination::Converged => "converged",
                Termination::MaxIterations => "max_iterations",
                Termination::TrajectoryFailure => "trajectory_failure",
            };
            (
                report.trajectory,
                report.allocation,
                report.eta,
                termination,
                report.iterations,
            )
        }
        kind => {
            let baseline = match kind {
                TrajectoryKind::Static => BaselineKind::Static,
                TrajectoryKind::Circular => BaselineKind::Circular,
                _ => BaselineKind::FlyAndHover,
            };
            let trajectory = baseline_trajectory(&scenario, baseline)?;
            let sol = solve_allocation_with(&scenario, &trajectory, &theta, &config.allocation)?;
            (trajectory, sol.allocation, sol.eta, "allocation_only", Vec::new())
        }
    };
    let wall_time_s = start.elapsed().as_secs_f64();
    let solve_config = SolveConfig {
        trajectory: kind_flag_name(options.trajectory).to_string(),
        theta,
        sample_interval_s: options.sample_interval,
        seedless: options.seedless,
    };
    let bundle = ResultBundle::new(
        echo,
        &scenario,
        solve_config,
        &trajectory,
        &allocation,
        eta,
        termination.to_string(),
        iterations,
    );
    let csv = trajectory_csv(
        &trajectory,
        scenario.uav().period,
        scenario.slot_duration(),
        options.sample_interval,
    );
    Ok(SolveOutcome {
        bundle,
        timing: Timing { wall_time_s },
        trajectory_csv: csv,
    })
}

/// Writes `result.json`, `trajectory.csv` and `timing.json` into `dir`.
pub fn write_outcome(dir: &Path, outcome: &SolveOutcome) -> Result<()> {
    write_atomic(&dir.join("result.json"), outcome.bundle.to_json().as_bytes())?;
    write_atomic(&dir.join("trajectory.csv"), outcome.trajectory_csv.as_bytes())?;
    let timing = serde_json::to_string_pretty(&outcome.timing).expect("timing serializes") + "\n";
    write_atomic(&dir.join("timing.json"), timing.as_bytes())
}

pub fn cmd_solve(scenario_path: &Path, options: &SolveOptions) -> Result<SolveOutcome> {
    let (file, scenario) = load_scenario_file(scenario_path)?;
    let outcome = solve_file(&file, &scenario, options)?;
    if options.seedless {
        let again = solve_file(&file, &scenario, options)?;
        if again.bundle.determinism_hash != outcome.bundle.determinism_hash {
            return Err(CliError::Solver(format!(
                "non-deterministic result: hashes {} and {}",
                outcome.bundle.determinism_hash, again.bundle.determinism_hash
            )));
        }
    }
    if let Some(dir) = &options.out {
        write_outcome(dir, &outcome)?;
    }
    Ok(outcome)
}

#[derive(Debug, Clone, Serialize)]
pub struct BaselineEntry {
    pub trajectory: String,
    pub eta: Option<f64>,
    pub error: Option<String>,
}

/// Allocation-only solves on the three baseline trajectories; each bundle
/// goes to `out/<kind>/`.
pub fn cmd_baseline(scenario_path: &Path, theta: Option<ThetaSpec>, out: Option<&Path>) -> Result<Vec<BaselineEntry>> {
    let (file, scenario) = load_scenario_file(scenario_path)?;
    let mut entries = Vec::new();
    for kind in [
        TrajectoryKind::Static,
        TrajectoryKind::Circular,
        TrajectoryKind::FlyAndHover,
    ] {
        let options = SolveOptions {
            theta: theta.clone(),
            trajectory: kind,
            ..SolveOptions::default()
        };
        let name = kind_flag_name(kind).to_string();
        match solve_file(&file, &scenario, &options) {
            Ok(outcome) => {
                if let Some(dir) = out {
                    write_outcome(&dir.join(&name), &outcome)?;
                }
                entries.push(BaselineEntry {
                    trajectory: name,
                    eta: Some(outcome.bundle.eta),
                    error: None,
                });
            }
            // A bad flag fails every baseline alike.
            Err(e @ CliError::Validation(_)) if !matches!(kind, TrajectoryKind::FlyAndHover) => return Err(e),
            Err(e) => entries.push(BaselineEntry {
                trajectory: name,
                eta: None,
                error: Some(e.to_string()),
            }),
        }
    }
    if let Some(dir) = out {
        let text = serde_json::to_string_pretty(&entries).expect("entries serialize") + "\n";
        write_atomic(&dir.join("baselines.json"), text.as_bytes())?;
    }
    Ok(entries)
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub users: usize,
    pub slots: usize,
    pub slot_duration_s: f64,
    pub max_hop_m: f64,
    pub bundle: Option<BundleCheck>,
}

/// Validates a scenario file and, optionally, a result bundle against it.
pub fn cmd_validate(scenario_path: &Path, bundle_path: Option<&Path>) -> Result<ValidationReport> {
    let (file, scenario) = load_scenario_file(scenario_path)?;
    let bundle = match bundle_path {
        None => None,
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))?;
            let bundle = ResultBundle::from_json(&text)?;
            let mut expected = bundle.scenario.clone();
            for (u, f) in expected.users.iter_mut().zip(&file.users) {
                u.mrr = f.mrr;
            }
            if expected != file {
                return Err(CliError::Validation(
                    "bundle was produced from a different scenario".into(),
                ));
            }
            let check = check_bundle(&bundle)?;
            if !check.passes() {
                return Err(CliError::Validation(format!(
                    "bundle check failed: {}",
                    serde_json::to_string(&check).expect("check serializes")
                )));
            }
            Some(check)
        }
    };
    Ok(ValidationReport {
        users: scenario.num_users(),
        slots: scenario.slots(),
        slot_duration_s: scenario.slot_duration(),
        max_hop_m: scenario.max_hop(),
        bundle,
    })
}
