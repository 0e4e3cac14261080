//! Parameter sweeps: one row per grid point, one column per trajectory kind.
//!
//! Every cell is cached under `out/cache/<hash>.json`, keyed by the SHA-256
//! of everything that determines its value, so an interrupted sweep resumes
//! by recomputing only the missing cells. Cells run on a bounded pool of
//! scoped threads; results are merged in grid order.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use uav_ofdma::allocation::solve_allocation_with;
use uav_ofdma::bcd::{solve_cell, BcdConfig, SweepMode, TrajectoryKind};
use uav_ofdma::{Scenario, Trajectory};

use crate::bundle::{write_atomic, TOOL_VERSION};
use crate::commands::ThetaSpec;
use crate::error::{CliError, Result};
use crate::scenario_file::{load_scenario_file, ScenarioFile};

#[derive(Debug, Clone, PartialEq)]
pub enum SweepAxis {
    /// One row per ratio setting.
    Theta(Vec<ThetaSpec>),
    /// One row per period at fixed ratios; the slot count is
    /// `round(T / slot_duration)`.
    Period {
        periods: Vec<f64>,
        theta: Option<ThetaSpec>,
        slot_duration: Option<f64>,
    },
}

#[derive(Debug, Clone)]
pub struct SweepOptions {
    pub axis: SweepAxis,
    pub mode: SweepMode,
    pub kinds: Vec<TrajectoryKind>,
    pub workers: usize,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepTableRow {
    /// Leading CSV fields describing the grid point.
    pub label: Vec<String>,
    pub cells: Vec<std::result::Result<f64, String>>,
}

#[derive(Debug, Clone)]
pub struct SweepSummary {
    pub header: Vec<String>,
    pub rows: Vec<SweepTableRow>,
    /// Jobs solved in this run (cells and fixed trajectories).
    pub computed: usize,
    /// Jobs answered from the cache.
    pub cached: usize,
    pub csv_path: PathBuf,
}

/// Cache record: a value or the error that replaced it.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct Record<T> {
    value: Option<T>,
    error: Option<String>,
}

impl<T> Record<T> {
    fn into_result(self) -> std::result::Result<T, String> {
        match (self.value, self.error) {
            (Some(v), _) => Ok(v),
            (None, e) => Err(e.unwrap_or_else(|| "missing value".into())),
        }
    }
}

fn key(parts: &serde_json::Value) -> String {
    let bytes = serde_json::to_vec(parts).expect("keys serialize");
    hex::encode(Sha256::digest(&bytes))
}

fn mode_name(mode: SweepMode) -> &'static str {
    match mode {
        SweepMode::FixedTrajectory => "fixed_trajectory",
        SweepMode::FullBcd => "full_bcd",
    }
}

/// Runs `job(i)` for `i < count` on at most `workers` threads.
fn run_pool<T: Send>(count: usize, workers: usize, job: impl Fn(usize) -> T + Sync) -> Vec<T> {
    let results: Mutex<Vec<Option<T>>> = Mutex::new((0..count).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..workers.clamp(1, count.max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= count {
                    break;
                }
                let value = job(i);
                results.lock().expect("no worker panics while holding the lock")[i] = Some(value);
            });
        }
    });
    results
        .into_inner()
        .expect("pool finished")
        .into_iter()
        .map(|v| v.expect("every job ran"))
        .collect()
}

struct Cache {
    dir: PathBuf,
    computed: AtomicUsize,
    cached: AtomicUsize,
}

impl Cache {
    fn get_or_compute<T: Serialize + for<'de> Deserialize<'de>>(
        &self,
        key: &str,
        compute: impl FnOnce() -> std::result::Result<T, String>,
    ) -> Result<std::result::Result<T, String>> {
        let path = self.dir.join(format!("{key}.json"));
        if let Ok(text) = std::fs::read_to_string(&path) {
            if let Ok(record) = serde_json::from_str::<Record<T>>(&text) {
                self.cached.fetch_add(1, Ordering::SeqCst);
                return Ok(record.into_result());
            }
        }
        let result = compute();
        let record = match &result {
            Ok(v) => serde_json::json!({ "value": v, "error": null }),
            Err(e) => serde_json::json!({ "value": null, "error": e }),
        };
        write_atomic(&path, (record.to_string() + "\n").as_bytes())?;
        log::info!("computed {key}");
        self.computed.fetch_add(1, Ordering::SeqCst);
        Ok(result)
    }
}

/// Grid point: CSV label plus the scenario file it is solved on.
struct GridPoint {
    label: Vec<String>,
    file: ScenarioFile,
}

fn grid_points(base: &ScenarioFile, scenario: &Scenario, axis: &SweepAxis) -> Result<(Vec<String>, Vec<GridPoint>)> {
    let users = scenario.num_users();
    let with_theta = |file: &ScenarioFile, theta: &[f64]| {
        let mut f = file.clone();
        for (u, &t) in f.users.iter_mut().zip(theta) {
            u.mrr = t;
        }
        f
    };
    match axis {
        SweepAxis::Theta(specs) => {
            let mut points = Vec::new();
            for spec in specs {
                let theta = spec.resolve(users)?;
                let label = match spec {
                    ThetaSpec::Uniform(v) => v.to_string(),
                    ThetaSpec::PerUser(v) => v.iter().map(f64::to_string).collect::<Vec<_>>().join(" "),
                };
                points.push(GridPoint {
                    label: vec![label],
                    file: with_theta(base, &theta),
                });
            }
            Ok((vec!["theta".into()], points))
        }
        SweepAxis::Period {
            periods,
            theta,
            slot_duration,
        } => {
            let theta = match theta {
                Some(spec) => spec.resolve(users)?,
                None => scenario.mrrs(),
            };
            let dt = slot_duration.unwrap_or(scenario.slot_duration());
            if !(dt > 0.0) {
                return Err(CliError::Validation("--slot-duration must be positive".into()));
            }
            let mut points = Vec::new();
            for &period in periods {
                let slots = (period / dt).round() as usize;
                let mut file = with_theta(base, &theta);
                file.uav.period_s = period;
                file.uav.slots = slots;
                file.scenario()?;
                points.push(GridPoint {
                    label: vec![period.to_string(), slots.to_string()],
                    file,
                });
            }
            Ok((vec!["period_s".into(), "slots".into()], points))
        }
    }
}

pub fn cmd_sweep(scenario_path: &Path, options: &SweepOptions) -> Result<SweepSummary> {
    let (base, scenario) = load_scenario_file(scenario_path)?;
    if options.kinds.is_empty() {
        return Err(CliError::Validation("at least one trajectory kind is required".into()));
    }
    let (mut header, points) = grid_points(&base, &scenario, &options.axis)?;
    header.extend(options.kinds.iter().map(|k| k.name().to_string()));
    let cache = Cache {
        dir: options.out.join("cache"),
        computed: AtomicUsize::new(0),
        cached: AtomicUsize::new(0),
    };
    let scenarios: Vec<(Scenario, BcdConfig)> = points
        .iter()
        .map(|p| {
            let s = p.file.scenario()?;
            let c = p.file.bcd_config(&s)?;
            Ok((s, c))
        })
        .collect::<Result<_>>()?;
    let kinds = &options.kinds;
    let n_kinds = kinds.len();

    // Fixed mode: one trajectory per (grid point with zero ratios, kind),
    // shared by every point with the same zero-ratio scenario.
    let base_keys: Vec<String> = points
        .iter()
        .flat_map(|p| {
            let mut zero = p.file.clone();
            zero.users.iter_mut().for_each(|u| u.mrr = 0.0);
            kinds.iter().map(move |k| {
                key(&serde_json::json!({
                    "version": TOOL_VERSION,
                    "job": "fixed_trajectory",
                    "scenario": zero.to_toml(),
                    "kind": k.name(),
                }))
            })
        })
        .collect();
    let base_trajectories: Vec<Option<std::result::Result<Vec<[f64; 2]>, String>>> = match options.mode {
        SweepMode::FullBcd => vec![None; base_keys.len()],
        SweepMode::FixedTrajectory => {
            let mut unique: Vec<usize> = Vec::new();
            for (i, k) in base_keys.iter().enumerate() {
                if !unique.iter().any(|&j| base_keys[j] == *k) {
                    unique.push(i);
                }
            }
            let solved = run_pool(unique.len(), options.workers, |u| {
                let i = unique[u];
                let (scenario, config) = &scenarios[i / n_kinds];
                let zero = vec![0.0; scenario.num_users()];
                cache.get_or_compute(&base_keys[i], || {
                    let s = scenario.with_mrrs(&zero).map_err(|e| e.to_string())?;
                    solve_cell(&s, kinds[i % n_kinds], &zero, config)
                        .map(|(t, _, _)| t.waypoints)
                        .map_err(|e| e.to_string())
                })
            });
            let mut by_key = Vec::new();
            for (u, r) in unique.iter().zip(solved) {
                by_key.push((base_keys[*u].clone(), r?));
            }
            base_keys
                .iter()
                .map(|k| by_key.iter().find(|(bk, _)| bk == k).map(|(_, r)| r.clone()))
                .collect()
        }
    };

    let cells = run_pool(points.len() * n_kinds, options.workers, |c| {
        let (row, col) = (c / n_kinds, c % n_kinds);
        let (scenario, config) = &scenarios[row];
        let theta = scenario.mrrs();
        let cell_key = key(&serde_json::json!({
            "version": TOOL_VERSION,
            "job": "cell",
            "mode": mode_name(options.mode),
            "scenario": points[row].file.to_toml(),
            "kind": kinds[col].name(),
            "trajectory_key": match options.mode {
                SweepMode::FixedTrajectory => Some(&base_keys[c]),
                SweepMode::FullBcd => None,
            },
        }));
        cache.get_or_compute(&cell_key, || match &base_trajectories[c] {
            None => solve_cell(scenario, kinds[col], &theta, config)
                .map(|(_, _, eta)| eta)
                .map_err(|e| e.to_string()),
            Some(Err(e)) => Err(e.clone()),
            Some(Ok(waypoints)) => {
                let t = Trajectory::new(waypoints.clone());
                solve_allocation_with(scenario, &t, &theta, &config.allocation)
                    .map(|sol| sol.eta)
                    .map_err(|e| e.to_string())
            }
        })
    });
    let mut rows = Vec::with_capacity(points.len());
    let mut cells = cells.into_iter();
    for p in &points {
        let mut row = Vec::with_capacity(n_kinds);
        for _ in 0..n_kinds {
            row.push(cells.next().expect("one result per cell")?);
        }
        rows.push(SweepTableRow {
            label: p.label.clone(),
            cells: row,
        });
    }

    let csv_path = options.out.join("sweep.csv");
    write_atomic(&csv_path, &sweep_csv(&header, &rows)?)?;
    Ok(SweepSummary {
        header,
        rows,
        computed: cache.computed.load(Ordering::SeqCst),
        cached: cache.cached.load(Ordering::SeqCst),
        csv_path,
    })
}

/// Table with one line per grid point; failed cells hold `error: <message>`.
pub fn sweep_csv(header: &[String], rows: &[SweepTableRow]) -> Result<Vec<u8>> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    let to_err = |e: csv::Error| CliError::Solver(format!("csv: {e}"));
    writer.write_record(header).map_err(to_err)?;
    for row in rows {
        let mut record = row.label.clone();
        record.extend(row.cells.iter().map(|c| match c {
            Ok(eta) => eta.to_string(),
            Err(e) => format!("error: {e}"),
        }));
        writer.write_record(&record).map_err(to_err)?;
    }
    writer.into_inner().map_err(|e| CliError::Solver(format!("csv: {e}")))
}
