use std::path::{Path, PathBuf};
use std::process::Command;

use uav_ofdma::bcd::{SweepMode, TrajectoryKind};
use uav_ofdma_cli::bundle::{check_bundle, ResultBundle};
use uav_ofdma_cli::commands::{cmd_baseline, cmd_solve, cmd_validate, SolveOptions, ThetaSpec};
use uav_ofdma_cli::error::CliError;
use uav_ofdma_cli::scenario_file::{load_scenario, load_scenario_file, ScenarioFile};
use uav_ofdma_cli::sweep::{cmd_sweep, SweepAxis, SweepOptions};

fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name)
}

fn desk() -> PathBuf {
    scenario_path("desk.toml")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

/// Desk scenario with its slot count replaced, for quick runs.
fn small_scenario(dir: &Path, slots: usize) -> PathBuf {
    let text = std::fs::read_to_string(desk())
        .unwrap()
        .replace("slots = 100", &format!("slots = {slots}"));
    write(dir, "small.toml", &text)
}

fn validation_message(result: Result<impl std::fmt::Debug, CliError>) -> String {
    match result {
        Err(CliError::Validation(msg)) => msg,
        other => panic!("expected a validation error, got {other:?}"),
    }
}

#[test]
fn shipped_scenarios_load() {
    let s = load_scenario(&scenario_path("default.toml")).unwrap();
    assert_eq!(s.num_users(), 4);
    assert_eq!(s.slots(), 540);
    assert_eq!(s.slot_duration(), 0.5);
    assert_eq!(s.max_hop(), 25.0);
    let d = load_scenario(&desk()).unwrap();
    assert_eq!(d.slots(), 100);
    assert!((d.slot_duration() - 2.7).abs() < 1e-12);
}

#[test]
fn missing_key_is_named() {
    let text = std::fs::read_to_string(desk())
        .unwrap()
        .replace("altitude_m = 500.0\n", "");
    let msg = validation_message(ScenarioFile::parse(&text));
    assert!(msg.contains("altitude_m"), "{msg}");
}

#[test]
fn ratio_out_of_range_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(desk())
        .unwrap()
        .replacen("mrr = 0.0", "mrr = 1.2", 1);
    let path = write(dir.path(), "bad.toml", &text);
    let msg = validation_message(load_scenario(&path));
    assert!(msg.contains("1.2"), "{msg}");
}

#[test]
fn unknown_key_is_rejected() {
    let text = std::fs::read_to_string(desk())
        .unwrap()
        .replace("[uav]\n", "[uav]\naltitude_ft = 1.0\n");
    let msg = validation_message(ScenarioFile::parse(&text));
    assert!(msg.contains("altitude_ft"), "{msg}");
}

#[test]
fn scenario_file_round_trips() {
    for name in ["default.toml", "desk.toml"] {
        let (file, scenario) = load_scenario_file(&scenario_path(name)).unwrap();
        let again = ScenarioFile::parse(&file.to_toml()).unwrap();
        assert_eq!(again, file);
        assert_eq!(again.scenario().unwrap(), scenario);
        let rebuilt = ScenarioFile::from_scenario(&scenario, file.solver.clone());
        assert_eq!(rebuilt, file);
    }
}

#[test]
fn solver_section_is_optional() {
    let text = std::fs::read_to_string(desk()).unwrap();
    let cut = text.find("[solver]").unwrap();
    let file = ScenarioFile::parse(&text[..cut]).unwrap();
    assert_eq!(file.solver, Default::default());
}

#[test]
fn theta_flag_parsing() {
    assert_eq!(ThetaSpec::parse("0.4").unwrap(), ThetaSpec::Uniform(0.4));
    assert_eq!(
        ThetaSpec::parse("0.1, 0.2,0.3,0.4").unwrap(),
        ThetaSpec::PerUser(vec![0.1, 0.2, 0.3, 0.4])
    );
    assert!(ThetaSpec::parse("1.5").is_err());
    assert!(ThetaSpec::parse("x").is_err());
    assert!(ThetaSpec::PerUser(vec![0.1, 0.2]).resolve(4).is_err());
}

#[test]
fn solve_writes_bundle_csv_and_timing() {
    let dir = tempfile::tempdir().unwrap();
    let path = small_scenario(dir.path(), 30);
    let out = dir.path().join("run");
    let options = SolveOptions {
        theta: Some(ThetaSpec::Uniform(0.4)),
        out: Some(out.clone()),
        ..SolveOptions::default()
    };
    let outcome = cmd_solve(&path, &options).unwrap();
    let text = std::fs::read_to_string(out.join("result.json")).unwrap();
    let bundle = ResultBundle::from_json(&text).unwrap();
    assert_eq!(bundle, outcome.bundle);
    assert_eq!(bundle.config.theta, vec![0.4; 4]);
    assert_eq!(bundle.scenario.users[0].mrr, 0.4);
    assert_eq!(bundle.trajectory.len(), 30);
    assert_eq!(bundle.bandwidth.len(), 4);
    assert!(bundle.bandwidth.iter().all(|r| r.len() == 30));
    assert!(!bundle.iterations.is_empty());
    let check = check_bundle(&bundle).unwrap();
    assert!(check.passes(), "{check:?}");
    assert!((check.recomputed_eta - bundle.eta).abs() <= 1e-9 * bundle.eta);
    let min_throughput = bundle.throughput.iter().cloned().fold(f64::INFINITY, f64::min);
    assert!(min_throughput >= bundle.eta * (1.0 - 1e-9));

    let csv = std::fs::read_to_string(out.join("trajectory.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "t_seconds,x_m,y_m");
    assert_eq!(lines.len() - 1, (270.0f64 / 4.0).floor() as usize + 1);
    assert!(lines.last().unwrap().starts_with("268,"));
    let timing: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("timing.json")).unwrap()).unwrap();
    assert!(timing["wall_time_s"].as_f64().unwrap() >= 0.0);

    let report = cmd_validate(&path, Some(&out.join("result.json"))).unwrap();
    assert!(report.bundle.unwrap().passes());
}

#[test]
fn sample_interval_sets_row_count() {
    let dir = tempfile::tempdir().unwrap();
    let path = small_scenario(dir.path(), 20);
    for (interval, rows) in [(4.0, 68), (2.7, 101), (1.0, 271), (100.0, 3)] {
        let options = SolveOptions {
            trajectory: TrajectoryKind::Static,
            sample_interval: interval,
            ..SolveOptions::default()
        };
        let outcome = cmd_solve(&path, &options).unwrap();
        assert_eq!(outcome.trajectory_csv.lines().count() - 1, rows, "interval {interval}");
    }
    let bad = SolveOptions {
        sample_interval: 0.0,
        ..SolveOptions::default()
    };
    validation_message(cmd_solve(&path, &bad));
}

#[test]
fn csv_interpolates_between_waypoints() {
    let dir = tempfile::tempdir().unwrap();
    let path = small_scenario(dir.path(), 20);
    let options = SolveOptions {
        trajectory: TrajectoryKind::Circular,
        sample_interval: 270.0 / 20.0 / 2.0,
        ..SolveOptions::default()
    };
    let outcome = cmd_solve(&path, &options).unwrap();
    let rows: Vec<Vec<f64>> = outcome
        .trajectory_csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    let wps = &outcome.bundle.trajectory;
    // Even rows land on waypoints, odd rows on chord midpoints.
    for (j, row) in rows.iter().enumerate().take(2 * (wps.len() - 1)) {
        let expect = if j % 2 == 0 {
            wps[j / 2]
        } else {
            let (a, b) = (wps[j / 2], wps[j / 2 + 1]);
            [(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0]
        };
        assert!(
            (row[1] - expect[0]).abs() < 1e-6 && (row[2] - expect[1]).abs() < 1e-6,
            "row {j}"
        );
    }
}

#[test]
fn baseline_trajectories_skip_the_trajectory_step() {
    let dir = tempfile::tempdir().unwrap();
    let path = small_scenario(dir.path(), 20);
    let options = SolveOptions {
        trajectory: TrajectoryKind::Static,
        ..SolveOptions::default()
    };
    let outcome = cmd_solve(&path, &options).unwrap();
    assert_eq!(outcome.bundle.termination, "allocation_only");
    assert!(outcome.bundle.iterations.is_empty());
    assert!(outcome
        .bundle
        .trajectory
        .iter()
        .all(|p| p[0].abs() < 1e-9 && p[1].abs() < 1e-9));

    let out = dir.path().join("baselines");
    let entries = cmd_baseline(&path, Some(ThetaSpec::Uniform(0.2)), Some(&out)).unwrap();
    let names: Vec<&str> = entries.iter().map(|e| e.trajectory.as_str()).collect();
    assert_eq!(names, ["static", "circular", "fly-and-hover"]);
    for e in &entries {
        let bundle =
            ResultBundle::from_json(&std::fs::read_to_string(out.join(&e.trajectory).join("result.json")).unwrap())
                .unwrap();
        assert_eq!(Some(bundle.eta), e.eta);
        assert!(check_bundle(&bundle).unwrap().passes());
    }
    assert!(out.join("baselines.json").exists());
}

#[test]
fn repeated_solves_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let path = small_scenario(dir.path(), 30);
    let run = |name: &str| {
        let out = dir.path().join(name);
        let options = SolveOptions {
            theta: Some(ThetaSpec::Uniform(0.5)),
            out: Some(out.clone()),
            seedless: true,
            ..SolveOptions::default()
        };
        let outcome = cmd_solve(&path, &options).unwrap();
        (
            outcome.bundle.determinism_hash,
            std::fs::read(out.join("result.json")).unwrap(),
        )
    };
    let (hash_a, bytes_a) = run("a");
    let (hash_b, bytes_b) = run("b");
    assert_eq!(hash_a, hash_b);
    assert_eq!(bytes_a, bytes_b);
}

#[test]
fn tampered_bundle_fails_validation() {
    let dir = tempfile::tempdir().unwrap();
    let path = small_scenario(dir.path(), 20);
    let out = dir.path().join("run");
    let options = SolveOptions {
        trajectory: TrajectoryKind::Circular,
        out: Some(out.clone()),
        ..SolveOptions::default()
    };
    let outcome = cmd_solve(&path, &options).unwrap();
    let mut bundle = outcome.bundle.clone();
    bundle.eta *= 1.01;
    let check = check_bundle(&bundle).unwrap();
    assert!(!check.hash_matches && !check.passes());
    let tampered = write(dir.path(), "tampered.json", &bundle.to_json());
    validation_message(cmd_validate(&path, Some(&tampered)));
    // A bundle from another scenario is refused.
    let other = small_scenario(&dir.path().join("other").tap_mkdir(), 21);
    validation_message(cmd_validate(&other, Some(&out.join("result.json"))));
}

trait TapMkdir {
    fn tap_mkdir(self) -> Self;
}

impl TapMkdir for PathBuf {
    fn tap_mkdir(self) -> Self {
        std::fs::create_dir_all(&self).unwrap();
        self
    }
}

fn theta_sweep_options(out: &Path, mode: SweepMode) -> SweepOptions {
    SweepOptions {
        axis: SweepAxis::Theta([0.0, 0.2, 0.4, 0.6, 0.8, 1.0].map(ThetaSpec::Uniform).to_vec()),
        mode,
        kinds: TrajectoryKind::ALL.to_vec(),
        workers: 2,
        out: out.to_path_buf(),
    }
}

#[test]
fn sweep_table_resumes_from_cache() {
    let dir = tempfile::tempdir().unwrap();
    let path = small_scenario(dir.path(), 24);
    let out = dir.path().join("sweep");
    let options = theta_sweep_options(&out, SweepMode::FixedTrajectory);
    let first = cmd_sweep(&path, &options).unwrap();
    assert_eq!(first.rows.len(), 6);
    assert!(first.rows.iter().all(|r| r.cells.len() == 4));
    // 24 cells plus 4 shared θ = 0 trajectories.
    assert_eq!((first.computed, first.cached), (28, 0));
    let csv = std::fs::read_to_string(&first.csv_path).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "theta,proposed,fly_and_hover,circular,static");
    assert_eq!(lines.len(), 7);
    // Fixed trajectories: every column is non-increasing in θ.
    for col in 0..4 {
        let etas: Vec<f64> = first.rows.iter().map(|r| *r.cells[col].as_ref().unwrap()).collect();
        assert!(etas.windows(2).all(|w| w[1] <= w[0] + 1e-6), "column {col}: {etas:?}");
    }

    let second = cmd_sweep(&path, &options).unwrap();
    assert_eq!((second.computed, second.cached), (0, 28));
    assert_eq!(second.rows, first.rows);

    let victim = std::fs::read_dir(out.join("cache"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| {
            let text = std::fs::read_to_string(p).unwrap();
            serde_json::from_str::<serde_json::Value>(&text).unwrap()["value"].is_number()
        })
        .unwrap();
    std::fs::remove_file(victim).unwrap();
    let third = cmd_sweep(&path, &options).unwrap();
    assert_eq!((third.computed, third.cached), (1, 27));
    assert_eq!(third.rows, first.rows);
    assert_eq!(std::fs::read_to_string(&third.csv_path).unwrap(), csv);
}

#[test]
fn full_mode_cells_match_single_solves() {
    let dir = tempfile::tempdir().unwrap();
    let path = small_scenario(dir.path(), 16);
    let mut options = theta_sweep_options(&dir.path().join("sweep"), SweepMode::FullBcd);
    options.axis = SweepAxis::Theta(vec![ThetaSpec::Uniform(0.0), ThetaSpec::Uniform(0.6)]);
    options.workers = 3;
    let summary = cmd_sweep(&path, &options).unwrap();
    for (row, theta) in summary.rows.iter().zip([0.0, 0.6]) {
        for (cell, kind) in row.cells.iter().zip(TrajectoryKind::ALL) {
            let solve = SolveOptions {
                theta: Some(ThetaSpec::Uniform(theta)),
                trajectory: kind,
                ..SolveOptions::default()
            };
            let eta = cmd_solve(&path, &solve).unwrap().bundle.eta;
            assert_eq!(*cell.as_ref().unwrap(), eta, "θ = {theta}, {}", kind.name());
        }
    }
}

#[test]
fn period_sweep_derives_slot_counts() {
    let dir = tempfile::tempdir().unwrap();
    let options = SweepOptions {
        axis: SweepAxis::Period {
            periods: vec![54.0, 81.0],
            theta: Some(ThetaSpec::Uniform(1.0)),
            slot_duration: None,
        },
        mode: SweepMode::FullBcd,
        kinds: vec![TrajectoryKind::Static, TrajectoryKind::Proposed],
        workers: 1,
        out: dir.path().join("sweep"),
    };
    let summary = cmd_sweep(&desk(), &options).unwrap();
    assert_eq!(summary.header, ["period_s", "slots", "static", "proposed"]);
    assert_eq!(summary.rows[0].label, ["54", "20"]);
    assert_eq!(summary.rows[1].label, ["81", "30"]);
}

#[test]
fn failed_cells_are_reported_and_cached() {
    let dir = tempfile::tempdir().unwrap();
    // 20 s is too short to visit the square and come back.
    let options = SweepOptions {
        axis: SweepAxis::Period {
            periods: vec![20.0],
            theta: Some(ThetaSpec::Uniform(0.0)),
            slot_duration: Some(1.0),
        },
        mode: SweepMode::FullBcd,
        kinds: vec![TrajectoryKind::Static, TrajectoryKind::FlyAndHover],
        workers: 1,
        out: dir.path().join("sweep"),
    };
    let first = cmd_sweep(&desk(), &options).unwrap();
    assert!(first.rows[0].cells[0].is_ok());
    assert!(first.rows[0].cells[1].is_err());
    let csv = std::fs::read_to_string(&first.csv_path).unwrap();
    assert!(csv.lines().nth(1).unwrap().contains("error: "), "{csv}");
    let second = cmd_sweep(&desk(), &options).unwrap();
    assert_eq!(second.computed, 0);
    assert_eq!(second.rows, first.rows);
}

fn binary(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_uav-ofdma"))
        .args(args)
        .output()
        .unwrap()
}

#[test]
fn binary_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let path = small_scenario(dir.path(), 12);
    let out = dir.path().join("ok");
    let ok = binary(&[
        "solve",
        path.to_str().unwrap(),
        "--trajectory",
        "static",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&ok.stdout).unwrap();
    assert!(summary["eta"].as_f64().unwrap() > 0.0);
    let valid = binary(&[
        "validate",
        path.to_str().unwrap(),
        "--bundle",
        out.join("result.json").to_str().unwrap(),
    ]);
    assert_eq!(valid.status.code(), Some(0));

    let err_out = dir.path().join("bad");
    let bad = binary(&[
        "solve",
        path.to_str().unwrap(),
        "--theta",
        "2",
        "--out",
        err_out.to_str().unwrap(),
    ]);
    assert_eq!(bad.status.code(), Some(2));
    let record: serde_json::Value =
        serde_json::from_slice(&std::fs::read(err_out.join("error.json")).unwrap()).unwrap();
    assert_eq!(record["error"], "validation");
    assert_eq!(record["exit_code"], 2);

    // A period too short for the tour is an input error too.
    let short = std::fs::read_to_string(&path)
        .unwrap()
        .replace("period_s = 270.0", "period_s = 20.0");
    let short = write(dir.path(), "short.toml", &short);
    let too_short = binary(&["solve", short.to_str().unwrap(), "--trajectory", "fly-and-hover"]);
    assert_eq!(too_short.status.code(), Some(2));
    let record: serde_json::Value = serde_json::from_slice(&too_short.stderr).unwrap();
    assert!(record["message"].as_str().unwrap().contains("period"));

    // Output under a regular file cannot be created.
    let blocked = write(dir.path(), "file", "");
    let io = binary(&[
        "solve",
        path.to_str().unwrap(),
        "--trajectory",
        "static",
        "--out",
        blocked.join("x").to_str().unwrap(),
    ]);
    assert_eq!(io.status.code(), Some(3), "{}", String::from_utf8_lossy(&io.stderr));
    // The record is the first stderr line; a warning about error.json follows.
    let stderr = String::from_utf8(io.stderr).unwrap();
    let record: serde_json::Value = serde_json::from_str(stderr.lines().next().unwrap()).unwrap();
    assert_eq!(record["error"], "io");
}
