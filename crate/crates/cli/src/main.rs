use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use uav_ofdma::bcd::{SweepMode, TrajectoryKind};
use uav_ofdma_cli::bundle::write_atomic;
use uav_ofdma_cli::commands::{cmd_baseline, cmd_solve, cmd_validate, SolveOptions, ThetaSpec};
use uav_ofdma_cli::error::{CliError, Result};
use uav_ofdma_cli::sweep::{cmd_sweep, SweepAxis, SweepOptions};

#[derive(Parser)]
#[command(
    name = "uav-ofdma",
    version,
    about = "Joint UAV trajectory and OFDMA resource allocation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Proposed,
    Circular,
    Static,
    FlyAndHover,
}

impl From<KindArg> for TrajectoryKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Proposed => TrajectoryKind::Proposed,
            KindArg::Circular => TrajectoryKind::Circular,
            KindArg::Static => TrajectoryKind::Static,
            KindArg::FlyAndHover => TrajectoryKind::FlyAndHover,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Fixed,
    Full,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one scenario and write a result bundle.
    Solve {
        scenario: PathBuf,
        /// One ratio for all users, or a comma-separated list per user.
        #[arg(long)]
        theta: Option<String>,
        #[arg(long, value_enum, default_value = "proposed")]
        trajectory: KindArg,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Trajectory CSV sampling interval, seconds.
        #[arg(long, default_value_t = 4.0)]
        sample_interval: f64,
        /// Solve twice and fail unless the bundles are identical.
        #[arg(long)]
        seedless: bool,
    },
    /// Allocation-only solves on the static, circular and fly-and-hover
    /// trajectories.
    Baseline {
        scenario: PathBuf,
        #[arg(long)]
        theta: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Tabulate η over a ratio grid or a period grid.
    Sweep {
        scenario: PathBuf,
        /// Semicolon-separated grid points, each a `--theta` value.
        #[arg(long, conflicts_with = "periods")]
        thetas: Option<String>,
        /// Comma-separated periods in seconds.
        #[arg(long)]
        periods: Option<String>,
        /// Ratios for a period sweep.
        #[arg(long, requires = "periods")]
        theta: Option<String>,
        /// Slot length for a period sweep; the scenario's by default.
        #[arg(long, requires = "periods")]
        slot_duration: Option<f64>,
        #[arg(long, value_enum, default_value = "fixed")]
        mode: ModeArg,
        /// Comma-separated trajectory kinds; all four by default.
        #[arg(long, value_enum, value_delimiter = ',')]
        kinds: Option<Vec<KindArg>>,
        #[arg(long, default_value_t = default_workers())]
        workers: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check a scenario file and, optionally, a result bundle.
    Validate {
        scenario: PathBuf,
        #[arg(long)]
        bundle: Option<PathBuf>,
    },
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn parse_list(text: &str, what: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| CliError::Validation(format!("{what}: `{}` is not a number", v.trim())))
        })
        .collect()
}

fn print_json(value: &impl serde::Serialize) {
    println!("{}", serde_json::to_string_pretty(value).expect("reports serialize"));
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Solve {
            scenario,
            theta,
            trajectory,
            out,
            sample_interval,
            seedless,
        } => {
            let options = SolveOptions {
                theta: theta.as_deref().map(ThetaSpec::parse).transpose()?,
                trajectory: trajectory.into(),
                out,
                sample_interval,
                seedless,
            };
            let outcome = cmd_solve(&scenario, &options)?;
            print_json(&serde_json::json!({
                "eta": outcome.bundle.eta,
                "throughput": outcome.bundle.throughput,
                "termination": outcome.bundle.termination,
                "determinism_hash": outcome.bundle.determinism_hash,
                "wall_time_s": outcome.timing.wall_time_s,
            }));
            Ok(())
        }
        Command::Baseline { scenario, theta, out } => {
            let theta = theta.as_deref().map(ThetaSpec::parse).transpose()?;
            let entries = cmd_baseline(&scenario, theta, out.as_deref())?;
            print_json(&entries);
            Ok(())
        }
        Command::Sweep {
            scenario,
            thetas,
            periods,
            theta,
            slot_duration,
            mode,
            kinds,
            workers,
            out,
        } => {
            let axis = match (thetas, periods) {
                (_, Some(p)) => SweepAxis::Period {
                    periods: parse_list(&p, "--periods")?,
                    theta: theta.as_deref().map(ThetaSpec::parse).transpose()?,
                    slot_duration,
                },
                (Some(t), None) => SweepAxis::Theta(t.split(';').map(ThetaSpec::parse).collect::<Result<_>>()?),
                (None, None) => return Err(CliError::Validation("sweep needs --thetas or --periods".into())),
            };
            let options = SweepOptions {
                axis,
                mode: match mode {
                    ModeArg::Fixed => SweepMode::FixedTrajectory,
                    ModeArg::Full => SweepMode::FullBcd,
                },
                kinds: kinds.map_or(TrajectoryKind::ALL.to_vec(), |k| {
                    k.into_iter().map(Into::into).collect()
                }),
                workers,
                out,
            };
            let summary = cmd_sweep(&scenario, &options)?;
            print_json(&serde_json::json!({
                "csv": summary.csv_path,
                "computed": summary.computed,
                "cached": summary.cached,
            }));
            Ok(())
        }
        Command::Validate { scenario, bundle } => {
            print_json(&cmd_validate(&scenario, bundle.as_deref())?);
            Ok(())
        }
    }
}

fn out_dir(cli: &Cli) -> Option<PathBuf> {
    match &cli.command {
        Command::Solve { out, .. } | Command::Baseline { out, .. } => out.clone(),
        Command::Sweep { out, .. } => Some(out.clone()),
        Command::Validate { .. } => None,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let out = out_dir(&cli);
    match run(cli) {
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            let record = serde_json::to_string(&e.record()).expect("records serialize");
            eprintln!("{record}");
            if let Some(dir) = out {
                if let Err(write) = write_atomic(&dir.join("error.json"), (record + "\n").as_bytes()) {
                    log::warn!("could not write error.json: {write}");
                }
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
