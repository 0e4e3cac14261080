//! Scenario files, solver commands and result persistence for the
//! `uav-ofdma` command-line tool.

// `!(x > 0.0)` is used on purpose so NaN fails the check; solver loops
// index several parallel arrays at once.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod bundle;
pub mod commands;
pub mod error;
pub mod scenario_file;
pub mod sweep;

pub use bundle::ResultBundle;
pub use commands::{cmd_baseline, cmd_solve, cmd_validate, SolveOptions, ThetaSpec};
pub use error::CliError;
pub use scenario_file::{load_scenario, ScenarioFile};
pub use sweep::{cmd_sweep, SweepAxis, SweepOptions};
