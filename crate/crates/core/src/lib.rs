//! Joint UAV trajectory and OFDMA resource allocation for max-min average
//! throughput with per-user minimum-rate-ratio constraints.

// `!(x > 0.0)` is used on purpose so NaN fails the check; solver loops
// index several parallel arrays at once.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod allocation;
pub mod bcd;
pub mod matrix;
pub mod numerics;
pub mod oracle;
pub mod scenario;
pub mod trajectory;

pub use matrix::UserSlotMatrix;
pub use scenario::{Allocation, Scenario, Trajectory, UavParams, UserSpec};
