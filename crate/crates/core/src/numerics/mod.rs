//! Domain-free numerical kernels: ellipsoid localizer, simplex LP solver,
//! banded factorization and barrier QCQP solver.

pub mod banded;
pub mod ellipsoid;
pub mod lp;
pub mod qcqp;

pub use ellipsoid::{ellipsoid_step, Ellipsoid, EllipsoidError};
pub use lp::{solve_lp, LinearProgram, LpError, LpSolution, LpStatus, RowKind};
pub use qcqp::{solve_qcqp, ConvexQcqp, QcqpError, QcqpSolution, QuadraticConstraint};
