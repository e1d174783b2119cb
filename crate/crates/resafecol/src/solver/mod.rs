//! SQP solver with an ADMM QP subproblem solver.

pub mod qp;
pub mod sparse;
pub mod sqp;

pub use qp::{qp_solve, QpOptions, QpSolution, QpStatus, QpWarmStart};
pub use sparse::SparseRows;
pub use sqp::{sqp_solve, LineSearch, SolveOptions, SolveStats};
