//! Finite-horizon optimal control problems as condensed QPs.

pub mod condense;
pub mod qp;
pub mod solve;

pub use condense::{build_condensed_qp, CondensedOcp, CostWeights, InitialCondition, OcpSpec};
pub use qp::{solve_qp, QpSolution, QuadraticProgram};
pub use solve::{solve_ocp, solve_ocp1_baseline, total_cost, OcpSolution};
