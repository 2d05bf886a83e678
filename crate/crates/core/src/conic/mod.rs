//! Conic modelling: standard form, solver backends, the relaxed OPF builder
//! and exactness auditing.

pub mod cbf;
pub mod ipm;
pub mod opf;
pub mod problem;
pub mod solver;

pub use ipm::DenseIpmSolver;
pub use opf::{
    add_opf_block, build_opf, exactness_residuals, generation_cost, is_exact,
    max_relative_residual, CouplingObjective, LineResidual, OpfError, OpfLayout, OpfProblem,
    PowerFlowSolution, StationLoads, EPS_EXACT, EPS_FEAS,
};
pub use problem::{Affine, ConeBlock, ConicProblem, EqRow};
pub use solver::{ClarabelSolver, ConicSolution, ConicSolver, SolveError};
