//! Joint EV battery-swapping assignment and optimal power flow on radial
//! distribution feeders.
//!
//! The convex relaxation (SOCP branch-flow OPF plus fractional station
//! assignment) is solved three ways: centrally ([`oracle`]), by ADMM between
//! a utility and a station operator ([`admm`]), and by dual decomposition
//! with EVs answering price signals ([`dualdecomp`]). [`simnet`] runs the
//! distributed algorithms as message-passing sessions and audits what
//! crosses entity boundaries.

pub mod admm;
pub mod cli;
pub mod conic;
pub mod dualdecomp;
pub mod fixtures;
pub mod fleet;
pub mod grid;
pub mod oracle;
pub mod simnet;

pub use grid::{load_feeder, validate_radial, Grid, GridError};
