//! ADMM coordination between the utility company and the station operator.
//!
//! Each iteration runs three sequential updates:
//!
//! 1. the utility solves the OPF x-update with the augmented-Lagrangian
//!    penalty around the current station loads and reports `w`;
//! 2. the operator solves the assignment u-update against the new `w` and
//!    the current `λ`, then takes the multiplier step
//!    `λ += ρ (w - r (M - m + u_j))`;
//! 3. the utility receives the per-station loads `r (M - m + u_j)` and
//!    repeats the same multiplier step on its own copy of `λ`.
//!
//! The entities exchange only `w` and per-station loads. How those vectors
//! travel is abstracted by [`AdmmLinks`] so the session simulator can route
//! them through a message log while running this exact loop.

use std::io::Write;

use serde::Serialize;
use thiserror::Error;

use crate::conic::{
    build_opf, generation_cost, ConicSolver, CouplingObjective, OpfError, PowerFlowSolution,
    StationLoads,
};
use crate::fleet::{
    aggregate, distances, nearest_assignment, u_update, AssignmentMatrix, DistanceMatrix,
    FleetError, Scenario,
};
use crate::grid::{BusId, Grid};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdmmParams {
    pub rho: f64,
    pub max_iters: usize,
    /// Consensus residual threshold (MW).
    pub eps_primal: f64,
    /// Relative objective change threshold.
    pub eps_obj: f64,
}

impl AdmmParams {
    /// Defaults: `ρ = 10`, 500 iterations, `eps_primal = 1e-4 r`, `eps_obj = 1e-6`.
    ///
    /// The residual is a few `r` MW while `λ` has to reach marginal
    /// generation costs of tens of $/MWh, so a unit step crawls whenever
    /// the price must cross a flat stretch of the cost curve.
    pub fn for_rate(r_mw: f64) -> Self {
        AdmmParams {
            rho: 10.0,
            max_iters: 500,
            eps_primal: 1e-4 * r_mw,
            eps_obj: 1e-6,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(format!("rho must be positive, got {}", self.rho));
        }
        if self.max_iters == 0 {
            return Err("max_iters must be at least 1".into());
        }
        if !(self.eps_primal > 0.0 && self.eps_obj >= 0.0) {
            return Err("tolerances must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdmmRecord {
    pub iter: usize,
    /// `λ(n+1)` after the multiplier step.
    pub lambda: Vec<f64>,
    /// `w(n+1)` from the x-update.
    pub w: Vec<f64>,
    /// `u_j(n+1)` from the u-update.
    pub u_agg: Vec<f64>,
    /// `max_j |w_j - r (M_j - m_j + u_j)|` in MW.
    pub residual: f64,
    /// `f(x(n+1)) + g(u(n+1))`.
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdmmTrace {
    pub station_buses: Vec<BusId>,
    pub records: Vec<AdmmRecord>,
}

impl AdmmTrace {
    /// CSV with columns `iter, lambda_<bus>.., w_<bus>.., uj_<bus>.., residual, objective`.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        let mut header = vec!["iter".to_string()];
        for prefix in ["lambda", "w", "uj"] {
            header.extend(self.station_buses.iter().map(|b| format!("{prefix}_{b}")));
        }
        header.push("residual".into());
        header.push("objective".into());
        wtr.write_record(&header)?;
        for r in &self.records {
            let mut row = vec![r.iter.to_string()];
            for v in r.lambda.iter().chain(&r.w).chain(&r.u_agg) {
                row.push(v.to_string());
            }
            row.push(r.residual.to_string());
            row.push(r.objective.to_string());
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Result of an ADMM run: the returned iterate and the full trace.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdmmOutcome {
    pub power_flow: PowerFlowSolution,
    pub assignment: AssignmentMatrix,
    pub objective: f64,
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
    pub trace: AdmmTrace,
}

#[derive(Debug, Clone, Error)]
pub enum AdmmError {
    #[error(transparent)]
    Fleet(#[from] FleetError),
    #[error(transparent)]
    Opf(#[from] OpfError),
    #[error("transport: {0}")]
    Transport(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("ADMM did not converge in {max_iters} iterations (best residual {:.3e} MW)", best.residual)]
    NonConvergence {
        max_iters: usize,
        best: Box<AdmmOutcome>,
    },
}

/// `λ_j + ρ (w_j - t_j)` for every station. Both entities call this.
pub fn lambda_step(lambda: &[f64], rho: f64, w: &[f64], target: &[f64]) -> Vec<f64> {
    lambda
        .iter()
        .zip(w.iter().zip(target))
        .map(|(l, (wj, tj))| l + rho * (wj - tj))
        .collect()
}

/// Starting point: nearest in-range station for every EV and `λ = 0`.
pub fn initialize(scen: &Scenario) -> Result<(AssignmentMatrix, Vec<f64>), FleetError> {
    let d = distances(&scen.evs, &scen.stations);
    Ok((nearest_assignment(scen, &d)?, vec![0.0; scen.n_stations()]))
}

/// The utility's side: grid data, its copy of `λ`, and the last OPF point.
pub struct AdmmUtility<'a> {
    grid: &'a Grid,
    /// Loads equal their argument: targets arrive already in MW.
    stations: StationLoads,
    rho: f64,
    lambda: Vec<f64>,
    solver: &'a dyn ConicSolver,
    last: Option<PowerFlowSolution>,
}

impl<'a> AdmmUtility<'a> {
    pub fn new(grid: &'a Grid, station_buses: Vec<BusId>, rho: f64, solver: &'a dyn ConicSolver) -> Self {
        let n = station_buses.len();
        AdmmUtility {
            grid,
            stations: StationLoads {
                bus: station_buses,
                total: vec![0.0; n],
                available: vec![0.0; n],
                rate_mw: 1.0,
            },
            rho,
            lambda: vec![0.0; n],
            solver,
            last: None,
        }
    }

    /// x-update around the station loads `target` (MW); returns `w`.
    pub fn x_update(&mut self, target: &[f64]) -> Result<Vec<f64>, OpfError> {
        let coupling = CouplingObjective::QuadraticPenalty {
            lambda: self.lambda.clone(),
            rho: self.rho,
            aggregates: target.to_vec(),
        };
        let pf = build_opf(self.grid, &coupling, &self.stations)?.solve(self.solver)?;
        let w = pf.w.clone();
        self.last = Some(pf);
        Ok(w)
    }

    /// Mirror the operator's multiplier step after receiving the loads.
    pub fn mirror_lambda(&mut self, target: &[f64]) {
        let w = self.last.as_ref().expect("x-update ran").w.clone();
        self.lambda = lambda_step(&self.lambda, self.rho, &w, target);
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    pub fn power_flow(&self) -> Option<&PowerFlowSolution> {
        self.last.as_ref()
    }

    pub fn generation_cost(&self) -> f64 {
        self.last
            .as_ref()
            .map_or(0.0, |pf| generation_cost(self.grid, pf))
    }
}

/// The station operator's side: fleet data, `u`, and `λ`.
pub struct AdmmOperator<'a> {
    scen: &'a Scenario,
    d: DistanceMatrix,
    rho: f64,
    lambda: Vec<f64>,
    u: AssignmentMatrix,
    solver: &'a dyn ConicSolver,
}

impl<'a> AdmmOperator<'a> {
    pub fn new(scen: &'a Scenario, rho: f64, solver: &'a dyn ConicSolver) -> Result<Self, FleetError> {
        assert!(rho > 0.0, "rho must be positive");
        scen.check_capacity()?;
        let (u, lambda) = initialize(scen)?;
        Ok(AdmmOperator {
            d: distances(&scen.evs, &scen.stations),
            scen,
            rho,
            lambda,
            u,
            solver,
        })
    }

    /// Station loads `r (M_j - m_j + u_j)` in MW for the current `u`.
    pub fn target(&self) -> Vec<f64> {
        self.scen.station_loads().loads_mw(&aggregate(&self.u))
    }

    /// u-update against `w`, then the multiplier step. Returns the new loads.
    pub fn step(&mut self, w: &[f64]) -> Result<Vec<f64>, FleetError> {
        self.u = u_update(self.scen, &self.d, w, &self.lambda, self.rho, self.solver)?;
        let target = self.target();
        self.lambda = lambda_step(&self.lambda, self.rho, w, &target);
        Ok(target)
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    pub fn assignment(&self) -> &AssignmentMatrix {
        &self.u
    }

    pub fn travel_cost(&self) -> f64 {
        self.scen.travel_cost(&self.d, &self.u)
    }
}

/// How `w` and the station loads cross between the entities. The direct
/// algorithm passes them through unchanged.
pub trait AdmmLinks {
    fn loads_to_utility(&mut self, round: usize, target: Vec<f64>) -> Result<Vec<f64>, String>;
    fn w_to_operator(&mut self, round: usize, w: Vec<f64>) -> Result<Vec<f64>, String>;
}

/// Pass-through links.
pub struct DirectLinks;

impl AdmmLinks for DirectLinks {
    fn loads_to_utility(&mut self, _: usize, target: Vec<f64>) -> Result<Vec<f64>, String> {
        Ok(target)
    }
    fn w_to_operator(&mut self, _: usize, w: Vec<f64>) -> Result<Vec<f64>, String> {
        Ok(w)
    }
}

/// Run ADMM to convergence or `max_iters`.
pub fn run_admm(
    grid: &Grid,
    scen: &Scenario,
    params: &AdmmParams,
    solver: &dyn ConicSolver,
) -> Result<AdmmOutcome, AdmmError> {
    run_admm_with(grid, scen, params, solver, &mut DirectLinks)
}

/// [`run_admm`] with explicit links between the entities.
pub fn run_admm_with(
    grid: &Grid,
    scen: &Scenario,
    params: &AdmmParams,
    solver: &dyn ConicSolver,
    links: &mut dyn AdmmLinks,
) -> Result<AdmmOutcome, AdmmError> {
    params.validate().map_err(AdmmError::InvalidParams)?;
    scen.check_against(grid)?;
    let buses: Vec<BusId> = scen.stations.iter().map(|s| s.bus).collect();
    let mut operator = AdmmOperator::new(scen, params.rho, solver)?;
    let mut utility = AdmmUtility::new(grid, buses.clone(), params.rho, solver);
    let mut trace = AdmmTrace {
        station_buses: buses,
        records: Vec::new(),
    };

    let mut target = links
        .loads_to_utility(0, operator.target())
        .map_err(AdmmError::Transport)?;
    let mut best: Option<(f64, PowerFlowSolution, AssignmentMatrix, f64, usize)> = None;
    let mut prev_obj: Option<f64> = None;
    for n in 1..=params.max_iters {
        let w = utility.x_update(&target)?;
        let w_recv = links.w_to_operator(n, w.clone()).map_err(AdmmError::Transport)?;
        let new_target = operator.step(&w_recv)?;
        target = links
            .loads_to_utility(n, new_target.clone())
            .map_err(AdmmError::Transport)?;
        utility.mirror_lambda(&target);

        let residual = w
            .iter()
            .zip(&new_target)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let objective = utility.generation_cost() + operator.travel_cost();
        trace.records.push(AdmmRecord {
            iter: n,
            lambda: operator.lambda().to_vec(),
            w,
            u_agg: aggregate(operator.assignment()),
            residual,
            objective,
        });
        let pf = utility.power_flow().expect("x-update ran");
        if best.as_ref().map_or(true, |b| residual < b.0) {
            best = Some((residual, pf.clone(), operator.assignment().clone(), objective, n));
        }
        let stalled = prev_obj
            .map_or(false, |p| (objective - p).abs() <= params.eps_obj * objective.abs().max(1.0));
        prev_obj = Some(objective);
        if residual <= params.eps_primal && stalled {
            return Ok(AdmmOutcome {
                power_flow: pf.clone(),
                assignment: operator.assignment().clone(),
                objective,
                residual,
                iterations: n,
                converged: true,
                trace,
            });
        }
    }
    let iterations = trace.records.len();
    let (residual, power_flow, assignment, objective, _) = best.expect("at least one iteration");
    Err(AdmmError::NonConvergence {
        max_iters: params.max_iters,
        best: Box::new(AdmmOutcome {
            power_flow,
            assignment,
            objective,
            residual,
            iterations,
            converged: false,
            trace,
        }),
    })
}
