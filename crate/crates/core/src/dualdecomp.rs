//! Dual decomposition with subgradient price updates.
//!
//! The station operator owns the multipliers `λ` (load consensus) and `μ`
//! (battery capacity). Every round the utility solves the priced OPF
//! `min f(x) + Σ λ_j w_j`, every EV picks the station minimizing
//! `α d_aj - r λ_j + μ_j`, and the operator takes projected subgradient
//! steps with diminishing sizes `ρ_i(n) = ρ_i0 / sqrt(n + 1)`.
//!
//! Best responses are binary and keep oscillating, so the relaxed
//! assignment is recovered as the average of the last `window` responses.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::conic::{
    build_opf, ConicProblem, ConicSolver, CouplingObjective, OpfError, PowerFlowSolution,
    StationLoads,
};
use crate::fleet::{
    add_assignment_block, aggregate, distances, ev_best_response, feasible_stations,
    AssignmentMatrix, AssignmentMode, DistanceMatrix, Ev, FleetError, Scenario,
};
use crate::grid::{BusId, Grid};
use crate::oracle::grid_cost;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DualParams {
    pub rho1_0: f64,
    pub rho2_0: f64,
    pub max_iters: usize,
    /// Relative change of the smoothed dual value that counts as a stall.
    pub eps_obj: f64,
    /// Number of final best responses averaged for primal recovery.
    pub window: usize,
    /// Iterations over which the dual value is smoothed and compared.
    pub stall_window: usize,
}

impl Default for DualParams {
    fn default() -> Self {
        DualParams {
            rho1_0: 10.0,
            rho2_0: 0.1,
            max_iters: 5000,
            eps_obj: 1e-8,
            window: 50,
            stall_window: 20,
        }
    }
}

impl DualParams {
    /// Defaults with the capacity-price step capped at `3 / A`.
    ///
    /// The capacity subgradient `u_j - m_j` counts EVs, so its size grows
    /// with the fleet while the travel-cost margins that separate EV
    /// choices do not. With a fixed step, large fleets swing `μ` far past
    /// those margins and whole groups of EVs switch station together.
    pub fn for_fleet(n_evs: usize) -> Self {
        let d = Self::default();
        DualParams {
            rho2_0: d.rho2_0.min(3.0 / n_evs.max(1) as f64),
            ..d
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let pos = |x: f64| x > 0.0 && x.is_finite();
        if !(pos(self.rho1_0) && pos(self.rho2_0)) {
            return Err("initial step sizes must be positive".into());
        }
        if self.max_iters == 0 || self.window == 0 || self.stall_window == 0 {
            return Err("max_iters, window and stall_window must be at least 1".into());
        }
        if !(self.eps_obj >= 0.0) {
            return Err("eps_obj must be non-negative".into());
        }
        Ok(())
    }

    /// `(ρ_1(n), ρ_2(n))`.
    pub fn steps(&self, n: usize) -> (f64, f64) {
        let s = ((n + 1) as f64).sqrt();
        (self.rho1_0 / s, self.rho2_0 / s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DualRecord {
    pub iter: usize,
    /// Prices `λ(n)`, `μ(n)` the round was played at.
    pub lambda: Vec<f64>,
    pub mu: Vec<f64>,
    pub w: Vec<f64>,
    /// Station counts of the best responses.
    pub u_agg: Vec<f64>,
    pub dual_value: f64,
    /// Capacity violation `u_j - m_j` of the best responses.
    pub violation: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DualTrace {
    pub station_buses: Vec<BusId>,
    pub records: Vec<DualRecord>,
}

impl DualTrace {
    /// CSV with columns `iter, lambda_*, mu_*, uj_*, dualvalue, viol_*`.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        let mut header = vec!["iter".to_string()];
        for prefix in ["lambda", "mu", "uj"] {
            header.extend(self.station_buses.iter().map(|b| format!("{prefix}_{b}")));
        }
        header.push("dualvalue".into());
        header.extend(self.station_buses.iter().map(|b| format!("viol_{b}")));
        wtr.write_record(&header)?;
        for r in &self.records {
            let mut row = vec![r.iter.to_string()];
            for v in r.lambda.iter().chain(&r.mu).chain(&r.u_agg) {
                row.push(v.to_string());
            }
            row.push(r.dual_value.to_string());
            row.extend(r.violation.iter().map(|v| v.to_string()));
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DualOutcome {
    /// OPF at the recovered station loads.
    pub power_flow: PowerFlowSolution,
    /// Averaged (relaxed) assignment.
    pub assignment: AssignmentMatrix,
    /// `f + g` at the recovered point.
    pub objective: f64,
    /// Best dual value seen, a lower bound on the relaxed optimum.
    pub dual_bound: f64,
    /// Prices from the recovery window that best certify the recovered point.
    pub lambda: Vec<f64>,
    pub mu: Vec<f64>,
    /// `max_j |μ_j (u_j - m_j)|` at the recovered assignment.
    pub complementary_slackness: f64,
    pub iterations: usize,
    pub converged: bool,
    pub trace: DualTrace,
}

#[derive(Debug, Clone, Error)]
pub enum DualError {
    #[error(transparent)]
    Fleet(#[from] FleetError),
    #[error(transparent)]
    Opf(#[from] OpfError),
    #[error("transport: {0}")]
    Transport(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("dual decomposition did not converge in {max_iters} iterations")]
    NonConvergence {
        max_iters: usize,
        best: Box<DualOutcome>,
    },
}

/// `λ_j + ρ_1 (w_j - r (M_j - m_j + u_j))`.
pub fn lambda_step(lambda: &[f64], rho1: f64, w: &[f64], target: &[f64]) -> Vec<f64> {
    crate::admm::lambda_step(lambda, rho1, w, target)
}

/// `max(0, μ_j + ρ_2 (u_j - m_j))`.
pub fn mu_step(mu: &[f64], rho2: f64, u_agg: &[f64], caps: &[f64]) -> Vec<f64> {
    mu.iter()
        .zip(u_agg.iter().zip(caps))
        .map(|(m, (u, c))| (m + rho2 * (u - c)).max(0.0))
        .collect()
}

/// An EV as an entity: its private data plus the public constants.
#[derive(Debug, Clone)]
pub struct EvAgent {
    pub ev: Ev,
    pub d_row: Vec<f64>,
    pub alpha: f64,
    pub r: f64,
}

impl EvAgent {
    pub fn fleet(scen: &Scenario) -> Vec<EvAgent> {
        let d = distances(&scen.evs, &scen.stations);
        scen.evs
            .iter()
            .zip(d.rows)
            .map(|(ev, d_row)| EvAgent {
                ev: ev.clone(),
                d_row,
                alpha: scen.alpha_per_km,
                r: scen.r_mw,
            })
            .collect()
    }

    pub fn respond(&self, lambda: &[f64], mu: &[f64]) -> Result<Vec<f64>, FleetError> {
        ev_best_response(&self.ev, &self.d_row, lambda, mu, self.alpha, self.r)
    }

    /// `U_a(λ, μ) = min_j (α d_aj - r λ_j + μ_j)` over in-range stations.
    pub fn value(&self, lambda: &[f64], mu: &[f64]) -> Result<f64, FleetError> {
        Ok(feasible_stations(&self.ev, &self.d_row)?
            .into_iter()
            .map(|j| self.alpha * self.d_row[j] - self.r * lambda[j] + mu[j])
            .fold(f64::INFINITY, f64::min))
    }
}

/// The utility's priced OPF at `λ`; returns the solution and `V(λ)`.
pub fn priced_opf(
    grid: &Grid,
    station_buses: &[BusId],
    lambda: &[f64],
    solver: &dyn ConicSolver,
) -> Result<PowerFlowSolution, OpfError> {
    let n = station_buses.len();
    let stations = StationLoads {
        bus: station_buses.to_vec(),
        total: vec![0.0; n],
        available: vec![0.0; n],
        rate_mw: 1.0,
    };
    build_opf(grid, &CouplingObjective::LinearPrice(lambda.to_vec()), &stations)?.solve(solver)
}

/// Constant part `Σ_j (λ_j r (M_j - m_j) + μ_j m_j)` of the dual function.
fn dual_constant(scen: &Scenario, lambda: &[f64], mu: &[f64]) -> f64 {
    scen.stations
        .iter()
        .enumerate()
        .map(|(j, s)| {
            lambda[j] * scen.r_mw * (s.total as f64 - s.available as f64) + mu[j] * s.available as f64
        })
        .sum()
}

/// Dual function `D(λ, μ) = V(λ) + Σ_a U_a(λ, μ) - Σ_j (λ_j r (M_j - m_j) + μ_j m_j)`.
pub fn dual_value(
    grid: &Grid,
    scen: &Scenario,
    lambda: &[f64],
    mu: &[f64],
    solver: &dyn ConicSolver,
) -> Result<f64, DualError> {
    let buses: Vec<BusId> = scen.stations.iter().map(|s| s.bus).collect();
    let v = priced_opf(grid, &buses, lambda, solver)?.objective_value;
    let mut u_sum = 0.0;
    for agent in EvAgent::fleet(scen) {
        u_sum += agent.value(lambda, mu)?;
    }
    Ok(v + u_sum - dual_constant(scen, lambda, mu))
}

/// Nearest point of the relaxed assignment polytope to `u` (Euclidean).
pub fn project_assignment(
    scen: &Scenario,
    d: &DistanceMatrix,
    u: &AssignmentMatrix,
    solver: &dyn ConicSolver,
) -> Result<AssignmentMatrix, FleetError> {
    let mut prob = ConicProblem::new();
    let layout = add_assignment_block(&mut prob, scen, d)?;
    // drop the travel cost: pure projection
    for c in prob.objective.iter_mut() {
        *c = 0.0;
    }
    let mut exprs = Vec::new();
    for (a, row) in layout.vars.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            if let Some(v) = v {
                exprs.push(crate::conic::Affine::var(*v).plus(-u.u[a][j]));
            }
        }
    }
    prob.add_square_penalty(1.0, exprs);
    let sol = solver.solve(&prob)?;
    Ok(layout.extract(&sol.x))
}

/// How prices, loads and choices cross between the entities.
pub trait DualLinks {
    fn prices_to_utility(&mut self, round: usize, lambda: Vec<f64>) -> Result<Vec<f64>, String>;
    /// Broadcast `(λ, μ)`; returns what each EV received, in EV order.
    fn prices_to_evs(
        &mut self,
        round: usize,
        lambda: &[f64],
        mu: &[f64],
        n_evs: usize,
    ) -> Result<Vec<(Vec<f64>, Vec<f64>)>, String>;
    fn w_to_operator(&mut self, round: usize, w: Vec<f64>) -> Result<Vec<f64>, String>;
    fn choices_to_operator(
        &mut self,
        round: usize,
        rows: Vec<Vec<f64>>,
    ) -> Result<Vec<Vec<f64>>, String>;
}

pub struct DirectLinks;

impl DualLinks for DirectLinks {
    fn prices_to_utility(&mut self, _: usize, lambda: Vec<f64>) -> Result<Vec<f64>, String> {
        Ok(lambda)
    }
    fn prices_to_evs(
        &mut self,
        _: usize,
        lambda: &[f64],
        mu: &[f64],
        n_evs: usize,
    ) -> Result<Vec<(Vec<f64>, Vec<f64>)>, String> {
        Ok(vec![(lambda.to_vec(), mu.to_vec()); n_evs])
    }
    fn w_to_operator(&mut self, _: usize, w: Vec<f64>) -> Result<Vec<f64>, String> {
        Ok(w)
    }
    fn choices_to_operator(&mut self, _: usize, rows: Vec<Vec<f64>>) -> Result<Vec<Vec<f64>>, String> {
        Ok(rows)
    }
}

/// Per-EV best responses to the received prices, evaluated in parallel and
/// returned in EV order.
pub fn respond_all(
    agents: &[EvAgent],
    prices: &[(Vec<f64>, Vec<f64>)],
) -> Result<Vec<Vec<f64>>, FleetError> {
    agents
        .par_iter()
        .zip(prices.par_iter())
        .map(|(agent, (l, m))| agent.respond(l, m))
        .collect()
}

pub fn run_dual(
    grid: &Grid,
    scen: &Scenario,
    params: &DualParams,
    solver: &dyn ConicSolver,
) -> Result<DualOutcome, DualError> {
    run_dual_with(grid, scen, params, solver, &mut DirectLinks)
}

pub fn run_dual_with(
    grid: &Grid,
    scen: &Scenario,
    params: &DualParams,
    solver: &dyn ConicSolver,
    links: &mut dyn DualLinks,
) -> Result<DualOutcome, DualError> {
    params.validate().map_err(DualError::InvalidParams)?;
    scen.check_against(grid)?;
    scen.check_capacity()?;
    let buses: Vec<BusId> = scen.stations.iter().map(|s| s.bus).collect();
    let n_st = buses.len();
    let loads = scen.station_loads();
    let caps = scen.capacities();
    let agents = EvAgent::fleet(scen);
    for agent in &agents {
        feasible_stations(&agent.ev, &agent.d_row)?;
    }
    // a zero-price solve confirms the grid side is feasible before iterating
    priced_opf(grid, &buses, &vec![0.0; n_st], solver)?;

    let mut lambda = vec![0.0; n_st];
    let mut mu = vec![0.0; n_st];
    let mut trace = DualTrace {
        station_buses: buses.clone(),
        records: Vec::new(),
    };
    let mut recent: std::collections::VecDeque<Vec<Vec<f64>>> = Default::default();
    let mut best_dual = f64::NEG_INFINITY;
    let mut converged = false;
    let sw = params.stall_window;

    for n in 0..params.max_iters {
        let lambda_u = links
            .prices_to_utility(n, lambda.clone())
            .map_err(DualError::Transport)?;
        let prices = links
            .prices_to_evs(n, &lambda, &mu, agents.len())
            .map_err(DualError::Transport)?;
        // the utility and the EVs answer the same prices independently
        let (pf, rows) = rayon::join(
            || priced_opf(grid, &buses, &lambda_u, solver),
            || respond_all(&agents, &prices),
        );
        let (pf, rows) = (pf?, rows?);
        let w = links
            .w_to_operator(n, pf.w.clone())
            .map_err(DualError::Transport)?;
        let rows = links
            .choices_to_operator(n, rows)
            .map_err(DualError::Transport)?;

        let u = AssignmentMatrix {
            u: rows,
            mode: AssignmentMode::Binary,
        };
        let u_agg = aggregate(&u);
        let target = loads.loads_mw(&u_agg);
        let mut u_value = 0.0;
        for (a, agent) in agents.iter().enumerate() {
            let j = u.u[a].iter().position(|&v| v == 1.0).expect("binary row");
            u_value += agent.alpha * agent.d_row[j] - agent.r * lambda[j] + mu[j];
        }
        let dual = pf.objective_value + u_value - dual_constant(scen, &lambda, &mu);
        best_dual = best_dual.max(dual);
        trace.records.push(DualRecord {
            iter: n,
            lambda: lambda.clone(),
            mu: mu.clone(),
            w: w.clone(),
            u_agg: u_agg.clone(),
            dual_value: dual,
            violation: u_agg.iter().zip(&caps).map(|(a, c)| a - c).collect(),
        });
        recent.push_back(u.u);
        if recent.len() > params.window {
            recent.pop_front();
        }

        let (rho1, rho2) = params.steps(n);
        lambda = lambda_step(&lambda, rho1, &w, &target);
        mu = mu_step(&mu, rho2, &u_agg, &caps);

        let len = trace.records.len();
        if len >= 2 * sw && len >= params.window {
            let mean = |s: &[DualRecord]| s.iter().map(|r| r.dual_value).sum::<f64>() / s.len() as f64;
            let now = mean(&trace.records[len - sw..]);
            let before = mean(&trace.records[len - 2 * sw..len - sw]);
            if (now - before).abs() <= params.eps_obj * now.abs().max(1.0) {
                converged = true;
                break;
            }
        }
    }

    // ergodic average of the last responses, projected if it overfills a station
    let k = recent.len() as f64;
    let mut avg = AssignmentMatrix::zeros(scen.n_evs(), n_st, AssignmentMode::Relaxed);
    for rows in &recent {
        for (a, row) in rows.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                avg.u[a][j] += v / k;
            }
        }
    }
    let d = distances(&scen.evs, &scen.stations);
    if aggregate(&avg).iter().zip(&caps).any(|(u, c)| u > &(c + 1e-9)) {
        avg = project_assignment(scen, &d, &avg, solver)?;
    }
    let agg = aggregate(&avg);
    let (power_flow, f) = grid_cost(grid, scen, &agg, solver)?;
    let objective = f + scen.travel_cost(&d, &avg);
    // Near the optimum the prices can cycle with the herding EVs, and the
    // last iterate then depends on where the cycle stopped. Report the
    // prices from the recovery window that best certify the recovered `u`.
    let slackness = |mu: &[f64]| {
        mu.iter()
            .zip(agg.iter().zip(&caps))
            .map(|(m, (u, c))| (m * (u - c)).abs())
            .fold(0.0, f64::max)
    };
    let window = &trace.records[trace.records.len() - recent.len()..];
    let mut complementary_slackness = slackness(&mu);
    for rec in window.iter().rev() {
        let cs = slackness(&rec.mu);
        if cs < complementary_slackness {
            complementary_slackness = cs;
            lambda = rec.lambda.clone();
            mu = rec.mu.clone();
        }
    }
    let outcome = DualOutcome {
        power_flow,
        assignment: avg,
        objective,
        dual_bound: best_dual,
        lambda,
        mu,
        complementary_slackness,
        iterations: trace.records.len(),
        converged,
        trace,
    };
    if converged {
        Ok(outcome)
    } else {
        Err(DualError::NonConvergence {
            max_iters: params.max_iters,
            best: Box::new(outcome),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mu_projection() {
        assert_eq!(mu_step(&[0.0], 0.1, &[5.0], &[10.0]), vec![0.0]);
        let m = mu_step(&[0.0], 0.1, &[12.0], &[10.0]);
        assert!((m[0] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn diminishing_steps() {
        let p = DualParams {
            rho1_0: 1.0,
            ..DualParams::default()
        };
        assert_eq!(p.steps(0), (1.0, 0.1));
        let (a, b) = p.steps(3);
        assert!((a - 0.5).abs() < 1e-15 && (b - 0.05).abs() < 1e-15);
    }
}
