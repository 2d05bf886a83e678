//! SOCP-relaxed branch-flow OPF with pluggable station coupling.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::problem::{Affine, ConicProblem};
use super::solver::{ConicSolver, SolveError};
use crate::grid::{BusId, Grid};

/// Feasibility tolerance on linear equations and cones (per-unit).
pub const EPS_FEAS: f64 = 1e-7;
/// Relative tolerance for declaring the relaxation exact.
pub const EPS_EXACT: f64 = 1e-5;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum OpfError {
    #[error("OPF infeasible: operational constraints cannot be met")]
    Infeasible,
    #[error("OPF numerical failure: {0}")]
    NumericalFailure(String),
    #[error("station bus {0} is not a station bus of the grid")]
    NotAStationBus(BusId),
    #[error("coupling has {got} entries, expected {expected}")]
    Dimension { expected: usize, got: usize },
}

impl From<SolveError> for OpfError {
    fn from(e: SolveError) -> Self {
        match e {
            SolveError::Infeasible => OpfError::Infeasible,
            other => OpfError::NumericalFailure(other.to_string()),
        }
    }
}

/// Station-side data the utility needs to couple the OPF to the assignment.
///
/// Station `j` sits at `bus[j]` with `total[j]` batteries of which
/// `available[j]` are fully charged; each battery charges at `rate_mw`.
#[derive(Debug, Clone, PartialEq)]
pub struct StationLoads {
    pub bus: Vec<BusId>,
    pub total: Vec<f64>,
    pub available: Vec<f64>,
    pub rate_mw: f64,
}

impl StationLoads {
    pub fn len(&self) -> usize {
        self.bus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bus.is_empty()
    }

    /// Station load `r (M_j - m_j + u_j)` in MW for an aggregate `u_j`.
    pub fn load_mw(&self, j: usize, aggregate: f64) -> f64 {
        self.rate_mw * (self.total[j] - self.available[j] + aggregate)
    }

    pub fn loads_mw(&self, aggregates: &[f64]) -> Vec<f64> {
        aggregates
            .iter()
            .enumerate()
            .map(|(j, &u)| self.load_mw(j, u))
            .collect()
    }
}

/// How the station loads `w_j` enter the OPF.
#[derive(Debug, Clone, PartialEq)]
pub enum CouplingObjective {
    /// `w_j` pinned to `r (M_j - m_j + u_j)` for the given aggregates `u_j`.
    Fixed(Vec<f64>),
    /// `w_j` free, priced at `λ_j` $/MW.
    LinearPrice(Vec<f64>),
    /// Augmented-Lagrangian x-update: `Σ λ_j e_j + ρ/2 Σ e_j²` with
    /// `e_j = w_j - r (M_j - m_j + u_j)`.
    QuadraticPenalty {
        lambda: Vec<f64>,
        rho: f64,
        aggregates: Vec<f64>,
    },
}

/// Variable indices of an OPF block inside a [`ConicProblem`].
#[derive(Debug, Clone)]
pub struct OpfLayout {
    pub v: Vec<usize>,
    pub l: Vec<usize>,
    pub p: Vec<usize>,
    pub q: Vec<usize>,
    /// Per bus: generator (p, q) variables if the bus has a generator.
    pub gen: Vec<Option<(usize, usize)>>,
    /// Station load variables in MW, one per station.
    pub w: Vec<usize>,
}

/// Add the relaxed OPF variables, constraints and generation cost to `prob`.
///
/// Station loads `w` are left free (MW); callers couple them.
pub fn add_opf_block(
    prob: &mut ConicProblem,
    grid: &Grid,
    stations: &StationLoads,
) -> Result<OpfLayout, OpfError> {
    let n_bus = grid.buses().len();
    let base = grid.base_mva();

    let mut station_at_bus = vec![None; n_bus];
    for (j, &bus) in stations.bus.iter().enumerate() {
        if !grid.is_station_bus(bus) {
            return Err(OpfError::NotAStationBus(bus));
        }
        station_at_bus[grid.bus_index(bus).expect("station bus exists")] = Some(j);
    }

    let root = grid.root_index();
    let v: Vec<usize> = grid
        .buses()
        .iter()
        .enumerate()
        .map(|(i, b)| {
            if i == root {
                prob.add_var(format!("v[{}]", b.id), grid.v_root(), grid.v_root())
            } else {
                prob.add_var(format!("v[{}]", b.id), b.v_min, b.v_max)
            }
        })
        .collect();
    let names: Vec<String> = grid
        .lines()
        .iter()
        .map(|l| format!("{}-{}", l.from, l.to))
        .collect();
    let l: Vec<usize> = names
        .iter()
        .map(|n| prob.add_var(format!("l[{n}]"), 0.0, f64::INFINITY))
        .collect();
    let p: Vec<usize> = names.iter().map(|n| prob.add_free(format!("P[{n}]"))).collect();
    let q: Vec<usize> = names.iter().map(|n| prob.add_free(format!("Q[{n}]"))).collect();
    let gen: Vec<Option<(usize, usize)>> = grid
        .buses()
        .iter()
        .map(|b| {
            b.generator.as_ref().map(|g| {
                let pg = prob.add_var(format!("pg[{}]", b.id), g.p_min, g.p_max);
                let qg = prob.add_var(format!("qg[{}]", b.id), g.q_min, g.q_max);
                (pg, qg)
            })
        })
        .collect();
    let w: Vec<usize> = stations
        .bus
        .iter()
        .map(|b| prob.add_free(format!("w[{b}]")))
        .collect();

    // power balance at every bus
    for (i, bus) in grid.buses().iter().enumerate() {
        let mut p_row = Vec::new();
        let mut q_row = Vec::new();
        for &k in grid.child_lines(i) {
            p_row.push((p[k], 1.0));
            q_row.push((q[k], 1.0));
        }
        if let Some(k) = grid.parent_line(i) {
            let line = &grid.lines()[k];
            p_row.extend([(p[k], -1.0), (l[k], line.r)]);
            q_row.extend([(q[k], -1.0), (l[k], line.x)]);
        }
        if let Some((pg, qg)) = gen[i] {
            p_row.push((pg, -1.0));
            q_row.push((qg, -1.0));
        }
        if let Some(j) = station_at_bus[i] {
            p_row.push((w[j], 1.0 / base));
        }
        prob.add_eq(p_row, -bus.p_bg);
        prob.add_eq(q_row, -bus.q_bg);
    }

    for (k, line) in grid.lines().iter().enumerate() {
        let (f, t) = grid.line_ends(k);
        // voltage drop
        prob.add_eq(
            vec![
                (v[f], 1.0),
                (v[t], -1.0),
                (p[k], -2.0 * line.r),
                (q[k], -2.0 * line.x),
                (l[k], line.z_squared()),
            ],
            0.0,
        );
        // v_f l >= P^2 + Q^2
        prob.add_cone(
            format!("current[{}]", names[k]),
            vec![
                Affine::var(v[f]).term(l[k], 1.0),
                Affine::var(v[f]).term(l[k], -1.0),
                Affine::var(p[k]).scaled(2.0),
                Affine::var(q[k]).scaled(2.0),
            ],
        );
        // |S| <= s_max
        prob.add_cone(
            format!("thermal[{}]", names[k]),
            vec![
                Affine::constant(line.s_max),
                Affine::var(p[k]),
                Affine::var(q[k]),
            ],
        );
    }

    // generation cost
    for (i, bus) in grid.buses().iter().enumerate() {
        let (Some(g), Some((pg, _))) = (&bus.generator, gen[i]) else {
            continue;
        };
        prob.add_objective(pg, g.cost_linear);
        if g.cost_quadratic > 0.0 {
            let t = prob.add_square_epigraph(
                format!("cost[{}]", bus.id),
                g.cost_quadratic,
                vec![Affine::var(pg)],
            );
            prob.add_objective(t, 1.0);
        }
    }

    Ok(OpfLayout { v, l, p, q, gen, w })
}

/// A built OPF subproblem together with its variable layout.
#[derive(Debug, Clone)]
pub struct OpfProblem {
    pub conic: ConicProblem,
    pub layout: OpfLayout,
    pub base_mva: f64,
}

/// Build the OPF subproblem for the given station coupling.
pub fn build_opf(
    grid: &Grid,
    coupling: &CouplingObjective,
    stations: &StationLoads,
) -> Result<OpfProblem, OpfError> {
    let n_st = stations.len();
    let check = |len: usize| {
        if len == n_st {
            Ok(())
        } else {
            Err(OpfError::Dimension {
                expected: n_st,
                got: len,
            })
        }
    };
    let mut prob = ConicProblem::new();
    let layout = add_opf_block(&mut prob, grid, stations)?;
    match coupling {
        CouplingObjective::Fixed(agg) => {
            check(agg.len())?;
            for (j, &wj) in layout.w.iter().enumerate() {
                let load = stations.load_mw(j, agg[j]);
                prob.lower[wj] = load;
                prob.upper[wj] = load;
            }
        }
        CouplingObjective::LinearPrice(lambda) => {
            check(lambda.len())?;
            for (j, &wj) in layout.w.iter().enumerate() {
                prob.add_objective(wj, lambda[j]);
            }
        }
        CouplingObjective::QuadraticPenalty {
            lambda,
            rho,
            aggregates,
        } => {
            check(lambda.len())?;
            check(aggregates.len())?;
            assert!(*rho > 0.0, "penalty must be positive");
            let mut residuals = Vec::with_capacity(n_st);
            for (j, &wj) in layout.w.iter().enumerate() {
                let target = stations.load_mw(j, aggregates[j]);
                prob.add_objective(wj, lambda[j]);
                prob.objective_constant -= lambda[j] * target;
                residuals.push(Affine::var(wj).plus(-target));
            }
            prob.add_square_penalty(rho / 2.0, residuals);
        }
    }
    Ok(OpfProblem {
        conic: prob,
        layout,
        base_mva: grid.base_mva(),
    })
}

impl OpfProblem {
    pub fn solve(&self, solver: &dyn ConicSolver) -> Result<PowerFlowSolution, OpfError> {
        let sol = solver.solve(&self.conic)?;
        Ok(PowerFlowSolution::extract(&self.layout, &sol.x, sol.objective))
    }
}

/// Optimal power-flow point in per-unit (station loads `w` in MW).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerFlowSolution {
    pub v: Vec<f64>,
    pub l: Vec<f64>,
    pub p_flow: Vec<f64>,
    pub q_flow: Vec<f64>,
    /// Per-bus generation, zero where there is no generator.
    pub p_gen: Vec<f64>,
    pub q_gen: Vec<f64>,
    pub w: Vec<f64>,
    pub objective_value: f64,
}

impl PowerFlowSolution {
    pub fn extract(layout: &OpfLayout, x: &[f64], objective_value: f64) -> Self {
        let pick = |idx: &[usize]| idx.iter().map(|&i| x[i]).collect::<Vec<f64>>();
        PowerFlowSolution {
            v: pick(&layout.v),
            l: pick(&layout.l),
            p_flow: pick(&layout.p),
            q_flow: pick(&layout.q),
            p_gen: layout.gen.iter().map(|g| g.map_or(0.0, |(p, _)| x[p])).collect(),
            q_gen: layout.gen.iter().map(|g| g.map_or(0.0, |(_, q)| x[q])).collect(),
            w: pick(&layout.w),
            objective_value,
        }
    }
}

/// Generation cost in $ over the control interval.
pub fn generation_cost(grid: &Grid, sol: &PowerFlowSolution) -> f64 {
    grid.buses()
        .iter()
        .zip(&sol.p_gen)
        .filter_map(|(b, &p)| b.generator.as_ref().map(|g| g.cost(p)))
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineResidual {
    pub from: BusId,
    pub to: BusId,
    /// `v_j l_jk` (pu²).
    pub vl: f64,
    /// `|S_jk|²` (pu²).
    pub s2: f64,
    pub residual: f64,
    /// Residual divided by the largest `v l` on the feeder.
    pub relative: f64,
}

/// Per-line gap `v_j l_jk - |S_jk|²` of the relaxed current equation.
///
/// Relative residuals are scaled by the feeder-wide maximum of `v l`, so
/// unloaded lines with vanishing flow do not produce spurious ratios.
pub fn exactness_residuals(grid: &Grid, sol: &PowerFlowSolution) -> Vec<LineResidual> {
    let raw: Vec<(f64, f64)> = (0..grid.lines().len())
        .map(|k| {
            let (f, _) = grid.line_ends(k);
            let vl = sol.v[f] * sol.l[k];
            let s2 = sol.p_flow[k].powi(2) + sol.q_flow[k].powi(2);
            (vl, s2)
        })
        .collect();
    let scale = raw.iter().map(|r| r.0).fold(0.0f64, f64::max).max(1e-12);
    grid.lines()
        .iter()
        .zip(raw)
        .map(|(line, (vl, s2))| LineResidual {
            from: line.from,
            to: line.to,
            vl,
            s2,
            residual: vl - s2,
            relative: (vl - s2) / scale,
        })
        .collect()
}

/// Largest relative residual; the relaxation is exact when it is within
/// [`EPS_EXACT`].
pub fn max_relative_residual(residuals: &[LineResidual]) -> f64 {
    residuals
        .iter()
        .map(|r| r.relative.abs())
        .fold(0.0, f64::max)
}

pub fn is_exact(residuals: &[LineResidual]) -> bool {
    max_relative_residual(residuals) <= EPS_EXACT
}
