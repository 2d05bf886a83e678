//! Ground truth at small scale: the centralized relaxed solve and exact
//! binary enumeration.
//!
//! The OPF depends on the assignment only through the station counts
//! `u_j`, so enumeration walks count vectors instead of assignments. For
//! each count vector the grid cost is one fixed-load OPF and the travel
//! cost is an exact transportation problem.

mod transport;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::conic::{
    add_opf_block, build_opf, ConicProblem, ConicSolver, CouplingObjective, OpfError,
    PowerFlowSolution,
};
use crate::fleet::{
    add_assignment_block, aggregate, discretize, distances, feasible_stations, AssignmentMatrix,
    DistanceMatrix, FleetError, Scenario, EPS_BIN,
};
use crate::grid::Grid;

pub use transport::{min_cost_assignment, TransportSolver};

/// Default limit on aggregate-distinct OPF solves.
pub const DEFAULT_CAP: usize = 100_000;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum OracleError {
    #[error(transparent)]
    Fleet(#[from] FleetError),
    #[error(transparent)]
    Opf(#[from] OpfError),
    #[error("enumeration too large: {count} candidates exceed cap {cap}")]
    TooLarge { count: usize, cap: usize },
    #[error("no capacity-feasible binary assignment has a feasible power flow")]
    NoFeasibleAssignment,
}

/// Optimum of the joint relaxation.
#[derive(Debug, Clone, Serialize)]
pub struct RelaxedOptimum {
    pub power_flow: PowerFlowSolution,
    pub assignment: AssignmentMatrix,
    /// `f(x) + g(u)` in $.
    pub objective: f64,
}

/// Solve the joint relaxation over `(x, u)` in one conic program.
pub fn solve_centralized_relaxed(
    grid: &Grid,
    scen: &Scenario,
    solver: &dyn ConicSolver,
) -> Result<RelaxedOptimum, OracleError> {
    let d = distances(&scen.evs, &scen.stations);
    let (prob, opf, assign) = joint_problem(grid, scen, &d)?;
    let sol = solver.solve(&prob).map_err(OpfError::from)?;
    let power_flow = PowerFlowSolution::extract(&opf, &sol.x, sol.objective);
    Ok(RelaxedOptimum {
        power_flow,
        assignment: assign.extract(&sol.x),
        objective: sol.objective,
    })
}

/// The joint relaxed problem with its OPF and assignment layouts.
pub fn joint_problem(
    grid: &Grid,
    scen: &Scenario,
    d: &DistanceMatrix,
) -> Result<(ConicProblem, crate::conic::OpfLayout, crate::fleet::AssignmentLayout), OracleError>
{
    let loads = scen.station_loads();
    let mut prob = ConicProblem::new();
    let opf = add_opf_block(&mut prob, grid, &loads)?;
    let assign = add_assignment_block(&mut prob, scen, d)?;
    for (j, &wj) in opf.w.iter().enumerate() {
        // w_j - r u_j = r (M_j - m_j)
        let mut terms = assign.aggregate_expr(j).scaled(-scen.r_mw).terms;
        terms.push((wj, 1.0));
        prob.add_eq(terms, loads.load_mw(j, 0.0));
    }
    Ok((prob, opf, assign))
}

/// Grid cost of serving the given station counts, `f` at `w = r(M-m+u)`.
pub fn grid_cost(
    grid: &Grid,
    scen: &Scenario,
    aggregates: &[f64],
    solver: &dyn ConicSolver,
) -> Result<(PowerFlowSolution, f64), OpfError> {
    let prob = build_opf(
        grid,
        &CouplingObjective::Fixed(aggregates.to_vec()),
        &scen.station_loads(),
    )?;
    let pf = prob.solve(solver)?;
    let cost = pf.objective_value;
    Ok((pf, cost))
}

/// Objective `f + g` of an assignment, relaxed or binary.
pub fn assignment_objective(
    grid: &Grid,
    scen: &Scenario,
    u: &AssignmentMatrix,
    solver: &dyn ConicSolver,
) -> Result<(PowerFlowSolution, f64), OpfError> {
    let d = distances(&scen.evs, &scen.stations);
    let (pf, f) = grid_cost(grid, scen, &aggregate(u), solver)?;
    Ok((pf, f + scen.travel_cost(&d, u)))
}

/// Best binary assignment found by enumeration.
#[derive(Debug, Clone, Serialize)]
pub struct BinaryOptimum {
    pub assignment: AssignmentMatrix,
    pub power_flow: PowerFlowSolution,
    pub objective: f64,
    /// Number of OPF solves performed (one per distinct count vector).
    pub opf_solves: usize,
}

/// Count vectors `c` with `Σ c = a` and `0 <= c_j <= caps[j]`, in
/// lexicographic order.
fn count_vectors(a: usize, caps: &[usize], limit: usize) -> Result<Vec<Vec<usize>>, usize> {
    fn rec(
        j: usize,
        left: usize,
        caps: &[usize],
        cur: &mut Vec<usize>,
        out: &mut Vec<Vec<usize>>,
        limit: usize,
    ) -> bool {
        if j + 1 == caps.len() {
            if left <= caps[j] {
                cur.push(left);
                out.push(cur.clone());
                cur.pop();
            }
            return out.len() <= limit;
        }
        let rest: usize = caps[j + 1..].iter().sum();
        let lo = left.saturating_sub(rest);
        for c in lo..=left.min(caps[j]) {
            cur.push(c);
            let ok = rec(j + 1, left - c, caps, cur, out, limit);
            cur.pop();
            if !ok {
                return false;
            }
        }
        true
    }
    let mut out = Vec::new();
    if caps.is_empty() {
        return if a == 0 { Ok(vec![vec![]]) } else { Ok(out) };
    }
    if rec(0, a, caps, &mut Vec::new(), &mut out, limit) {
        Ok(out)
    } else {
        Err(out.len())
    }
}

fn travel_costs(scen: &Scenario, d: &DistanceMatrix) -> Result<Vec<Vec<Option<f64>>>, FleetError> {
    scen.evs
        .iter()
        .enumerate()
        .map(|(a, ev)| {
            let feasible = feasible_stations(ev, d.row(a))?;
            Ok((0..scen.n_stations())
                .map(|j| {
                    feasible
                        .contains(&j)
                        .then(|| scen.alpha_per_km * d.rows[a][j])
                })
                .collect())
        })
        .collect()
}

/// Exact binary optimum of the original problem.
///
/// Station count vectors are enumerated under the capacity bounds; those
/// that admit an in-range assignment get one fixed-load OPF solve (in
/// parallel) and an exact min-cost transportation solve. Ties go to the
/// lexicographically smallest count vector.
pub fn enumerate_binary(
    grid: &Grid,
    scen: &Scenario,
    cap: usize,
    solver: &dyn ConicSolver,
) -> Result<BinaryOptimum, OracleError> {
    scen.check_capacity()?;
    let d = distances(&scen.evs, &scen.stations);
    let costs = travel_costs(scen, &d)?;
    let caps: Vec<usize> = scen
        .stations
        .iter()
        .map(|s| (s.available as usize).min(scen.n_evs()))
        .collect();
    let vectors = count_vectors(scen.n_evs(), &caps, cap)
        .map_err(|count| OracleError::TooLarge { count, cap })?;
    let Some(mut transport) = TransportSolver::new(costs, scen.n_stations()) else {
        return Err(OracleError::NoFeasibleAssignment);
    };
    let candidates: Vec<(Vec<usize>, Vec<usize>, f64)> = vectors
        .into_iter()
        .filter_map(|c| transport.solve(&c).map(|(choice, g)| (c, choice, g)))
        .collect();
    let solved: Vec<Option<(PowerFlowSolution, f64)>> = candidates
        .par_iter()
        .map(|(c, _, _)| {
            let agg: Vec<f64> = c.iter().map(|&v| v as f64).collect();
            match grid_cost(grid, scen, &agg, solver) {
                Ok(r) => Some(Ok(r)),
                Err(OpfError::Infeasible) => None,
                Err(e) => Some(Err(e)),
            }
            .transpose()
        })
        .collect::<Result<_, OpfError>>()?;
    let opf_solves = candidates.len();
    let mut best: Option<(usize, f64)> = None;
    for (i, r) in solved.iter().enumerate() {
        if let Some((_, f)) = r {
            let total = f + candidates[i].2;
            if best.map_or(true, |(_, b)| total < b) {
                best = Some((i, total));
            }
        }
    }
    let (i, objective) = best.ok_or(OracleError::NoFeasibleAssignment)?;
    let power_flow = solved[i].clone().expect("selected candidate solved").0;
    Ok(BinaryOptimum {
        assignment: AssignmentMatrix::from_choices(&candidates[i].1, scen.n_stations()),
        power_flow,
        objective,
        opf_solves,
    })
}

/// Literal enumeration over every per-EV station choice, memoizing OPF
/// solves by count vector. Only for tiny instances.
pub fn enumerate_binary_brute(
    grid: &Grid,
    scen: &Scenario,
    cap: usize,
    solver: &dyn ConicSolver,
) -> Result<BinaryOptimum, OracleError> {
    scen.check_capacity()?;
    let d = distances(&scen.evs, &scen.stations);
    let sets: Vec<Vec<usize>> = scen
        .evs
        .iter()
        .enumerate()
        .map(|(a, ev)| feasible_stations(ev, d.row(a)))
        .collect::<Result<_, _>>()?;
    let total = sets
        .iter()
        .try_fold(1usize, |acc, s| acc.checked_mul(s.len()))
        .unwrap_or(usize::MAX);
    if total > cap {
        return Err(OracleError::TooLarge { count: total, cap });
    }
    let n = scen.n_stations();
    let mut memo: std::collections::BTreeMap<Vec<usize>, Option<(PowerFlowSolution, f64)>> =
        Default::default();
    let mut best: Option<(Vec<usize>, f64)> = None;
    let mut idx = vec![0usize; sets.len()];
    loop {
        let choice: Vec<usize> = idx.iter().zip(&sets).map(|(&i, s)| s[i]).collect();
        let mut counts = vec![0usize; n];
        for &j in &choice {
            counts[j] += 1;
        }
        let fits = counts
            .iter()
            .zip(&scen.stations)
            .all(|(&c, s)| c <= s.available as usize);
        if fits {
            if !memo.contains_key(&counts) {
                let agg: Vec<f64> = counts.iter().map(|&v| v as f64).collect();
                let r = match grid_cost(grid, scen, &agg, solver) {
                    Ok(r) => Some(r),
                    Err(OpfError::Infeasible) => None,
                    Err(e) => return Err(e.into()),
                };
                memo.insert(counts.clone(), r);
            }
            if let Some((_, f)) = &memo[&counts] {
                let u = AssignmentMatrix::from_choices(&choice, n);
                let obj = f + scen.travel_cost(&d, &u);
                if best.as_ref().map_or(true, |(_, b)| obj < *b) {
                    best = Some((choice, obj));
                }
            }
        }
        // odometer increment
        let mut k = 0;
        loop {
            if k == idx.len() {
                let (choice, objective) = best.ok_or(OracleError::NoFeasibleAssignment)?;
                let assignment = AssignmentMatrix::from_choices(&choice, n);
                let counts: Vec<usize> = aggregate(&assignment).iter().map(|&v| v as usize).collect();
                let power_flow = memo[&counts].clone().expect("feasible").0;
                return Ok(BinaryOptimum {
                    assignment,
                    power_flow,
                    objective,
                    opf_solves: memo.len(),
                });
            }
            idx[k] += 1;
            if idx[k] < sets[k].len() {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}

/// Rounding quality of a relaxed assignment against the binary optimum.
#[derive(Debug, Clone, Serialize)]
pub struct RoundingGap {
    pub rounded: AssignmentMatrix,
    pub rounded_objective: f64,
    pub binary_objective: f64,
    /// `(rounded - binary) / binary`.
    pub gap: f64,
}

pub fn rounding_gap(
    grid: &Grid,
    scen: &Scenario,
    relaxed: &AssignmentMatrix,
    cap: usize,
    solver: &dyn ConicSolver,
) -> Result<RoundingGap, OracleError> {
    let best = enumerate_binary(grid, scen, cap, solver)?;
    let d = distances(&scen.evs, &scen.stations);
    let rounded = discretize(relaxed, scen, &d)?;
    let (_, rounded_objective) = assignment_objective(grid, scen, &rounded, solver)?;
    Ok(RoundingGap {
        gap: (rounded_objective - best.objective) / best.objective.abs().max(f64::MIN_POSITIVE),
        rounded,
        rounded_objective,
        binary_objective: best.objective,
    })
}

/// Largest objective decrease available from a 2×2 mass transfer between
/// two critical EVs sharing two stations. Such a transfer keeps every
/// station count, so only travel cost changes. Zero at an optimum.
pub fn pairwise_transfer_gain(scen: &Scenario, d: &DistanceMatrix, u: &AssignmentMatrix) -> f64 {
    let critical: Vec<usize> = (0..u.n_evs())
        .filter(|&a| u.u[a].iter().all(|&v| v < 1.0 - EPS_BIN))
        .collect();
    let n = scen.n_stations();
    let mut gain: f64 = 0.0;
    for (i, &a) in critical.iter().enumerate() {
        for &b in &critical[i + 1..] {
            for j in 0..n {
                for k in 0..n {
                    if j == k {
                        continue;
                    }
                    let (uaj, uak, ubj, ubk) = (u.u[a][j], u.u[a][k], u.u[b][j], u.u[b][k]);
                    if uaj.min(uak).min(ubj).min(ubk) <= EPS_BIN {
                        continue;
                    }
                    // move δ of a from k to j and δ of b from j to k
                    let delta = uak.min(ubj);
                    let change =
                        d.rows[a][j] - d.rows[a][k] - d.rows[b][j] + d.rows[b][k];
                    gain = gain.max(-scen.alpha_per_km * delta * change);
                }
            }
        }
    }
    gain
}

/// Largest objective decrease from swapping the stations of two EVs in a
/// binary assignment (counts unchanged, both EVs in range).
pub fn exchange_gain(scen: &Scenario, d: &DistanceMatrix, choices: &[usize]) -> f64 {
    let mut gain: f64 = 0.0;
    for a in 0..choices.len() {
        for b in a + 1..choices.len() {
            let (j, k) = (choices[a], choices[b]);
            if j == k
                || d.rows[a][k] > scen.evs[a].range()
                || d.rows[b][j] > scen.evs[b].range()
            {
                continue;
            }
            let change = d.rows[a][k] + d.rows[b][j] - d.rows[a][j] - d.rows[b][k];
            gain = gain.max(-scen.alpha_per_km * change);
        }
    }
    gain
}
