//! EVs, swapping stations and the station-assignment polytope.
//!
//! An assignment `u` is an `A × N_w` matrix. In relaxed form every entry is
//! in `[0, 1]`, entries for out-of-range stations are zero, rows sum to one
//! and column sums stay within the available fully charged batteries.

mod rounding;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conic::{Affine, ConicProblem, ConicSolver, SolveError, StationLoads};
use crate::grid::{BusId, Grid};

pub use rounding::{discretize, randomized_round, repair_capacity};

/// Threshold below which an entry is not considered equal to one (or zero).
pub const EPS_BIN: f64 = 1e-6;

/// Format tag of scenario documents.
pub const SCENARIO_FORMAT: &str = "swapgrid-scenario/1";

#[derive(Debug, Clone, Error, PartialEq)]
pub enum FleetError {
    #[error("EV {0} cannot reach any station")]
    EvUnreachable(u32),
    #[error("capacity infeasible: {available} charged batteries for {evs} EVs")]
    CapacityInfeasible { available: f64, evs: usize },
    #[error("capacity repair failed: no EV at an over-full station can move to a station with slack")]
    RepairFailed,
    #[error("assignment solve failed: {0}")]
    Solve(#[from] SolveError),
    #[error("invalid scenario at {path}: {message}")]
    Invalid { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ev {
    pub id: u32,
    pub x: f64,
    pub y: f64,
    /// Kilometres per unit of charge.
    pub gamma: f64,
    /// Remaining state of charge.
    pub charge: f64,
}

impl Ev {
    /// Driving range in km.
    pub fn range(&self) -> f64 {
        self.gamma * self.charge
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Station {
    pub id: u32,
    pub bus: BusId,
    pub x: f64,
    pub y: f64,
    /// Total batteries `M_j`.
    #[serde(rename = "M")]
    pub total: u32,
    /// Fully charged batteries available `m_j`.
    #[serde(rename = "m")]
    pub available: u32,
}

/// Fleet and station data plus the scenario constants `r` and `α`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub format: String,
    /// Charging rate per battery (MW).
    pub r_mw: f64,
    /// Travel-distance weight ($/km).
    pub alpha_per_km: f64,
    pub evs: Vec<Ev>,
    pub stations: Vec<Station>,
    #[serde(default)]
    pub seed: u64,
}

impl Scenario {
    pub fn new(r_mw: f64, alpha_per_km: f64, evs: Vec<Ev>, stations: Vec<Station>, seed: u64) -> Self {
        Scenario {
            format: SCENARIO_FORMAT.to_string(),
            r_mw,
            alpha_per_km,
            evs,
            stations,
            seed,
        }
    }

    pub fn from_json(text: &[u8]) -> Result<Self, FleetError> {
        let de = &mut serde_json::Deserializer::from_slice(text);
        let scen: Scenario =
            serde_path_to_error::deserialize(de).map_err(|e| FleetError::Invalid {
                path: e.path().to_string(),
                message: e.inner().to_string(),
            })?;
        scen.validate()?;
        Ok(scen)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<(), FleetError> {
        let bad = |path: String, message: &str| {
            Err(FleetError::Invalid {
                path,
                message: message.to_string(),
            })
        };
        if self.format != SCENARIO_FORMAT {
            return bad("format".into(), "expected swapgrid-scenario/1");
        }
        if !(self.r_mw > 0.0) || !(self.alpha_per_km >= 0.0) {
            return bad("r_mw".into(), "require r_mw > 0 and alpha_per_km >= 0");
        }
        for (i, ev) in self.evs.iter().enumerate() {
            if !(ev.x.is_finite() && ev.y.is_finite()) || !(ev.range() >= 0.0) {
                return bad(format!("evs[{i}]"), "positions finite and range nonnegative");
            }
        }
        for (j, st) in self.stations.iter().enumerate() {
            if st.available > st.total {
                return bad(format!("stations[{j}]"), "require m <= M");
            }
            if self.stations[..j].iter().any(|o| o.bus == st.bus) {
                return bad(format!("stations[{j}].bus"), "at most one station per bus");
            }
        }
        Ok(())
    }

    /// Check the stations sit on station buses of `grid`.
    pub fn check_against(&self, grid: &Grid) -> Result<(), FleetError> {
        for (j, st) in self.stations.iter().enumerate() {
            let Some(bus) = grid.bus(st.bus) else {
                return Err(FleetError::Invalid {
                    path: format!("stations[{j}].bus"),
                    message: format!("bus {} not in feeder", st.bus),
                });
            };
            match bus.station_id {
                Some(sid) if sid == st.id => {}
                _ => {
                    return Err(FleetError::Invalid {
                        path: format!("stations[{j}]"),
                        message: format!("feeder bus {} does not host station {}", st.bus, st.id),
                    })
                }
            }
        }
        Ok(())
    }

    pub fn n_evs(&self) -> usize {
        self.evs.len()
    }

    pub fn n_stations(&self) -> usize {
        self.stations.len()
    }

    pub fn station_loads(&self) -> StationLoads {
        StationLoads {
            bus: self.stations.iter().map(|s| s.bus).collect(),
            total: self.stations.iter().map(|s| s.total as f64).collect(),
            available: self.stations.iter().map(|s| s.available as f64).collect(),
            rate_mw: self.r_mw,
        }
    }

    pub fn capacities(&self) -> Vec<f64> {
        self.stations.iter().map(|s| s.available as f64).collect()
    }

    pub fn check_capacity(&self) -> Result<(), FleetError> {
        let available: f64 = self.capacities().iter().sum();
        if available < self.evs.len() as f64 {
            return Err(FleetError::CapacityInfeasible {
                available,
                evs: self.evs.len(),
            });
        }
        Ok(())
    }

    /// Travel-distance cost `g(u) = α Σ d_aj u_aj`.
    pub fn travel_cost(&self, d: &DistanceMatrix, u: &AssignmentMatrix) -> f64 {
        self.alpha_per_km
            * d.rows
                .iter()
                .zip(&u.u)
                .map(|(dr, ur)| dr.iter().zip(ur).map(|(a, b)| a * b).sum::<f64>())
                .sum::<f64>()
    }
}

/// Euclidean EV-to-station distances in km.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceMatrix {
    pub rows: Vec<Vec<f64>>,
}

impl DistanceMatrix {
    pub fn row(&self, a: usize) -> &[f64] {
        &self.rows[a]
    }
}

pub fn distances(evs: &[Ev], stations: &[Station]) -> DistanceMatrix {
    DistanceMatrix {
        rows: evs
            .iter()
            .map(|ev| {
                stations
                    .iter()
                    .map(|s| (ev.x - s.x).hypot(ev.y - s.y))
                    .collect()
            })
            .collect(),
    }
}

/// Stations within the EV's driving range, in index order.
pub fn feasible_stations(ev: &Ev, d_row: &[f64]) -> Result<Vec<usize>, FleetError> {
    let range = ev.range();
    let set: Vec<usize> = d_row
        .iter()
        .enumerate()
        .filter(|(_, &d)| d <= range)
        .map(|(j, _)| j)
        .collect();
    if set.is_empty() {
        Err(FleetError::EvUnreachable(ev.id))
    } else {
        Ok(set)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AssignmentMode {
    Relaxed,
    Binary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentMatrix {
    pub u: Vec<Vec<f64>>,
    pub mode: AssignmentMode,
}

impl AssignmentMatrix {
    pub fn zeros(n_evs: usize, n_stations: usize, mode: AssignmentMode) -> Self {
        AssignmentMatrix {
            u: vec![vec![0.0; n_stations]; n_evs],
            mode,
        }
    }

    /// Binary matrix from a station index per EV.
    pub fn from_choices(choices: &[usize], n_stations: usize) -> Self {
        let mut m = Self::zeros(choices.len(), n_stations, AssignmentMode::Binary);
        for (a, &j) in choices.iter().enumerate() {
            m.u[a][j] = 1.0;
        }
        m
    }

    pub fn n_evs(&self) -> usize {
        self.u.len()
    }

    /// Index of the largest entry of each row (lowest index on ties).
    pub fn argmax_rows(&self) -> Vec<usize> {
        self.u.iter().map(|row| argmax(row)).collect()
    }

    /// Largest deviation from the relaxed polytope.
    pub fn polytope_violation(&self, scen: &Scenario, d: &DistanceMatrix) -> f64 {
        let mut worst: f64 = 0.0;
        for (a, row) in self.u.iter().enumerate() {
            let range = scen.evs[a].range();
            for (j, &v) in row.iter().enumerate() {
                worst = worst.max(-v).max(v - 1.0);
                if d.rows[a][j] > range {
                    worst = worst.max(v.abs());
                }
            }
            worst = worst.max((row.iter().sum::<f64>() - 1.0).abs());
        }
        for (j, &col) in aggregate(self).iter().enumerate() {
            worst = worst.max(col - scen.stations[j].available as f64);
        }
        worst
    }
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = j;
        }
    }
    best
}

/// Per-station aggregates `u_j = Σ_a u_aj`.
pub fn aggregate(u: &AssignmentMatrix) -> Vec<f64> {
    let n = u.u.first().map_or(0, |r| r.len());
    let mut out = vec![0.0; n];
    for row in &u.u {
        for (j, v) in row.iter().enumerate() {
            out[j] += v;
        }
    }
    out
}

/// Number of EVs whose relaxed row has every entry below one.
pub fn count_critical(u: &AssignmentMatrix) -> usize {
    u.u.iter()
        .filter(|row| row.iter().all(|&v| v < 1.0 - EPS_BIN))
        .count()
}

/// Station an EV picks at prices `(λ, μ)`: the feasible station minimizing
/// `α d_aj - r λ_j + μ_j`, lowest index on ties. Returns the indicator row.
pub fn ev_best_response(
    ev: &Ev,
    d_row: &[f64],
    lambda: &[f64],
    mu: &[f64],
    alpha: f64,
    r: f64,
) -> Result<Vec<f64>, FleetError> {
    let feasible = feasible_stations(ev, d_row)?;
    let cost = |j: usize| alpha * d_row[j] - r * lambda[j] + mu[j];
    let mut best = feasible[0];
    for &j in &feasible[1..] {
        if cost(j) < cost(best) {
            best = j;
        }
    }
    let mut row = vec![0.0; d_row.len()];
    row[best] = 1.0;
    Ok(row)
}

/// Nearest in-range station for each EV, ignoring capacity.
pub fn nearest_assignment(scen: &Scenario, d: &DistanceMatrix) -> Result<AssignmentMatrix, FleetError> {
    let n = scen.n_stations();
    let zeros = vec![0.0; n];
    let mut u = AssignmentMatrix::zeros(0, n, AssignmentMode::Binary);
    for (a, ev) in scen.evs.iter().enumerate() {
        u.u.push(ev_best_response(ev, d.row(a), &zeros, &zeros, 1.0, 0.0)?);
    }
    Ok(u)
}

/// Assignment variables inside a conic problem.
#[derive(Debug, Clone)]
pub struct AssignmentLayout {
    /// `vars[a][j]` is `Some(index)` for in-range pairs.
    pub vars: Vec<Vec<Option<usize>>>,
    pub n_stations: usize,
}

impl AssignmentLayout {
    /// Affine expression for the aggregate `u_j`.
    pub fn aggregate_expr(&self, j: usize) -> Affine {
        let mut e = Affine::default();
        for row in &self.vars {
            if let Some(v) = row[j] {
                e.terms.push((v, 1.0));
            }
        }
        e
    }

    pub fn extract(&self, x: &[f64]) -> AssignmentMatrix {
        AssignmentMatrix {
            u: self
                .vars
                .iter()
                .map(|row| {
                    row.iter()
                        .map(|v| v.map_or(0.0, |i| x[i].clamp(0.0, 1.0)))
                        .collect()
                })
                .collect(),
            mode: AssignmentMode::Relaxed,
        }
    }
}

/// Add the relaxed assignment polytope and the travel cost `g(u)` to `prob`.
pub fn add_assignment_block(
    prob: &mut ConicProblem,
    scen: &Scenario,
    d: &DistanceMatrix,
) -> Result<AssignmentLayout, FleetError> {
    scen.check_capacity()?;
    let n = scen.n_stations();
    let mut vars = Vec::with_capacity(scen.n_evs());
    for (a, ev) in scen.evs.iter().enumerate() {
        let feasible = feasible_stations(ev, d.row(a))?;
        let mut row = vec![None; n];
        for j in feasible {
            let v = prob.add_var(format!("u[{},{}]", ev.id, scen.stations[j].id), 0.0, 1.0);
            prob.add_objective(v, scen.alpha_per_km * d.rows[a][j]);
            row[j] = Some(v);
        }
        prob.add_eq(row.iter().flatten().map(|&v| (v, 1.0)).collect(), 1.0);
        vars.push(row);
    }
    let layout = AssignmentLayout { vars, n_stations: n };
    for (j, st) in scen.stations.iter().enumerate() {
        let slack = prob.add_var(format!("cap_slack[{}]", st.id), 0.0, f64::INFINITY);
        let mut terms = layout.aggregate_expr(j).terms;
        terms.push((slack, 1.0));
        prob.add_eq(terms, st.available as f64);
    }
    Ok(layout)
}

/// ADMM assignment step: minimize `g(u) + Σ λ_j e_j + ρ/2 Σ e_j²` over the
/// relaxed polytope, where `e_j = w_j - r (M_j - m_j + u_j)`.
pub fn u_update(
    scen: &Scenario,
    d: &DistanceMatrix,
    w: &[f64],
    lambda: &[f64],
    rho: f64,
    solver: &dyn ConicSolver,
) -> Result<AssignmentMatrix, FleetError> {
    assert!(rho > 0.0, "penalty must be positive");
    let mut prob = ConicProblem::new();
    let layout = add_assignment_block(&mut prob, scen, d)?;
    let loads = scen.station_loads();
    let mut residuals = Vec::with_capacity(scen.n_stations());
    for j in 0..scen.n_stations() {
        // e_j = w_j - r(M_j - m_j) - r u_j
        let e = layout
            .aggregate_expr(j)
            .scaled(-scen.r_mw)
            .plus(w[j] - loads.load_mw(j, 0.0));
        for &(v, c) in &e.terms {
            prob.add_objective(v, lambda[j] * c);
        }
        prob.objective_constant += lambda[j] * e.constant;
        residuals.push(e);
    }
    prob.add_square_penalty(rho / 2.0, residuals);
    let sol = solver.solve(&prob)?;
    Ok(layout.extract(&sol.x))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(id: u32, x: f64, y: f64, range: f64) -> Ev {
        Ev {
            id,
            x,
            y,
            gamma: range,
            charge: 1.0,
        }
    }

    fn station(id: u32, x: f64, y: f64) -> Station {
        Station {
            id,
            bus: id + 1,
            x,
            y,
            total: 10,
            available: 10,
        }
    }

    #[test]
    fn distance_examples() {
        let d = distances(&[ev(0, 1.0, 1.0, 10.0), ev(1, 4.0, 5.0, 10.0)], &[station(0, 1.0, 1.0)]);
        assert_eq!(d.rows[0][0], 0.0);
        assert_eq!(d.rows[1][0], 5.0);
    }

    #[test]
    fn feasible_station_sets() {
        let d = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(feasible_stations(&ev(0, 0.0, 0.0, 10.0), &d).unwrap(), vec![0, 1, 2, 3]);
        assert_eq!(feasible_stations(&ev(0, 0.0, 0.0, 2.5), &d).unwrap(), vec![0, 1]);
        assert_eq!(
            feasible_stations(&ev(7, 0.0, 0.0, 0.5), &d),
            Err(FleetError::EvUnreachable(7))
        );
    }

    #[test]
    fn best_response_examples() {
        let e = ev(0, 0.0, 0.0, 10.0);
        let d = [1.0, 2.0];
        let zero = [0.0, 0.0];
        assert_eq!(ev_best_response(&e, &d, &zero, &zero, 0.02, 0.01).unwrap(), vec![1.0, 0.0]);
        assert_eq!(
            ev_best_response(&e, &d, &zero, &[0.1, 0.0], 0.02, 0.01).unwrap(),
            vec![0.0, 1.0]
        );
        // 0.02*1 + 0.02 == 0.02*2
        assert_eq!(
            ev_best_response(&e, &[1.0, 1.0], &zero, &zero, 0.02, 0.01).unwrap(),
            vec![1.0, 0.0]
        );
    }

    #[test]
    fn aggregates_and_critical_counts() {
        let z = AssignmentMatrix::zeros(3, 2, AssignmentMode::Relaxed);
        assert_eq!(aggregate(&z), vec![0.0, 0.0]);
        let b = AssignmentMatrix::from_choices(&[0, 0], 2);
        assert_eq!(aggregate(&b), vec![2.0, 0.0]);
        assert_eq!(count_critical(&b), 0);
        let single = AssignmentMatrix {
            u: vec![vec![0.707, 0.293, 0.0, 0.0]],
            mode: AssignmentMode::Relaxed,
        };
        assert_eq!(aggregate(&single), vec![0.707, 0.293, 0.0, 0.0]);
        let half = AssignmentMatrix {
            u: vec![vec![0.5, 0.5]],
            mode: AssignmentMode::Relaxed,
        };
        assert_eq!(count_critical(&half), 1);
    }
}
