//! Python bindings for `swapgrid`.
//!
//! Feeders and scenarios are wrapped as classes. Solver results come back
//! as plain dicts built from their JSON form.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

use swapgrid::admm::{run_admm as core_admm, AdmmError, AdmmParams};
use swapgrid::conic::{exactness_residuals, max_relative_residual, ClarabelSolver, EPS_EXACT};
use swapgrid::dualdecomp::{run_dual as core_dual, DualError, DualParams};
use swapgrid::fixtures::{self, CapacityPolicy};
use swapgrid::fleet::{self, AssignmentMatrix, AssignmentMode};
use swapgrid::grid::{FeederDocument, Grid};
use swapgrid::oracle::{self, DEFAULT_CAP};
use swapgrid::simnet::{self, audit_privacy, Algorithm, Engine, SessionResult};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn to_py<'py>(py: Python<'py>, value: &impl Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(runtime_err)?;
    py.import("json")?.call_method1("loads", (text,))
}

/// A radial distribution feeder.
#[pyclass(frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct Feeder {
    doc: FeederDocument,
    grid: Grid,
}

impl Feeder {
    fn new(doc: FeederDocument) -> PyResult<Self> {
        let grid = doc.clone().into_grid().map_err(value_err)?;
        Ok(Feeder { doc, grid })
    }
}

#[pymethods]
impl Feeder {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let doc: FeederDocument = serde_json::from_str(text).map_err(value_err)?;
        Feeder::new(doc)
    }

    /// The 6-bus test feeder.
    #[staticmethod]
    fn feeder6() -> PyResult<Self> {
        Feeder::new(fixtures::feeder6())
    }

    /// The 56-bus stand-in feeder.
    #[staticmethod]
    fn sce56() -> PyResult<Self> {
        Feeder::new(fixtures::sce56_standin())
    }

    fn to_json(&self) -> String {
        self.doc.to_json()
    }

    #[getter]
    fn n_buses(&self) -> usize {
        self.doc.buses.len()
    }

    /// Largest relative cone residual of a power-flow solution dict.
    fn exactness(&self, power_flow: &Bound<'_, PyAny>) -> PyResult<(f64, bool)> {
        let text: String = power_flow.py().import("json")?.call_method1("dumps", (power_flow,))?.extract()?;
        let pf = serde_json::from_str(&text).map_err(value_err)?;
        let worst = max_relative_residual(&exactness_residuals(&self.grid, &pf));
        Ok((worst, worst <= EPS_EXACT))
    }
}

/// EVs, stations and cost parameters.
#[pyclass(frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct Scenario {
    inner: fleet::Scenario,
}

#[pymethods]
impl Scenario {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner = fleet::Scenario::from_json(text.as_bytes()).map_err(value_err)?;
        Ok(Scenario { inner })
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    #[getter]
    fn n_evs(&self) -> usize {
        self.inner.n_evs()
    }

    #[getter]
    fn n_stations(&self) -> usize {
        self.inner.n_stations()
    }

    /// Available batteries per station.
    #[getter]
    fn capacities(&self) -> Vec<f64> {
        self.inner.capacities()
    }

    /// Pairwise EV-to-station distances in km.
    fn distances(&self) -> Vec<Vec<f64>> {
        fleet::distances(&self.inner.evs, &self.inner.stations).rows
    }
}

/// The 6-bus instance with 20 EVs, capacity binding or ample.
#[pyfunction]
#[pyo3(signature = (binding = true))]
fn instance6(binding: bool) -> PyResult<(Feeder, Scenario)> {
    let inst = fixtures::instance6(binding);
    Ok((Feeder::new(inst.feeder)?, Scenario { inner: inst.scenario }))
}

/// The 56-bus instance with `n_evs` EVs. `policy` is "ample" or "uneven".
#[pyfunction]
#[pyo3(signature = (n_evs, policy = "uneven", seed = 1))]
fn instance56(n_evs: usize, policy: &str, seed: u64) -> PyResult<(Feeder, Scenario)> {
    let policy = match policy {
        "ample" | "i" => CapacityPolicy::Ample,
        "uneven" | "ii" => CapacityPolicy::Uneven,
        other => return Err(PyValueError::new_err(format!("unknown capacity policy {other:?}"))),
    };
    if n_evs == 0 {
        return Err(PyValueError::new_err("n_evs must be positive"));
    }
    let inst = fixtures::instance56(n_evs, policy, seed);
    Ok((Feeder::new(inst.feeder)?, Scenario { inner: inst.scenario }))
}

fn check(feeder: &Feeder, scenario: &Scenario) -> PyResult<()> {
    scenario.inner.check_against(&feeder.grid).map_err(value_err)
}

/// Joint relaxed optimum solved in one conic program.
#[pyfunction]
fn solve_centralized<'py>(py: Python<'py>, feeder: &Feeder, scenario: &Scenario) -> PyResult<Bound<'py, PyAny>> {
    check(feeder, scenario)?;
    let out = py
        .detach(|| oracle::solve_centralized_relaxed(&feeder.grid, &scenario.inner, &ClarabelSolver::default()))
        .map_err(runtime_err)?;
    to_py(py, &out)
}

/// Exact binary optimum by enumerating station count vectors.
#[pyfunction]
#[pyo3(signature = (feeder, scenario, cap = DEFAULT_CAP))]
fn enumerate_binary<'py>(
    py: Python<'py>,
    feeder: &Feeder,
    scenario: &Scenario,
    cap: usize,
) -> PyResult<Bound<'py, PyAny>> {
    check(feeder, scenario)?;
    let out = py
        .detach(|| oracle::enumerate_binary(&feeder.grid, &scenario.inner, cap, &ClarabelSolver::default()))
        .map_err(runtime_err)?;
    to_py(py, &out)
}

#[derive(Serialize)]
struct Run<T> {
    converged: bool,
    #[serde(flatten)]
    outcome: T,
}

/// ADMM between utility and operator. On hitting the iteration cap the
/// best iterate is returned with `converged` set to false.
#[pyfunction]
#[pyo3(signature = (feeder, scenario, rho = None, max_iters = None))]
fn run_admm<'py>(
    py: Python<'py>,
    feeder: &Feeder,
    scenario: &Scenario,
    rho: Option<f64>,
    max_iters: Option<usize>,
) -> PyResult<Bound<'py, PyAny>> {
    check(feeder, scenario)?;
    let mut params = AdmmParams::for_rate(scenario.inner.r_mw);
    params.rho = rho.unwrap_or(params.rho);
    params.max_iters = max_iters.unwrap_or(params.max_iters);
    let res = py.detach(|| core_admm(&feeder.grid, &scenario.inner, &params, &ClarabelSolver::default()));
    match res {
        Ok(outcome) => to_py(py, &Run { converged: true, outcome }),
        Err(AdmmError::NonConvergence { best, .. }) => to_py(py, &Run { converged: false, outcome: *best }),
        Err(AdmmError::InvalidParams(m)) => Err(PyValueError::new_err(m)),
        Err(e) => Err(runtime_err(e)),
    }
}

/// Dual decomposition with price signals to the EVs.
#[pyfunction]
#[pyo3(signature = (feeder, scenario, max_iters = None))]
fn run_dual<'py>(
    py: Python<'py>,
    feeder: &Feeder,
    scenario: &Scenario,
    max_iters: Option<usize>,
) -> PyResult<Bound<'py, PyAny>> {
    check(feeder, scenario)?;
    let mut params = DualParams::for_fleet(scenario.inner.n_evs());
    params.max_iters = max_iters.unwrap_or(params.max_iters);
    let res = py.detach(|| core_dual(&feeder.grid, &scenario.inner, &params, &ClarabelSolver::default()));
    match res {
        Ok(outcome) => to_py(py, &Run { converged: true, outcome }),
        Err(DualError::NonConvergence { best, .. }) => to_py(py, &Run { converged: false, outcome: *best }),
        Err(DualError::InvalidParams(m)) => Err(PyValueError::new_err(m)),
        Err(e) => Err(runtime_err(e)),
    }
}

/// Runs an algorithm as a message-passing session and audits its log.
/// Returns `(result, privacy_report)`.
#[pyfunction]
#[pyo3(signature = (feeder, scenario, algorithm = "admm", threaded = false))]
fn run_session<'py>(
    py: Python<'py>,
    feeder: &Feeder,
    scenario: &Scenario,
    algorithm: &str,
    threaded: bool,
) -> PyResult<(Bound<'py, PyAny>, Bound<'py, PyAny>)> {
    check(feeder, scenario)?;
    let algo = match algorithm {
        "admm" => Algorithm::Admm(AdmmParams::for_rate(scenario.inner.r_mw)),
        "dual" => Algorithm::Dual(DualParams::for_fleet(scenario.inner.n_evs())),
        other => return Err(PyValueError::new_err(format!("unknown algorithm {other:?}"))),
    };
    let engine = if threaded { Engine::Threaded } else { Engine::Synchronous };
    let out = py.detach(|| simnet::run_session_with(&feeder.grid, &scenario.inner, &algo, &ClarabelSolver::default(), engine));
    let report = audit_privacy(&out.log);
    let result = match out.result.map_err(runtime_err)? {
        SessionResult::Admm(o) => to_py(py, &o)?,
        SessionResult::Dual(o) => to_py(py, &o)?,
    };
    Ok((result, to_py(py, &report)?))
}

fn relaxed(u: Vec<Vec<f64>>) -> AssignmentMatrix {
    AssignmentMatrix {
        u,
        mode: AssignmentMode::Relaxed,
    }
}

/// Rounds a fractional assignment to one station per EV.
#[pyfunction]
fn discretize(scenario: &Scenario, u: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
    let scen = &scenario.inner;
    if u.len() != scen.n_evs() || u.iter().any(|r| r.len() != scen.n_stations()) {
        return Err(PyValueError::new_err("assignment shape does not match the scenario"));
    }
    let d = fleet::distances(&scen.evs, &scen.stations);
    Ok(fleet::discretize(&relaxed(u), scen, &d).map_err(value_err)?.u)
}

/// Number of EVs whose row is not a unit vector.
#[pyfunction]
fn count_critical(u: Vec<Vec<f64>>) -> usize {
    fleet::count_critical(&relaxed(u))
}

#[pymodule]
fn swapgrid_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Feeder>()?;
    m.add_class::<Scenario>()?;
    m.add_function(wrap_pyfunction!(instance6, m)?)?;
    m.add_function(wrap_pyfunction!(instance56, m)?)?;
    m.add_function(wrap_pyfunction!(solve_centralized, m)?)?;
    m.add_function(wrap_pyfunction!(enumerate_binary, m)?)?;
    m.add_function(wrap_pyfunction!(run_admm, m)?)?;
    m.add_function(wrap_pyfunction!(run_dual, m)?)?;
    m.add_function(wrap_pyfunction!(run_session, m)?)?;
    m.add_function(wrap_pyfunction!(discretize, m)?)?;
    m.add_function(wrap_pyfunction!(count_critical, m)?)?;
    Ok(())
}
