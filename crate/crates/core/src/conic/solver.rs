//! Conic-solver contract and the Clarabel-backed implementation.

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettings, DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};
use thiserror::Error;

use super::problem::ConicProblem;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum SolveError {
    #[error("problem is infeasible")]
    Infeasible,
    #[error("problem is unbounded")]
    Unbounded,
    #[error("solver failed ({status}) after {iterations} iterations, primal residual {r_prim:.3e}, dual residual {r_dual:.3e}")]
    NumericalFailure {
        status: String,
        iterations: u32,
        r_prim: f64,
        r_dual: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConicSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub iterations: u32,
}

/// Anything that solves [`ConicProblem`]s.
pub trait ConicSolver: Send + Sync {
    fn name(&self) -> &'static str;
    fn solve(&self, problem: &ConicProblem) -> Result<ConicSolution, SolveError>;
}

/// Sparse primal-dual interior point solve through Clarabel.
#[derive(Debug, Clone)]
pub struct ClarabelSolver {
    pub tol_gap: f64,
    pub tol_feas: f64,
    pub max_iter: u32,
}

impl Default for ClarabelSolver {
    fn default() -> Self {
        ClarabelSolver {
            tol_gap: 1e-10,
            tol_feas: 1e-10,
            max_iter: 200,
        }
    }
}

impl ClarabelSolver {
    fn settings(&self, loosen: f64) -> DefaultSettings<f64> {
        DefaultSettingsBuilder::default()
            .verbose(false)
            .tol_gap_abs(self.tol_gap * loosen)
            .tol_gap_rel(self.tol_gap * loosen)
            .tol_feas(self.tol_feas * loosen)
            .max_iter(self.max_iter)
            .max_threads(1)
            .build()
            .expect("valid clarabel settings")
    }
}

/// Constraint rows `A x + s = b` grouped by cone, in Clarabel's convention.
struct Rows {
    i: Vec<usize>,
    j: Vec<usize>,
    v: Vec<f64>,
    b: Vec<f64>,
}

impl Rows {
    fn push(&mut self, terms: impl IntoIterator<Item = (usize, f64)>, rhs: f64) {
        let row = self.b.len();
        for (col, val) in terms {
            if val != 0.0 {
                self.i.push(row);
                self.j.push(col);
                self.v.push(val);
            }
        }
        self.b.push(rhs);
    }
}

impl ConicSolver for ClarabelSolver {
    fn name(&self) -> &'static str {
        "clarabel"
    }

    fn solve(&self, problem: &ConicProblem) -> Result<ConicSolution, SolveError> {
        let n = problem.n_vars();
        let mut rows = Rows {
            i: Vec::new(),
            j: Vec::new(),
            v: Vec::new(),
            b: Vec::new(),
        };
        let mut cones = Vec::new();

        // zero cone: equalities and pinned variables
        let start = rows.b.len();
        for eq in &problem.equalities {
            rows.push(eq.terms.iter().copied(), eq.rhs);
        }
        for k in 0..n {
            if problem.lower[k] == problem.upper[k] {
                rows.push([(k, 1.0)], problem.lower[k]);
            }
        }
        if rows.b.len() > start {
            cones.push(SupportedConeT::ZeroConeT(rows.b.len() - start));
        }

        // nonnegative cone: finite bounds
        let start = rows.b.len();
        for k in 0..n {
            let (lo, hi) = (problem.lower[k], problem.upper[k]);
            if lo == hi {
                continue;
            }
            if lo.is_finite() {
                rows.push([(k, -1.0)], -lo);
            }
            if hi.is_finite() {
                rows.push([(k, 1.0)], hi);
            }
        }
        if rows.b.len() > start {
            cones.push(SupportedConeT::NonnegativeConeT(rows.b.len() - start));
        }

        // second-order cones: s = a'x + h  =>  A row = -a, b = h
        for cone in &problem.cones {
            for r in &cone.rows {
                rows.push(r.terms.iter().map(|&(c, a)| (c, -a)), r.constant);
            }
            cones.push(SupportedConeT::SecondOrderConeT(cone.dim()));
        }

        let m = rows.b.len();
        let a = CscMatrix::new_from_triplets(m, n, rows.i, rows.j, rows.v);
        let quad = problem.expand_squares();
        let (pi, pj, pv): (Vec<usize>, Vec<usize>, Vec<f64>) = {
            let mut i = Vec::new();
            let mut j = Vec::new();
            let mut v = Vec::new();
            for (&(r, c), &val) in &quad.p {
                i.push(r);
                j.push(c);
                v.push(val);
            }
            (i, j, v)
        };
        let p = CscMatrix::new_from_triplets(n, n, pi, pj, pv);
        let q: Vec<f64> = problem.objective.iter().zip(&quad.q).map(|(a, b)| a + b).collect();
        // A stalled solve at full accuracy is retried once with tolerances
        // loosened a hundredfold before giving up.
        match self.run(problem, &p, &q, &a, &rows.b, &cones, 1.0) {
            Err(SolveError::NumericalFailure { .. }) => {
                self.run(problem, &p, &q, &a, &rows.b, &cones, 100.0)
            }
            other => other,
        }
    }
}

impl ClarabelSolver {
    fn run(
        &self,
        problem: &ConicProblem,
        p: &CscMatrix<f64>,
        q: &[f64],
        a: &CscMatrix<f64>,
        b: &[f64],
        cones: &[SupportedConeT<f64>],
        loosen: f64,
    ) -> Result<ConicSolution, SolveError> {
        let mut solver =
            DefaultSolver::new(p, q, a, b, cones, self.settings(loosen))
                .map_err(|e| SolveError::NumericalFailure {
                    status: format!("setup: {e:?}"),
                    iterations: 0,
                    r_prim: f64::NAN,
                    r_dual: f64::NAN,
                })?;
        solver.solve();
        let sol = &solver.solution;
        match sol.status {
            SolverStatus::Solved | SolverStatus::AlmostSolved => Ok(ConicSolution {
                objective: problem.objective_value(&sol.x),
                x: sol.x.clone(),
                iterations: sol.iterations,
            }),
            SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
                Err(SolveError::Infeasible)
            }
            SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => {
                Err(SolveError::Unbounded)
            }
            status => Err(SolveError::NumericalFailure {
                status: format!("{status:?}"),
                iterations: sol.iterations,
                r_prim: sol.r_prim,
                r_dual: sol.r_dual,
            }),
        }
    }
}
