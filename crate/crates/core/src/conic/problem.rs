//! Standard conic form shared by every solve in the crate.
//!
//! ```text
//! minimize    c'x + c0 + Σ_k weight_k Σ_i e_ki(x)²
//! subject to  A x = b
//!             lower <= x <= upper
//!             head_k(x) >= || tail_k(x) ||      for every cone block k
//! ```
//!
//! Each cone row is an affine expression `a'x + h`. Convex quadratic costs
//! go through cone epigraphs ([`ConicProblem::add_square_epigraph`]).
//! Penalties that are driven to zero at the optimum are kept as explicit
//! sums of squares instead ([`ConicProblem::add_square_penalty`]): an
//! epigraph variable near zero sits at the tip of its cone, where an
//! interior point method resolves the penalized residual only to about the
//! square root of its tolerance.

use std::collections::BTreeMap;

/// Sparse affine expression `Σ coeff·x[var] + constant`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Affine {
    pub terms: Vec<(usize, f64)>,
    pub constant: f64,
}

impl Affine {
    pub fn var(index: usize) -> Self {
        Affine {
            terms: vec![(index, 1.0)],
            constant: 0.0,
        }
    }

    pub fn constant(c: f64) -> Self {
        Affine {
            terms: Vec::new(),
            constant: c,
        }
    }

    pub fn term(mut self, index: usize, coeff: f64) -> Self {
        self.terms.push((index, coeff));
        self
    }

    pub fn plus(mut self, c: f64) -> Self {
        self.constant += c;
        self
    }

    pub fn scaled(mut self, s: f64) -> Self {
        for t in &mut self.terms {
            t.1 *= s;
        }
        self.constant *= s;
        self
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|&(i, a)| a * x[i]).sum::<f64>() + self.constant
    }
}

/// Equality row `Σ coeff·x = rhs`.
#[derive(Debug, Clone, PartialEq)]
pub struct EqRow {
    pub terms: Vec<(usize, f64)>,
    pub rhs: f64,
}

/// Second-order cone `rows[0] >= ||rows[1..]||`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConeBlock {
    pub label: String,
    pub rows: Vec<Affine>,
}

impl ConeBlock {
    pub fn dim(&self) -> usize {
        self.rows.len()
    }

    /// `head - ||tail||` at `x`; nonnegative iff `x` is inside the cone.
    pub fn margin(&self, x: &[f64]) -> f64 {
        let head = self.rows[0].eval(x);
        let tail: f64 = self.rows[1..].iter().map(|r| r.eval(x).powi(2)).sum();
        head - tail.sqrt()
    }
}

/// Objective term `weight · Σ e_i²`.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareTerm {
    pub weight: f64,
    pub exprs: Vec<Affine>,
}

/// Quadratic objective `½ x'Px + q'x + r` expanded from the square terms;
/// `p` holds the upper triangle of `P`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExpandedQuadratic {
    pub p: BTreeMap<(usize, usize), f64>,
    pub q: Vec<f64>,
    pub r: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConicProblem {
    pub names: Vec<String>,
    pub objective: Vec<f64>,
    pub objective_constant: f64,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub equalities: Vec<EqRow>,
    pub cones: Vec<ConeBlock>,
    pub squares: Vec<SquareTerm>,
}

impl ConicProblem {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn n_vars(&self) -> usize {
        self.objective.len()
    }

    /// Add a variable with bounds; returns its index.
    pub fn add_var(&mut self, name: impl Into<String>, lower: f64, upper: f64) -> usize {
        debug_assert!(lower <= upper, "empty bound interval");
        self.names.push(name.into());
        self.objective.push(0.0);
        self.lower.push(lower);
        self.upper.push(upper);
        self.objective.len() - 1
    }

    pub fn add_free(&mut self, name: impl Into<String>) -> usize {
        self.add_var(name, f64::NEG_INFINITY, f64::INFINITY)
    }

    pub fn add_objective(&mut self, var: usize, coeff: f64) {
        self.objective[var] += coeff;
    }

    pub fn add_eq(&mut self, terms: Vec<(usize, f64)>, rhs: f64) {
        self.equalities.push(EqRow { terms, rhs });
    }

    pub fn add_cone(&mut self, label: impl Into<String>, rows: Vec<Affine>) {
        debug_assert!(rows.len() >= 2);
        self.cones.push(ConeBlock {
            label: label.into(),
            rows,
        });
    }

    /// Epigraph variable `t >= Σ weight·e_i²` for affine `e_i`, encoded as
    /// the cone `(t + 1, t - 1, 2·sqrt(weight)·e_1, ...)`.
    pub fn add_square_epigraph(
        &mut self,
        name: impl Into<String>,
        weight: f64,
        exprs: Vec<Affine>,
    ) -> usize {
        let name = name.into();
        let t = self.add_var(name.clone(), 0.0, f64::INFINITY);
        let scale = 2.0 * weight.sqrt();
        let mut rows = vec![Affine::var(t).plus(1.0), Affine::var(t).plus(-1.0)];
        rows.extend(exprs.into_iter().map(|e| e.scaled(scale)));
        self.add_cone(name, rows);
        t
    }

    /// Add `weight · Σ e_i²` to the objective.
    ///
    /// An expression over several variables gets a free auxiliary variable
    /// equal to its linear part, so that `P` stays diagonal instead of
    /// filling in a dense block over all of its variables.
    pub fn add_square_penalty(&mut self, weight: f64, exprs: Vec<Affine>) {
        debug_assert!(weight >= 0.0);
        let exprs = exprs
            .into_iter()
            .map(|e| {
                if e.terms.len() <= 1 {
                    return e;
                }
                let s = self.add_free(format!("sqaux[{}]", self.n_vars()));
                let mut terms = e.terms;
                terms.push((s, -1.0));
                self.add_eq(terms, 0.0);
                Affine::var(s).plus(e.constant)
            })
            .collect();
        self.squares.push(SquareTerm { weight, exprs });
    }

    /// Equivalent problem with every square term replaced by a cone
    /// epigraph, for export to purely conic formats.
    pub fn epigraph_form(&self) -> ConicProblem {
        let mut out = self.clone();
        out.squares.clear();
        for (k, sq) in self.squares.iter().enumerate() {
            let t = out.add_square_epigraph(format!("square[{k}]"), sq.weight, sq.exprs.clone());
            out.add_objective(t, 1.0);
        }
        out
    }

    /// Expand the square terms into `½ x'Px + q'x + r`.
    pub fn expand_squares(&self) -> ExpandedQuadratic {
        let mut out = ExpandedQuadratic {
            q: vec![0.0; self.n_vars()],
            ..Default::default()
        };
        for sq in &self.squares {
            for e in &sq.exprs {
                let mut merged: BTreeMap<usize, f64> = BTreeMap::new();
                for &(i, a) in &e.terms {
                    *merged.entry(i).or_default() += a;
                }
                let terms: Vec<(usize, f64)> = merged.into_iter().collect();
                for (k, &(i, a)) in terms.iter().enumerate() {
                    out.q[i] += 2.0 * sq.weight * e.constant * a;
                    for &(j, b) in &terms[k..] {
                        *out.p.entry((i, j)).or_default() += 2.0 * sq.weight * a * b;
                    }
                }
                out.r += sq.weight * e.constant * e.constant;
            }
        }
        out
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        let linear =
            self.objective.iter().zip(x).map(|(c, v)| c * v).sum::<f64>() + self.objective_constant;
        let squares: f64 = self
            .squares
            .iter()
            .map(|sq| sq.weight * sq.exprs.iter().map(|e| e.eval(x).powi(2)).sum::<f64>())
            .sum();
        linear + squares
    }

    /// Largest violation of equalities, bounds and cones at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for row in &self.equalities {
            let lhs: f64 = row.terms.iter().map(|&(i, a)| a * x[i]).sum();
            worst = worst.max((lhs - row.rhs).abs());
        }
        for (i, &v) in x.iter().enumerate() {
            worst = worst.max(self.lower[i] - v).max(v - self.upper[i]);
        }
        for cone in &self.cones {
            worst = worst.max(-cone.margin(x));
        }
        worst
    }
}
