//! Export to the Conic Benchmark Format (CBF, version 3) for cross-checking
//! with external solvers.

use std::fmt::Write as _;

use super::problem::ConicProblem;

/// Render `problem` as CBF text. Every constraint becomes an affine map
/// `A x + b` in `L=`, `L+` or `Q`; variables are declared free. Square
/// penalty terms are exported through cone epigraphs.
pub fn to_cbf(problem: &ConicProblem) -> String {
    let owned;
    let problem = if problem.squares.is_empty() {
        problem
    } else {
        owned = problem.epigraph_form();
        &owned
    };
    let n = problem.n_vars();
    // (terms, constant) per constraint row, grouped by domain
    let mut eq_rows: Vec<(Vec<(usize, f64)>, f64)> = problem
        .equalities
        .iter()
        .map(|r| (r.terms.clone(), -r.rhs))
        .collect();
    let mut pos_rows = Vec::new();
    for k in 0..n {
        let (lo, hi) = (problem.lower[k], problem.upper[k]);
        if lo == hi {
            eq_rows.push((vec![(k, 1.0)], -lo));
            continue;
        }
        if lo.is_finite() {
            pos_rows.push((vec![(k, 1.0)], -lo));
        }
        if hi.is_finite() {
            pos_rows.push((vec![(k, -1.0)], hi));
        }
    }
    let mut domains: Vec<(String, usize)> = Vec::new();
    let mut rows = Vec::new();
    if !eq_rows.is_empty() {
        domains.push(("L=".into(), eq_rows.len()));
        rows.extend(eq_rows);
    }
    if !pos_rows.is_empty() {
        domains.push(("L+".into(), pos_rows.len()));
        rows.extend(pos_rows);
    }
    for cone in &problem.cones {
        domains.push(("Q".into(), cone.dim()));
        rows.extend(cone.rows.iter().map(|r| (r.terms.clone(), r.constant)));
    }

    let mut out = String::new();
    let _ = writeln!(out, "# swapgrid conic export\nVER\n3\n\nOBJSENSE\nMIN\n");
    let _ = writeln!(out, "VAR\n{n} 1\nF {n}\n");
    let _ = writeln!(out, "CON\n{} {}", rows.len(), domains.len());
    for (d, k) in &domains {
        let _ = writeln!(out, "{d} {k}");
    }
    let obj: Vec<(usize, f64)> = problem
        .objective
        .iter()
        .copied()
        .enumerate()
        .filter(|(_, c)| *c != 0.0)
        .collect();
    let _ = writeln!(out, "\nOBJACOORD\n{}", obj.len());
    for (j, c) in obj {
        let _ = writeln!(out, "{j} {c:e}");
    }
    if problem.objective_constant != 0.0 {
        let _ = writeln!(out, "\nOBJBCOORD\n{:e}", problem.objective_constant);
    }
    let a: Vec<(usize, usize, f64)> = rows
        .iter()
        .enumerate()
        .flat_map(|(i, (t, _))| t.iter().filter(|x| x.1 != 0.0).map(move |&(j, v)| (i, j, v)))
        .collect();
    let _ = writeln!(out, "\nACOORD\n{}", a.len());
    for (i, j, v) in a {
        let _ = writeln!(out, "{i} {j} {v:e}");
    }
    let b: Vec<(usize, f64)> = rows
        .iter()
        .enumerate()
        .filter(|(_, r)| r.1 != 0.0)
        .map(|(i, r)| (i, r.1))
        .collect();
    let _ = writeln!(out, "\nBCOORD\n{}", b.len());
    for (i, v) in b {
        let _ = writeln!(out, "{i} {v:e}");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conic::problem::Affine;

    #[test]
    fn sections_present() {
        let mut p = ConicProblem::new();
        let x = p.add_var("x", 0.0, 1.0);
        p.add_objective(x, 2.0);
        p.add_cone("c", vec![Affine::constant(1.0), Affine::var(x)]);
        let text = to_cbf(&p);
        for s in ["VER\n3", "VAR\n1 1", "CON\n4 2", "L+ 2", "Q 2", "OBJACOORD\n1", "ACOORD\n3"] {
            assert!(text.contains(s), "missing {s:?} in\n{text}");
        }
    }
}
