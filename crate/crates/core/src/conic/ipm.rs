//! Dense primal-dual interior point solver with Nesterov-Todd scaling.
//!
//! Independent of the Clarabel backend and used to cross-check it on small
//! problems. Infeasible-start Mehrotra predictor-corrector on
//!
//! ```text
//! minimize c'x  s.t.  A x = b,  G x + s = h,  s in K
//! ```
//!
//! with `K` a product of the nonnegative orthant and second-order cones.
//! Dense factorizations make it unsuitable beyond a few hundred variables.

use nalgebra::{DMatrix, DVector};

use super::problem::ConicProblem;
use super::solver::{ConicSolution, ConicSolver, SolveError};

/// Tolerance accepted when the iteration stalls short of `tol`.
const REDUCED_TOL: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct DenseIpmSolver {
    pub tol: f64,
    pub max_iter: u32,
}

impl Default for DenseIpmSolver {
    fn default() -> Self {
        DenseIpmSolver {
            tol: 1e-9,
            max_iter: 100,
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Block {
    Orthant { start: usize, dim: usize },
    Soc { start: usize, dim: usize },
}

struct Standard {
    /// Symmetric quadratic objective matrix (`½ x'Px`).
    pm: DMatrix<f64>,
    c: DVector<f64>,
    a: DMatrix<f64>,
    b: DVector<f64>,
    g: DMatrix<f64>,
    h: DVector<f64>,
    blocks: Vec<Block>,
}

fn to_standard(p: &ConicProblem) -> Standard {
    let n = p.n_vars();
    let mut eq: Vec<(Vec<(usize, f64)>, f64)> = p
        .equalities
        .iter()
        .map(|r| (r.terms.clone(), r.rhs))
        .collect();
    let mut rows: Vec<(Vec<(usize, f64)>, f64)> = Vec::new();
    for k in 0..n {
        let (lo, hi) = (p.lower[k], p.upper[k]);
        if lo == hi {
            eq.push((vec![(k, 1.0)], lo));
            continue;
        }
        if lo.is_finite() {
            rows.push((vec![(k, -1.0)], -lo));
        }
        if hi.is_finite() {
            rows.push((vec![(k, 1.0)], hi));
        }
    }
    let mut blocks = Vec::new();
    if !rows.is_empty() {
        blocks.push(Block::Orthant {
            start: 0,
            dim: rows.len(),
        });
    }
    for cone in &p.cones {
        let start = rows.len();
        for r in &cone.rows {
            rows.push((r.terms.iter().map(|&(i, a)| (i, -a)).collect(), r.constant));
        }
        blocks.push(Block::Soc {
            start,
            dim: cone.dim(),
        });
    }
    let mut a = DMatrix::zeros(eq.len(), n);
    let mut b = DVector::zeros(eq.len());
    for (i, (terms, rhs)) in eq.iter().enumerate() {
        for &(j, v) in terms {
            a[(i, j)] += v;
        }
        b[i] = *rhs;
    }
    let mut g = DMatrix::zeros(rows.len(), n);
    let mut h = DVector::zeros(rows.len());
    for (i, (terms, rhs)) in rows.iter().enumerate() {
        for &(j, v) in terms {
            g[(i, j)] += v;
        }
        h[i] = *rhs;
    }
    let quad = p.expand_squares();
    let mut pm = DMatrix::zeros(n, n);
    for (&(i, j), &v) in &quad.p {
        pm[(i, j)] += v;
        if i != j {
            pm[(j, i)] += v;
        }
    }
    Standard {
        pm,
        c: DVector::from_iterator(n, p.objective.iter().zip(&quad.q).map(|(a, b)| a + b)),
        a,
        b,
        g,
        h,
        blocks,
    }
}

fn degree(blocks: &[Block]) -> f64 {
    blocks
        .iter()
        .map(|b| match *b {
            Block::Orthant { dim, .. } => dim as f64,
            Block::Soc { .. } => 1.0,
        })
        .sum()
}

/// `J`-norm squared `u0² - |u1|²`.
fn jdot(u: &[f64]) -> f64 {
    u[0] * u[0] - u[1..].iter().map(|x| x * x).sum::<f64>()
}

/// Jordan product `u ∘ v`.
fn jprod(blocks: &[Block], u: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(u.len());
    for blk in blocks {
        match *blk {
            Block::Orthant { start, dim } => {
                for i in start..start + dim {
                    out[i] = u[i] * v[i];
                }
            }
            Block::Soc { start, dim } => {
                let (u0, v0) = (u[start], v[start]);
                out[start] = (start..start + dim).map(|i| u[i] * v[i]).sum();
                for i in start + 1..start + dim {
                    out[i] = u0 * v[i] + v0 * u[i];
                }
            }
        }
    }
    out
}

/// Solve `λ ∘ u = d` for `u`.
fn jdiv(blocks: &[Block], lam: &DVector<f64>, d: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(d.len());
    for blk in blocks {
        match *blk {
            Block::Orthant { start, dim } => {
                for i in start..start + dim {
                    out[i] = d[i] / lam[i];
                }
            }
            Block::Soc { start, dim } => {
                let l = &lam.as_slice()[start..start + dim];
                let det = jdot(l);
                let l1d1: f64 = (1..dim).map(|i| l[i] * d[start + i]).sum();
                let u0 = (l[0] * d[start] - l1d1) / det;
                out[start] = u0;
                for i in 1..dim {
                    out[start + i] = (d[start + i] - u0 * l[i]) / l[0];
                }
            }
        }
    }
    out
}

fn identity(blocks: &[Block], m: usize) -> DVector<f64> {
    let mut e = DVector::zeros(m);
    for blk in blocks {
        match *blk {
            Block::Orthant { start, dim } => {
                for i in start..start + dim {
                    e[i] = 1.0;
                }
            }
            Block::Soc { start, .. } => e[start] = 1.0,
        }
    }
    e
}

/// Smallest `t >= 0` such that `u + t e` is in the cone interior shift
/// needed; returns the most negative "eigenvalue" of `u`.
fn min_eig(blocks: &[Block], u: &DVector<f64>) -> f64 {
    let mut worst = f64::INFINITY;
    for blk in blocks {
        match *blk {
            Block::Orthant { start, dim } => {
                for i in start..start + dim {
                    worst = worst.min(u[i]);
                }
            }
            Block::Soc { start, dim } => {
                let tail: f64 = (start + 1..start + dim).map(|i| u[i] * u[i]).sum();
                worst = worst.min(u[start] - tail.sqrt());
            }
        }
    }
    worst
}

/// Largest step `t` keeping `x + t d` inside the cone.
fn max_step(blocks: &[Block], x: &DVector<f64>, d: &DVector<f64>) -> f64 {
    let mut step = f64::INFINITY;
    for blk in blocks {
        match *blk {
            Block::Orthant { start, dim } => {
                for i in start..start + dim {
                    if d[i] < 0.0 {
                        step = step.min(-x[i] / d[i]);
                    }
                }
            }
            Block::Soc { start, dim } => {
                let xs = &x.as_slice()[start..start + dim];
                let ds = &d.as_slice()[start..start + dim];
                let qa = jdot(ds);
                let qb = 2.0 * (xs[0] * ds[0] - (1..dim).map(|i| xs[i] * ds[i]).sum::<f64>());
                let qc = jdot(xs).max(0.0);
                if ds[0] < 0.0 {
                    step = step.min(-xs[0] / ds[0]);
                }
                let mut roots = Vec::new();
                if qa.abs() < 1e-300 {
                    if qb < 0.0 {
                        roots.push(-qc / qb);
                    }
                } else {
                    let disc = qb * qb - 4.0 * qa * qc;
                    if disc >= 0.0 {
                        let sq = disc.sqrt();
                        let q = -0.5 * (qb + qb.signum() * sq);
                        roots.push(q / qa);
                        if q != 0.0 {
                            roots.push(qc / q);
                        }
                    }
                }
                for r in roots {
                    if r > 0.0 {
                        step = step.min(r);
                    }
                }
            }
        }
    }
    step
}

/// Nesterov-Todd scaling: symmetric block-diagonal `W` with `W z = W⁻¹ s`.
struct Scaling {
    w: DMatrix<f64>,
    w_inv: DMatrix<f64>,
}

fn nt_scaling(blocks: &[Block], s: &DVector<f64>, z: &DVector<f64>) -> Scaling {
    let m = s.len();
    let mut w = DMatrix::zeros(m, m);
    let mut w_inv = DMatrix::zeros(m, m);
    for blk in blocks {
        match *blk {
            Block::Orthant { start, dim } => {
                for i in start..start + dim {
                    let d = (s[i] / z[i]).sqrt();
                    w[(i, i)] = d;
                    w_inv[(i, i)] = 1.0 / d;
                }
            }
            Block::Soc { start, dim } => {
                let ss = &s.as_slice()[start..start + dim];
                let zs = &z.as_slice()[start..start + dim];
                let sn = jdot(ss).sqrt();
                let zn = jdot(zs).sqrt();
                let sb: Vec<f64> = ss.iter().map(|v| v / sn).collect();
                let zb: Vec<f64> = zs.iter().map(|v| v / zn).collect();
                let dot: f64 = sb.iter().zip(&zb).map(|(a, b)| a * b).sum();
                let gamma = ((1.0 + dot) / 2.0).sqrt();
                let mut wb = vec![0.0; dim];
                wb[0] = (sb[0] + zb[0]) / (2.0 * gamma);
                for i in 1..dim {
                    wb[i] = (sb[i] - zb[i]) / (2.0 * gamma);
                }
                // wb is the NT point (Q_wb zb = sb); the scaling uses its
                // square root in the Jordan algebra
                let root = (2.0 * (wb[0] + 1.0)).sqrt();
                wb[0] = (wb[0] + 1.0) / root;
                for v in wb.iter_mut().skip(1) {
                    *v /= root;
                }
                let beta = (sn / zn).sqrt();
                for i in 0..dim {
                    for j in 0..dim {
                        let jij = if i == j {
                            if i == 0 {
                                1.0
                            } else {
                                -1.0
                            }
                        } else {
                            0.0
                        };
                        let ji = if i == 0 { 1.0 } else { -1.0 };
                        let jj = if j == 0 { 1.0 } else { -1.0 };
                        w[(start + i, start + j)] = beta * (2.0 * wb[i] * wb[j] - jij);
                        w_inv[(start + i, start + j)] =
                            (2.0 * ji * wb[i] * jj * wb[j] - jij) / beta;
                    }
                }
            }
        }
    }
    Scaling { w, w_inv }
}

impl ConicSolver for DenseIpmSolver {
    fn name(&self) -> &'static str {
        "dense-ipm"
    }

    fn solve(&self, problem: &ConicProblem) -> Result<ConicSolution, SolveError> {
        let st = to_standard(problem);
        let n = st.c.len();
        let p = st.b.len();
        let m = st.h.len();
        let blocks = &st.blocks;
        let e = identity(blocks, m);
        let nu = degree(blocks).max(1.0);
        let reg = 1e-11;

        let kkt = |h_mat: &DMatrix<f64>| {
            let dim = n + p + m;
            let mut k = DMatrix::zeros(dim, dim);
            k.view_mut((0, 0), (n, n)).copy_from(&st.pm);
            k.view_mut((0, n), (n, p)).copy_from(&st.a.transpose());
            k.view_mut((0, n + p), (n, m)).copy_from(&st.g.transpose());
            k.view_mut((n, 0), (p, n)).copy_from(&st.a);
            k.view_mut((n + p, 0), (m, n)).copy_from(&st.g);
            k.view_mut((n + p, n + p), (m, m)).copy_from(&(-h_mat));
            for i in 0..n {
                k[(i, i)] += reg;
            }
            for i in n..n + p {
                k[(i, i)] -= reg;
            }
            k.lu()
        };
        let solve_refined = |lu: &nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
                             mat: &DMatrix<f64>,
                             rhs: &DVector<f64>|
         -> Option<DVector<f64>> {
            let mut x = lu.solve(rhs)?;
            for _ in 0..3 {
                let r = rhs - mat * &x;
                x += lu.solve(&r)?;
            }
            Some(x)
        };
        let assemble = |h_mat: &DMatrix<f64>| {
            let dim = n + p + m;
            let mut k = DMatrix::zeros(dim, dim);
            k.view_mut((0, 0), (n, n)).copy_from(&st.pm);
            k.view_mut((0, n), (n, p)).copy_from(&st.a.transpose());
            k.view_mut((0, n + p), (n, m)).copy_from(&st.g.transpose());
            k.view_mut((n, 0), (p, n)).copy_from(&st.a);
            k.view_mut((n + p, 0), (m, n)).copy_from(&st.g);
            k.view_mut((n + p, n + p), (m, m)).copy_from(&(-h_mat));
            k
        };
        let split = |v: &DVector<f64>| {
            (
                v.rows(0, n).into_owned(),
                v.rows(n, p).into_owned(),
                v.rows(n + p, m).into_owned(),
            )
        };
        let failure = |status: &str, it: u32| SolveError::NumericalFailure {
            status: status.to_string(),
            iterations: it,
            r_prim: f64::NAN,
            r_dual: f64::NAN,
        };

        // starting point from two least-squares KKT solves with W = I
        let eye = DMatrix::identity(m, m);
        let lu0 = kkt(&eye);
        let k0 = assemble(&eye);
        let mut rhs = DVector::zeros(n + p + m);
        rhs.rows_mut(n, p).copy_from(&st.b);
        rhs.rows_mut(n + p, m).copy_from(&st.h);
        let sol = solve_refined(&lu0, &k0, &rhs).ok_or_else(|| failure("singular start", 0))?;
        let (mut x, _, _) = split(&sol);
        let mut s = &st.h - &st.g * &x;
        let mut rhs = DVector::zeros(n + p + m);
        rhs.rows_mut(0, n).copy_from(&(-&st.c));
        let sol = solve_refined(&lu0, &k0, &rhs).ok_or_else(|| failure("singular start", 0))?;
        let (_, mut y, mut z) = split(&sol);
        let shift = |u: &mut DVector<f64>| {
            let ev = min_eig(blocks, u);
            if ev < 1e-8 {
                *u += &e * (1.0 - ev.min(0.0));
            }
        };
        shift(&mut s);
        shift(&mut z);

        let c_norm = 1.0 + st.c.amax();
        let b_norm = 1.0 + st.b.amax();
        let h_norm = 1.0 + st.h.amax();

        for it in 0..self.max_iter {
            let px = &st.pm * &x;
            let rx = &px + st.a.transpose() * &y + st.g.transpose() * &z + &st.c;
            let ry = &st.a * &x - &st.b;
            let rz = &st.g * &x + &s - &st.h;
            let gap = s.dot(&z);
            let mu = gap / nu;
            let pcost = 0.5 * x.dot(&px) + st.c.dot(&x);
            let within = |tol: f64| {
                rx.amax() <= tol * c_norm
                    && ry.amax() <= tol * b_norm
                    && rz.amax() <= tol * h_norm
                    && (gap <= tol || gap <= tol * pcost.abs())
            };
            let done = |x: &DVector<f64>| {
                let xs = x.as_slice().to_vec();
                Ok(ConicSolution {
                    objective: problem.objective_value(&xs),
                    x: xs,
                    iterations: it,
                })
            };
            if within(self.tol) {
                return done(&x);
            }
            // on a stall, accept the iterate if it meets the reduced tolerance
            let stalled = |status: &str| {
                if within(REDUCED_TOL) {
                    done(&x)
                } else {
                    Err(failure(status, it))
                }
            };

            let sc = nt_scaling(blocks, &s, &z);
            let lam = &sc.w * &z;
            let h_mat = &sc.w * &sc.w;
            let lu = kkt(&h_mat);
            let kmat = assemble(&h_mat);

            let newton = |ds_target: &DVector<f64>| -> Option<(DVector<f64>, DVector<f64>, DVector<f64>, DVector<f64>)> {
                let u = jdiv(blocks, &lam, ds_target);
                let mut rhs = DVector::zeros(n + p + m);
                rhs.rows_mut(0, n).copy_from(&(-&rx));
                rhs.rows_mut(n, p).copy_from(&(-&ry));
                rhs.rows_mut(n + p, m).copy_from(&(-&rz - &sc.w * &u));
                let sol = solve_refined(&lu, &kmat, &rhs)?;
                let (dx, dy, dz) = split(&sol);
                let ds = &sc.w * (u - &sc.w * &dz);
                Some((dx, dy, dz, ds))
            };

            let ll = jprod(blocks, &lam, &lam);
            let Some((_, _, dz_a, ds_a)) = newton(&(-&ll)) else {
                return stalled("singular KKT");
            };
            let alpha_a = max_step(blocks, &s, &ds_a)
                .min(max_step(blocks, &z, &dz_a))
                .min(1.0);
            let sigma = (1.0 - alpha_a).powi(3);
            let corr = jprod(blocks, &(&sc.w_inv * &ds_a), &(&sc.w * &dz_a));
            let target = -&ll + &e * (sigma * mu) - corr;
            let Some((dx, dy, dz, ds)) = newton(&target) else {
                return stalled("singular KKT");
            };
            let alpha = (0.99
                * max_step(blocks, &s, &ds).min(max_step(blocks, &z, &dz)))
            .min(1.0);
            if !alpha.is_finite() || alpha <= 1e-14 {
                return stalled("step too small");
            }
            x += &dx * alpha;
            y += &dy * alpha;
            z += &dz * alpha;
            s += &ds * alpha;
        }
        Err(failure("max iterations", self.max_iter))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conic::problem::Affine;

    #[test]
    fn disk_lp() {
        let mut p = ConicProblem::new();
        let x = p.add_free("x");
        let y = p.add_free("y");
        p.add_objective(x, 1.0);
        p.add_objective(y, 1.0);
        p.add_cone("disk", vec![Affine::constant(1.0), Affine::var(x), Affine::var(y)]);
        let sol = DenseIpmSolver::default().solve(&p).unwrap();
        let h = -(0.5f64).sqrt();
        assert!((sol.x[x] - h).abs() < 1e-6, "{:?}", sol.x);
        assert!((sol.x[y] - h).abs() < 1e-6);
    }

    #[test]
    fn bounded_quadratic() {
        // min (x-3)^2 with 0 <= x <= 2 and x + y = 1, y free
        let mut p = ConicProblem::new();
        let x = p.add_var("x", 0.0, 2.0);
        let y = p.add_free("y");
        p.add_eq(vec![(x, 1.0), (y, 1.0)], 1.0);
        let t = p.add_square_epigraph("t", 1.0, vec![Affine::var(x).plus(-3.0)]);
        p.add_objective(t, 1.0);
        let sol = DenseIpmSolver::default().solve(&p).unwrap();
        assert!((sol.x[x] - 2.0).abs() < 1e-6, "{:?}", sol.x);
        assert!((sol.x[y] + 1.0).abs() < 1e-6);
        assert!((sol.objective - 1.0).abs() < 1e-6);
    }
}
