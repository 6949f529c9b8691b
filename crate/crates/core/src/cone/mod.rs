//! Derivatives of LP cone programs
//!
//! ```text
//! minimize cᵀx  subject to  A x + s = b,  s ≥ 0
//! ```
//!
//! through the homogeneous self-dual embedding. A solution `(x, y, s)` is
//! packed as `z = (u, v, w) = (x, y − s, 1)`; the normalized residual
//! `N(z) = ((Q − I) Π(z) + z) / |w|` vanishes there, and its derivative
//! `M = ((Q − I) DΠ(z) + I) / w` drives both the forward and adjoint maps.
//! `M` always has `z` in its null space; LSQR returns the minimum-norm
//! solution and the retriever is invariant along `z`.

mod lsqr;

pub use lsqr::{lsqr_solve, LsqrOutcome};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use thiserror::Error;

use crate::qp::{solve_qp, validate_problem, QpProblem, SolveStatus, SolverConfig};

/// Tolerance for the solution invariants of [`ConeSolution`].
pub const SOLUTION_TOL: f64 = 1e-6;
/// Complementarity and sign tolerance on individual coordinates.
pub const COORD_TOL: f64 = 1e-8;
/// `|vᵢ|` at or below this is treated as a kink of the projection.
pub const KINK_TOL: f64 = 1e-10;
pub const LSQR_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConeError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("complementarity violated at coordinate {index} (s = {s:e}, y = {y:e})")]
    ComplementarityViolation { index: usize, s: f64, y: f64 },
    #[error("projection is not differentiable at coordinate {index}")]
    DegenerateProjection { index: usize },
    #[error("LSQR did not converge ({iterations} iterations, relative residual {residual:e})")]
    LsqrNoConvergence { iterations: usize, residual: f64 },
    #[error("LP solve failed: {0}")]
    SolveFailed(String),
}

/// LP data; the cone is the nonnegative orthant of dimension `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConeLpProblem {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub c: DVector<f64>,
}

impl ConeLpProblem {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>, c: DVector<f64>) -> Result<Self, ConeError> {
        if a.nrows() != b.len() || a.ncols() != c.len() {
            return Err(ConeError::DimensionMismatch(format!(
                "A is {}x{}, b has {}, c has {}",
                a.nrows(),
                a.ncols(),
                b.len(),
                c.len()
            )));
        }
        Ok(Self { a, b, c })
    }

    pub fn n(&self) -> usize {
        self.a.ncols()
    }

    pub fn m(&self) -> usize {
        self.a.nrows()
    }

    /// `self + t · d`
    pub fn perturbed(&self, d: &ConeData, t: f64) -> Self {
        Self { a: &self.a + t * &d.a, b: &self.b + t * &d.b, c: &self.c + t * &d.c }
    }

    /// The same LP as a QP with `P = reg · I` and `G = A`, `h = b`.
    pub fn as_regularized_qp(&self, reg: f64) -> QpProblem {
        let n = self.n();
        QpProblem::unconstrained(DMatrix::identity(n, n) * reg, self.c.clone())
            .with_inequalities(self.a.clone(), self.b.clone())
    }
}

/// A perturbation `(dA, db, dc)` or a gradient `(gA, gb, gc)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConeData {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub c: DVector<f64>,
}

impl ConeData {
    pub fn zeros(m: usize, n: usize) -> Self {
        Self { a: DMatrix::zeros(m, n), b: DVector::zeros(m), c: DVector::zeros(n) }
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.a.dot(&other.a) + self.b.dot(&other.b) + self.c.dot(&other.c)
    }
}

/// A primal-dual triple `(x, y, s)`, or a tangent / cotangent of one.
#[derive(Debug, Clone, PartialEq)]
pub struct ConeSolution {
    pub x: DVector<f64>,
    pub y: DVector<f64>,
    pub s: DVector<f64>,
}

impl ConeSolution {
    pub fn dot(&self, other: &Self) -> f64 {
        self.x.dot(&other.x) + self.y.dot(&other.y) + self.s.dot(&other.s)
    }

    /// Largest violation of `Ax + s = b`, `Aᵀy + c = 0`, `s, y ≥ 0` and
    /// `sᵀy = 0`.
    pub fn violation(&self, p: &ConeLpProblem) -> f64 {
        let primal = (&p.a * &self.x + &self.s - &p.b).amax();
        let dual = (p.a.transpose() * &self.y + &p.c).amax();
        let sign = self.s.iter().chain(self.y.iter()).fold(0.0f64, |acc, &v| acc.max(-v));
        let gap = self.s.dot(&self.y).abs();
        primal.max(dual).max(sign).max(gap)
    }
}

/// Self-dual embedding point; `z`'s last entry is `w`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingPoint {
    pub z: DVector<f64>,
    pub w: f64,
}

/// `Q = [[0, Aᵀ, c], [−A, 0, b], [−cᵀ, −bᵀ, 0]]`.
pub fn embed_skew(p: &ConeLpProblem) -> DMatrix<f64> {
    embed_data(&p.a, &p.b, &p.c)
}

fn embed_data(a: &DMatrix<f64>, b: &DVector<f64>, c: &DVector<f64>) -> DMatrix<f64> {
    let (m, n) = a.shape();
    let d = n + m + 1;
    let mut q = DMatrix::zeros(d, d);
    q.view_mut((0, n), (n, m)).copy_from(&a.transpose());
    q.view_mut((n, 0), (m, n)).copy_from(&(-a));
    for j in 0..n {
        q[(j, d - 1)] = c[j];
        q[(d - 1, j)] = -c[j];
    }
    for i in 0..m {
        q[(n + i, d - 1)] = b[i];
        q[(d - 1, n + i)] = -b[i];
    }
    q
}

pub fn solution_to_embedding(sol: &ConeSolution) -> Result<EmbeddingPoint, ConeError> {
    if sol.y.len() != sol.s.len() {
        return Err(ConeError::DimensionMismatch(format!(
            "y has {} entries, s has {}",
            sol.y.len(),
            sol.s.len()
        )));
    }
    for (index, (&s, &y)) in sol.s.iter().zip(sol.y.iter()).enumerate() {
        if s > COORD_TOL && y > COORD_TOL {
            return Err(ConeError::ComplementarityViolation { index, s, y });
        }
    }
    let n = sol.x.len();
    let m = sol.y.len();
    let mut z = DVector::zeros(n + m + 1);
    z.rows_mut(0, n).copy_from(&sol.x);
    z.rows_mut(n, m).copy_from(&(&sol.y - &sol.s));
    z[n + m] = 1.0;
    Ok(EmbeddingPoint { z, w: 1.0 })
}

/// `φ(z) = (u, Π₊(v), Π₊(v) − v) / w`.
pub fn retrieve(z: &DVector<f64>, n: usize) -> ConeSolution {
    let m = z.len() - n - 1;
    let w = z[n + m];
    let v = z.rows(n, m);
    let y = v.map(|t| t.max(0.0));
    let s = &y - v;
    ConeSolution { x: z.rows(0, n) / w, y: y / w, s: s / w }
}

/// Linearization at a nondegenerate solution.
struct Linearization {
    n: usize,
    m: usize,
    q: DMatrix<f64>,
    /// Diagonal of `DΠ(z)` (0/1).
    d_pi: DVector<f64>,
    pi: DVector<f64>,
    sol: ConeSolution,
}

impl Linearization {
    fn new(p: &ConeLpProblem, sol: &ConeSolution) -> Result<Self, ConeError> {
        let (n, m) = (p.n(), p.m());
        if sol.x.len() != n || sol.y.len() != m || sol.s.len() != m {
            return Err(ConeError::DimensionMismatch(format!(
                "solution sizes ({}, {}, {}) for an LP with n = {n}, m = {m}",
                sol.x.len(),
                sol.y.len(),
                sol.s.len()
            )));
        }
        let emb = solution_to_embedding(sol)?;
        let mut d_pi = DVector::from_element(n + m + 1, 1.0);
        for i in 0..m {
            let v = emb.z[n + i];
            if v.abs() <= KINK_TOL {
                return Err(ConeError::DegenerateProjection { index: i });
            }
            if v < 0.0 {
                d_pi[n + i] = 0.0;
            }
        }
        let pi = emb.z.map(|t| t.max(0.0));
        let mut pi_full = emb.z.clone();
        pi_full.rows_mut(n, m).copy_from(&pi.rows(n, m));
        Ok(Self { n, m, q: embed_skew(p), d_pi, pi: pi_full, sol: sol.clone() })
    }

    fn dim(&self) -> usize {
        self.n + self.m + 1
    }

    /// `M x = (Q − I) DΠ x + x`
    fn m_apply(&self, x: &DVector<f64>) -> DVector<f64> {
        let dx = x.component_mul(&self.d_pi);
        &self.q * &dx - &dx + x
    }

    /// `Mᵀ y = DΠ (Qᵀ − I) y + y = −DΠ (Q + I) y + y`
    fn mt_apply(&self, y: &DVector<f64>) -> DVector<f64> {
        let t = &self.q * y + y;
        y - t.component_mul(&self.d_pi)
    }

    fn lsqr(&self, transpose: bool, rhs: &DVector<f64>) -> Result<DVector<f64>, ConeError> {
        let max_iter = 10 * self.dim();
        let out = if transpose {
            lsqr_solve(|v| self.mt_apply(v), |v| self.m_apply(v), rhs, LSQR_TOL, max_iter)
        } else {
            lsqr_solve(|v| self.m_apply(v), |v| self.mt_apply(v), rhs, LSQR_TOL, max_iter)
        };
        if !out.converged {
            return Err(ConeError::LsqrNoConvergence {
                iterations: out.iterations,
                residual: out.relative_residual,
            });
        }
        Ok(out.x)
    }

    /// `Dφ(z) dz` at `w = 1`.
    fn dphi(&self, dz: &DVector<f64>) -> ConeSolution {
        let (n, m) = (self.n, self.m);
        let dw = dz[n + m];
        let du = dz.rows(0, n);
        let dv = dz.rows(n, m).component_mul(&self.d_pi.rows(n, m));
        let ds = &dv - dz.rows(n, m);
        ConeSolution {
            x: du - &self.sol.x * dw,
            y: dv - &self.sol.y * dw,
            s: ds - &self.sol.s * dw,
        }
    }

    /// `Dφ(z)ᵀ dl`
    fn dphi_t(&self, dl: &ConeSolution) -> DVector<f64> {
        let (n, m) = (self.n, self.m);
        let mut out = DVector::zeros(n + m + 1);
        out.rows_mut(0, n).copy_from(&dl.x);
        let ys = (&dl.y + &dl.s).component_mul(&self.d_pi.rows(n, m)) - &dl.s;
        out.rows_mut(n, m).copy_from(&ys);
        out[n + m] = -self.sol.x.dot(&dl.x) - self.sol.y.dot(&dl.y) - self.sol.s.dot(&dl.s);
        out
    }
}

/// Directional derivative `(dx, dy, ds)` of the solution along `dp`.
pub fn derivative_forward(
    p: &ConeLpProblem,
    sol: &ConeSolution,
    dp: &ConeData,
) -> Result<ConeSolution, ConeError> {
    if dp.a.shape() != p.a.shape() || dp.b.len() != p.m() || dp.c.len() != p.n() {
        return Err(ConeError::DimensionMismatch("perturbation shape differs from the LP".into()));
    }
    let lin = Linearization::new(p, sol)?;
    let g = embed_data(&dp.a, &dp.b, &dp.c) * &lin.pi;
    let dz = lin.lsqr(false, &(-g))?;
    Ok(lin.dphi(&dz))
}

/// Gradient `(gA, gb, gc)` of a loss whose gradient in `(x, y, s)` is `dl`.
pub fn derivative_adjoint(
    p: &ConeLpProblem,
    sol: &ConeSolution,
    dl: &ConeSolution,
) -> Result<ConeData, ConeError> {
    let (n, m) = (p.n(), p.m());
    if dl.x.len() != n || dl.y.len() != m || dl.s.len() != m {
        return Err(ConeError::DimensionMismatch("cotangent shape differs from the LP".into()));
    }
    let lin = Linearization::new(p, sol)?;
    let rhs = lin.dphi_t(dl);
    let r = -lin.lsqr(true, &rhs)?;
    let (ru, rv, rw) = (r.rows(0, n), r.rows(n, m), r[n + m]);
    let (pu, pv, pw) = (lin.pi.rows(0, n), lin.pi.rows(n, m), lin.pi[n + m]);
    Ok(ConeData {
        a: pv * ru.transpose() - rv * pu.transpose(),
        b: rv * pw - pv * rw,
        c: ru * pw - pu * rw,
    })
}

/// Solves the LP with the QP solver (`P = 10⁻⁶ I`), then, when the active
/// set is a nonsingular square system, snaps to the exact vertex and its
/// dual.
pub fn solve_lp(p: &ConeLpProblem) -> Result<ConeSolution, ConeError> {
    let (n, m) = (p.n(), p.m());
    let vp = validate_problem(p.as_regularized_qp(1e-6)).map_err(|e| ConeError::SolveFailed(e.to_string()))?;
    let cfg = SolverConfig { tol: 1e-10, max_iter: 100, kkt_reg: 1e-11 };
    let qs = solve_qp(&vp, &cfg).map_err(|e| ConeError::SolveFailed(e.to_string()))?;
    if qs.status != SolveStatus::Optimal {
        return Err(ConeError::SolveFailed(format!("{:?}", qs.status)));
    }
    let active: Vec<usize> = (0..m).filter(|&i| qs.lambda_star[i] > qs.slack[i]).collect();
    if active.len() == n {
        let a_act = p.a.select_rows(&active);
        let b_act = DVector::from_iterator(n, active.iter().map(|&i| p.b[i]));
        let lu = a_act.clone().lu();
        if let (Some(x), Some(y_act)) = (lu.solve(&b_act), a_act.transpose().lu().solve(&(-&p.c))) {
            let mut y = DVector::zeros(m);
            for (k, &i) in active.iter().enumerate() {
                y[i] = y_act[k];
            }
            let mut s = &p.b - &p.a * &x;
            for &i in &active {
                s[i] = 0.0;
            }
            let snapped = ConeSolution { x, y, s };
            if snapped.violation(p) <= SOLUTION_TOL {
                return Ok(snapped);
            }
        }
    }
    let fallback = ConeSolution {
        x: qs.z_star.clone(),
        y: qs.lambda_star.clone(),
        s: qs.slack.clone(),
    };
    if fallback.violation(p) <= SOLUTION_TOL {
        Ok(fallback)
    } else {
        Err(ConeError::SolveFailed("solution violates optimality conditions".into()))
    }
}

/// LP with a planted nondegenerate vertex: `n` rows active with duals in
/// `[0.5, 2]`, the rest with slacks in `[0.5, 2]`.
pub fn planted_lp<R: Rng>(rng: &mut R, n: usize, m: usize) -> (ConeLpProblem, ConeSolution) {
    assert!(m >= n, "need at least n constraints for a vertex");
    loop {
        let a: DMatrix<f64> = DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0));
        let mut rows: Vec<usize> = (0..m).collect();
        for i in (1..m).rev() {
            rows.swap(i, rng.random_range(0..=i));
        }
        let active = &rows[..n];
        let a_act: DMatrix<f64> = a.select_rows(active);
        let sv = a_act.singular_values();
        if sv.min() < 0.1 * sv.max().max(1e-300) {
            continue;
        }
        let x = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let mut y = DVector::zeros(m);
        let mut s = DVector::zeros(m);
        for i in 0..m {
            if active.contains(&i) {
                y[i] = rng.random_range(0.5..2.0);
            } else {
                s[i] = rng.random_range(0.5..2.0);
            }
        }
        let b = &a * &x + &s;
        let c = -(a.transpose() * &y);
        return (ConeLpProblem { a, b, c }, ConeSolution { x, y, s });
    }
}
