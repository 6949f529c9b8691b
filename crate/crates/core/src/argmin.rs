//! Reference argmin-differentiation formulas for `g(x) = argmin_y f(x, y)`
//! with scalar `x`, and the central finite-difference oracle used across the
//! crate.
//!
//! These are deliberately direct (dense inverses, explicit projections) so
//! they can serve as independent checks on the KKT-based backward pass.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::linalg::numerical_rank;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ArgminError {
    #[error("Hessian is singular")]
    SingularHessian,
    #[error("reduced Hessian Fᵀ H F is singular")]
    SingularReducedHessian,
    #[error("barrier system matrix is singular")]
    SingularMatrix,
    #[error("point is not a minimizer (‖∇f‖ = {grad_norm:e})")]
    NotAtMinimizer { grad_norm: f64 },
    #[error("F does not span a subspace of null(A) (‖A F‖ = {residual:e})")]
    NullspaceMismatch { residual: f64 },
    #[error("A is rank deficient (rank {rank} < {rows})")]
    RankDeficient { rank: usize, rows: usize },
    #[error("constraint {index} is not strictly satisfied (f = {value:e})")]
    BoundaryPoint { index: usize, value: f64 },
    #[error("function evaluation failed at perturbation {index}")]
    EvaluationFailure { index: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

type ScalarFn = Box<dyn Fn(f64, &DVector<f64>) -> f64 + Send + Sync>;
type VectorFn = Box<dyn Fn(f64, &DVector<f64>) -> DVector<f64> + Send + Sync>;
type MatrixFn = Box<dyn Fn(f64, &DVector<f64>) -> DMatrix<f64> + Send + Sync>;

/// A twice-differentiable `f(x, y)` with scalar `x` and vector `y`.
pub struct SmoothBivariateObjective {
    pub eval: ScalarFn,
    pub grad_y: VectorFn,
    /// `∇²_yy f`
    pub hess_yy: MatrixFn,
    /// `∂/∂x ∇_y f`
    pub cross_xy: VectorFn,
}

impl SmoothBivariateObjective {
    pub fn new(
        eval: impl Fn(f64, &DVector<f64>) -> f64 + Send + Sync + 'static,
        grad_y: impl Fn(f64, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        hess_yy: impl Fn(f64, &DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
        cross_xy: impl Fn(f64, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    ) -> Self {
        Self {
            eval: Box::new(eval),
            grad_y: Box::new(grad_y),
            hess_yy: Box::new(hess_yy),
            cross_xy: Box::new(cross_xy),
        }
    }

    /// `½ yᵀ H y + (c₀ + x c₁)ᵀ y`: a quadratic whose minimizer is affine in `x`.
    pub fn quadratic(h: DMatrix<f64>, c0: DVector<f64>, c1: DVector<f64>) -> Self {
        let (h1, h2) = (h.clone(), h.clone());
        let (c0a, c1a, c0b, c1b, c1c) = (c0.clone(), c1.clone(), c0, c1.clone(), c1);
        Self::new(
            move |x, y| 0.5 * y.dot(&(&h1 * y)) + (&c0a + x * &c1a).dot(y),
            move |x, y| &h2 * y + &c0b + x * &c1b,
            move |_, _| h.clone(),
            move |_, _| c1c.clone(),
        )
    }
}

/// One inequality constraint `f(x, y) ≤ 0` with the derivatives the barrier
/// formula needs.
pub struct BarrierConstraint {
    pub value: ScalarFn,
    pub grad_y: VectorFn,
    pub hess_yy: MatrixFn,
    pub cross_xy: VectorFn,
    /// `∂f/∂x`
    pub d_x: ScalarFn,
}

impl BarrierConstraint {
    /// Affine constraint `aᵀy + b₀ + x b₁ ≤ 0`.
    pub fn affine(a: DVector<f64>, b0: f64, b1: f64) -> Self {
        let n = a.len();
        let a1 = a.clone();
        Self {
            value: Box::new(move |x, y| a1.dot(y) + b0 + x * b1),
            grad_y: Box::new(move |_, _| a.clone()),
            hess_yy: Box::new(move |_, _| DMatrix::zeros(n, n)),
            cross_xy: Box::new(move |_, _| DVector::zeros(n)),
            d_x: Box::new(move |_, _| b1),
        }
    }
}

pub struct BarrierSpec {
    pub constraints: Vec<BarrierConstraint>,
    pub t: f64,
}

fn inverse(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    if m.nrows() == 0 {
        return Some(m.clone());
    }
    let lu = m.clone().lu();
    let inv = lu.try_inverse()?;
    if inv.iter().all(|v| v.is_finite()) {
        Some(inv)
    } else {
        None
    }
}

/// Unconstrained case: `g'(x) = −f_YY⁻¹ f_XY`.
pub fn grad_unconstrained(
    obj: &SmoothBivariateObjective,
    x: f64,
    y_star: &DVector<f64>,
) -> Result<DVector<f64>, ArgminError> {
    let grad_norm = (obj.grad_y)(x, y_star).amax();
    if grad_norm > 1e-6 {
        return Err(ArgminError::NotAtMinimizer { grad_norm });
    }
    let h = (obj.hess_yy)(x, y_star);
    let h_inv = inverse(&h).ok_or(ArgminError::SingularHessian)?;
    Ok(-(h_inv * (obj.cross_xy)(x, y_star)))
}

/// Equality-constrained case through a null-space basis `F` of `A`:
/// `g'(x) = −F (Fᵀ f_YY F)⁻¹ Fᵀ f_XY`.
pub fn grad_equality_nullspace(
    obj: &SmoothBivariateObjective,
    x: f64,
    y_star: &DVector<f64>,
    a: &DMatrix<f64>,
    f: &DMatrix<f64>,
) -> Result<DVector<f64>, ArgminError> {
    if f.nrows() != y_star.len() || a.ncols() != y_star.len() {
        return Err(ArgminError::DimensionMismatch(format!(
            "F is {}x{}, A is {}x{}, y has {} entries",
            f.nrows(),
            f.ncols(),
            a.nrows(),
            a.ncols(),
            y_star.len()
        )));
    }
    if f.ncols() == 0 {
        return Ok(DVector::zeros(y_star.len()));
    }
    let residual = (a * f).amax();
    if residual > 1e-10 {
        return Err(ArgminError::NullspaceMismatch { residual });
    }
    let h = (obj.hess_yy)(x, y_star);
    let reduced = f.transpose() * &h * f;
    let r_inv = inverse(&reduced).ok_or(ArgminError::SingularReducedHessian)?;
    Ok(-(f * r_inv * f.transpose() * (obj.cross_xy)(x, y_star)))
}

/// Equality-constrained case for full-row-rank `A`:
/// `g'(x) = (H⁻¹Aᵀ(AH⁻¹Aᵀ)⁻¹AH⁻¹ − H⁻¹) f_XY` with `H = f_YY`.
pub fn grad_equality_fullrank(
    obj: &SmoothBivariateObjective,
    x: f64,
    y_star: &DVector<f64>,
    a: &DMatrix<f64>,
) -> Result<DVector<f64>, ArgminError> {
    let n = y_star.len();
    if a.ncols() != n {
        return Err(ArgminError::DimensionMismatch(format!(
            "A has {} columns, y has {n} entries",
            a.ncols()
        )));
    }
    let rows = a.nrows();
    let rank = numerical_rank(a, 1e-10);
    if rank < rows {
        return Err(ArgminError::RankDeficient { rank, rows });
    }
    let h = (obj.hess_yy)(x, y_star);
    let h_inv = inverse(&h).ok_or(ArgminError::SingularHessian)?;
    let fxy = (obj.cross_xy)(x, y_star);
    if rows == 0 {
        return Ok(-(h_inv * fxy));
    }
    let s = a * &h_inv * a.transpose();
    let s_inv = inverse(&s).ok_or(ArgminError::SingularHessian)?;
    let m = &h_inv * a.transpose() * s_inv * a * &h_inv - &h_inv;
    Ok(m * fxy)
}

/// `φ = Σ log(−fᵢ)` and its `yy` / `xy` derivatives at a strict interior
/// point.
fn barrier_terms(
    spec: &BarrierSpec,
    x: f64,
    y: &DVector<f64>,
) -> Result<(DMatrix<f64>, DVector<f64>), ArgminError> {
    let n = y.len();
    let mut phi_yy = DMatrix::zeros(n, n);
    let mut phi_xy = DVector::zeros(n);
    for (index, c) in spec.constraints.iter().enumerate() {
        let v = (c.value)(x, y);
        if v >= -1e-12 {
            return Err(ArgminError::BoundaryPoint { index, value: v });
        }
        let gy = (c.grad_y)(x, y);
        let hy = (c.hess_yy)(x, y);
        let cxy = (c.cross_xy)(x, y);
        let dx = (c.d_x)(x, y);
        // ∇_y log(−f) = ∇f / f
        phi_yy += hy / v - &gy * gy.transpose() / (v * v);
        phi_xy += cxy / v - &gy * (dx / (v * v));
    }
    Ok((phi_yy, phi_xy))
}

/// Barrier approximation for inequality constraints.
///
/// `y_star_t` minimizes `t f − φ` with `φ = Σ log(−fᵢ)`; the returned slope
/// is `−(t f_YY − φ_YY)⁻¹ (t f_XY − φ_XY)`, the implicit derivative of that
/// barrier minimizer.
pub fn grad_barrier(
    obj: &SmoothBivariateObjective,
    barrier: &BarrierSpec,
    x: f64,
    y_star_t: &DVector<f64>,
) -> Result<DVector<f64>, ArgminError> {
    let (phi_yy, phi_xy) = barrier_terms(barrier, x, y_star_t)?;
    let t = barrier.t;
    let m = (obj.hess_yy)(x, y_star_t) * t - phi_yy;
    let rhs = (obj.cross_xy)(x, y_star_t) * t - phi_xy;
    let m_inv = inverse(&m).ok_or(ArgminError::SingularMatrix)?;
    Ok(-(m_inv * rhs))
}

/// Central finite differences: column `i` is
/// `(fn(θ + h eᵢ) − fn(θ − h eᵢ)) / 2h`.
pub fn finite_diff_jacobian<F>(
    mut f: F,
    theta: &DVector<f64>,
    step: f64,
) -> Result<DMatrix<f64>, ArgminError>
where
    F: FnMut(&DVector<f64>) -> Option<DVector<f64>>,
{
    let p = theta.len();
    let mut cols = Vec::with_capacity(p);
    for i in 0..p {
        let mut plus = theta.clone();
        plus[i] += step;
        let mut minus = theta.clone();
        minus[i] -= step;
        let fp = f(&plus).ok_or(ArgminError::EvaluationFailure { index: i })?;
        let fm = f(&minus).ok_or(ArgminError::EvaluationFailure { index: i })?;
        if fp.len() != fm.len() {
            return Err(ArgminError::EvaluationFailure { index: i });
        }
        cols.push((fp - fm) / (2.0 * step));
    }
    if cols.is_empty() {
        let m = f(theta).map(|v| v.len()).unwrap_or(0);
        return Ok(DMatrix::zeros(m, 0));
    }
    Ok(DMatrix::from_columns(&cols))
}

/// Damped Newton on `y ↦ f(x, y)` until `‖∇_y f‖∞ ≤ tol`.
pub fn newton_minimize(
    obj: &SmoothBivariateObjective,
    x: f64,
    y0: &DVector<f64>,
    tol: f64,
    max_iter: usize,
) -> Option<DVector<f64>> {
    let mut y = y0.clone();
    for _ in 0..max_iter {
        let g = (obj.grad_y)(x, &y);
        if g.amax() <= tol {
            return Some(y);
        }
        let h = (obj.hess_yy)(x, &y);
        let step = h.lu().solve(&(-&g))?;
        let f0 = (obj.eval)(x, &y);
        let slope = g.dot(&step);
        // below this the decrease is lost in round-off; take the full step
        let flat = -slope <= 1e-14 * (1.0 + f0.abs());
        let mut alpha = 1.0;
        while alpha > 1e-12 && !flat {
            let cand = &y + alpha * &step;
            if (obj.eval)(x, &cand) <= f0 + 1e-4 * alpha * slope {
                break;
            }
            alpha *= 0.5;
        }
        y += alpha * step;
    }
    let g = (obj.grad_y)(x, &y);
    (g.amax() <= tol).then_some(y)
}

/// Damped Newton on the barrier objective `t f − Σ log(−fᵢ)` from a strictly
/// feasible `y0`, keeping every iterate strictly feasible.
pub fn barrier_minimize(
    obj: &SmoothBivariateObjective,
    barrier: &BarrierSpec,
    x: f64,
    y0: &DVector<f64>,
    tol: f64,
    max_iter: usize,
) -> Option<DVector<f64>> {
    let t = barrier.t;
    let value = |y: &DVector<f64>| -> Option<f64> {
        let mut v = t * (obj.eval)(x, y);
        for c in &barrier.constraints {
            let f = (c.value)(x, y);
            if f >= 0.0 {
                return None;
            }
            v -= (-f).ln();
        }
        Some(v)
    };
    let gradient = |y: &DVector<f64>| -> DVector<f64> {
        let mut g = (obj.grad_y)(x, y) * t;
        for c in &barrier.constraints {
            g -= (c.grad_y)(x, y) / (c.value)(x, y);
        }
        g
    };
    let mut y = y0.clone();
    value(&y)?;
    for _ in 0..max_iter {
        let g = gradient(&y);
        if g.amax() <= tol * t.max(1.0) {
            return Some(y);
        }
        let (phi_yy, _) = barrier_terms(barrier, x, &y).ok()?;
        let h = (obj.hess_yy)(x, &y) * t - phi_yy;
        let step = h.lu().solve(&(-&g))?;
        let f0 = value(&y)?;
        let slope = g.dot(&step);
        let flat = -slope <= 1e-14 * (1.0 + f0.abs());
        let mut alpha = 1.0;
        loop {
            let cand = &y + alpha * &step;
            if let Some(fc) = value(&cand) {
                if flat || fc <= f0 + 1e-4 * alpha * slope {
                    break;
                }
            }
            alpha *= 0.5;
            if alpha < 1e-14 {
                return (g.amax() <= tol * t.max(1.0)).then_some(y);
            }
        }
        y += alpha * step;
    }
    (gradient(&y).amax() <= tol * t.max(1.0)).then_some(y)
}
