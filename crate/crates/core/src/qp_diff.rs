//! Backward pass of the QP layer.
//!
//! Given `∂ℓ/∂z*`, the adjoint system
//!
//! ```text
//! [ P  Gᵀdiag(λ*)  Aᵀ ] [d_z]      [∂ℓ/∂z*]
//! [ G  diag(Gz*−h)  0 ] [d_λ] = −  [  0   ]
//! [ A  0            0 ] [d_ν]      [  0   ]
//! ```
//!
//! is the transpose of the differentiated KKT conditions. Substituting
//! `d̃ = diag(λ*) d_λ` makes it symmetric and identical to the solver's KKT
//! system, so the cached factorization is reused.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::argmin::{finite_diff_jacobian, ArgminError};
use crate::qp::{
    solve_qp, validate_problem, KktFactor, KktLayout, QpProblem, QpSolution, SolverConfig,
    ValidatedProblem,
};

/// Both `λᵢ` and `slackᵢ` below this value mark constraint `i` degenerate.
pub const DEGENERACY_TOL: f64 = 1e-7;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiffError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("solution has no cached KKT factorization")]
    NoFactorCache,
    #[error("solution is not optimal ({0})")]
    NotOptimal(String),
    #[error("backward system could not be solved")]
    SingularSystem,
    #[error("solve failed at finite-difference perturbation of {block}[{index}]")]
    SolveFailedAtPerturbation { block: &'static str, index: usize },
}

/// Incoming loss gradient `∂ℓ/∂z*`.
#[derive(Debug, Clone, PartialEq)]
pub struct BackwardSeeds {
    pub dl_dz: DVector<f64>,
}

impl BackwardSeeds {
    pub fn new(dl_dz: DVector<f64>) -> Self {
        Self { dl_dz }
    }
}

/// Solution of the adjoint system.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffTriple {
    pub d_z: DVector<f64>,
    pub d_lambda: DVector<f64>,
    pub d_nu: DVector<f64>,
    /// Constraints that were both weakly active and weakly dual; the result
    /// is a heuristic when this is non-empty.
    pub degenerate: Vec<usize>,
}

impl DiffTriple {
    pub fn is_heuristic(&self) -> bool {
        !self.degenerate.is_empty()
    }
}

/// Gradients of a scalar loss with respect to all six QP data blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamGrads {
    pub g_p: DMatrix<f64>,
    pub g_q: DVector<f64>,
    pub g_a: DMatrix<f64>,
    pub g_b: DVector<f64>,
    pub g_g: DMatrix<f64>,
    pub g_h: DVector<f64>,
}

impl ParamGrads {
    pub fn zeros(n: usize, n_eq: usize, n_ineq: usize) -> Self {
        Self {
            g_p: DMatrix::zeros(n, n),
            g_q: DVector::zeros(n),
            g_a: DMatrix::zeros(n_eq, n),
            g_b: DVector::zeros(n_eq),
            g_g: DMatrix::zeros(n_ineq, n),
            g_h: DVector::zeros(n_ineq),
        }
    }
}

/// Indices with both `λᵢ ≤ tol` and `slackᵢ ≤ tol`.
pub fn degenerate_constraints(s: &QpSolution) -> Vec<usize> {
    (0..s.lambda_star.len())
        .filter(|&i| s.lambda_star[i] <= DEGENERACY_TOL && s.slack[i] <= DEGENERACY_TOL)
        .collect()
}

/// Solves the adjoint KKT system for `seeds`, reusing the solution's cached
/// factorization when it belongs to this problem.
pub fn backward_solve(
    p: &ValidatedProblem,
    s: &QpSolution,
    seeds: &BackwardSeeds,
) -> Result<DiffTriple, DiffError> {
    let (n, n_eq, n_ineq) = p.dims();
    if seeds.dl_dz.len() != n {
        return Err(DiffError::DimensionMismatch(format!(
            "seed has length {}, problem has n = {n}",
            seeds.dl_dz.len()
        )));
    }
    if s.z_star.len() != n || s.nu_star.len() != n_eq || s.lambda_star.len() != n_ineq {
        return Err(DiffError::DimensionMismatch("solution does not match problem".into()));
    }
    if !s.is_optimal() {
        return Err(DiffError::NotOptimal(format!("{:?}", s.status)));
    }
    let cached = s.kkt_factor.as_ref().ok_or(DiffError::NoFactorCache)?;
    let degenerate = degenerate_constraints(s);

    let reusable = cached.matches(p) && degenerate.is_empty() && layout_consistent(cached, s);
    let (d_z, d_nu, scaled) = if reusable {
        solve_with_factor(p, cached, s, &seeds.dl_dz)?
    } else {
        let reg = cached.regularization().max(1e-12);
        // Degenerate rows are treated as inactive: their dλ is zero.
        let strict: Vec<usize> = (0..n_ineq).filter(|&i| s.lambda_star[i] > DEGENERACY_TOL).collect();
        let fresh = if degenerate.is_empty() {
            KktFactor::full(p, &complementarity_scaling(s), reg).or_else(|_| KktFactor::reduced(p, strict, reg))
        } else {
            KktFactor::reduced(p, strict, reg)
        };
        let fresh = fresh.map_err(|_| DiffError::SingularSystem)?;
        solve_with_factor(p, &fresh, s, &seeds.dl_dz)?
    };

    // Recover d_λ from d̃ = diag(λ) d_λ. Where λᵢ vanishes, the second block
    // row reads G dz − slack·dλ = 0 instead.
    let gdz = &p.g * &d_z;
    let d_lambda = DVector::from_fn(n_ineq, |i, _| {
        let lam = s.lambda_star[i];
        if lam.abs() > DEGENERACY_TOL {
            scaled[i] / lam
        } else if s.slack[i].abs() > DEGENERACY_TOL {
            gdz[i] / s.slack[i]
        } else {
            0.0
        }
    });
    if d_z.iter().chain(d_nu.iter()).chain(d_lambda.iter()).any(|v| !v.is_finite()) {
        return Err(DiffError::SingularSystem);
    }
    Ok(DiffTriple {
        d_z,
        d_lambda,
        d_nu,
        degenerate,
    })
}

/// `slack/λ`, floored away from zero, for the full (all-rows) layout.
fn complementarity_scaling(s: &QpSolution) -> DVector<f64> {
    s.slack.zip_map(&s.lambda_star, |sl, l| {
        sl.max(1e-14) / l.max(1e-14)
    })
}

/// A reduced (active-set) factor is only exact if its active set matches the
/// solution's strict complementarity pattern.
fn layout_consistent(f: &KktFactor, s: &QpSolution) -> bool {
    match f.layout() {
        KktLayout::Reduced { active } => {
            let mut is_active = vec![false; s.lambda_star.len()];
            for &i in active {
                is_active[i] = true;
            }
            (0..s.lambda_star.len()).all(|i| {
                if is_active[i] {
                    s.lambda_star[i] > DEGENERACY_TOL
                } else {
                    s.lambda_star[i].abs() <= DEGENERACY_TOL
                }
            })
        }
        KktLayout::Full { .. } => true,
    }
}

fn solve_with_factor(
    p: &QpProblem,
    f: &KktFactor,
    s: &QpSolution,
    dl_dz: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>, DVector<f64>), DiffError> {
    let (n, n_eq, n_ineq) = p.dims();
    let mut rhs = DVector::zeros(f.dim());
    rhs.rows_mut(0, n).copy_from(&(-dl_dz));
    let (x, _) = f.solve(&rhs);
    if x.iter().any(|v| !v.is_finite()) {
        return Err(DiffError::SingularSystem);
    }
    let d_z = x.rows(0, n).into_owned();
    let d_nu = x.rows(n, n_eq).into_owned();
    let mut scaled = DVector::zeros(n_ineq);
    match f.layout() {
        KktLayout::Full { .. } => scaled.copy_from(&x.rows(n + n_eq, n_ineq)),
        KktLayout::Reduced { active } => {
            for (r, &i) in active.iter().enumerate() {
                scaled[i] = x[n + n_eq + r];
            }
        }
    }
    let _ = s;
    Ok((d_z, d_nu, scaled))
}

/// Assembles the six data-block gradients from the adjoint solution.
pub fn assemble_grads(s: &QpSolution, d: &DiffTriple) -> Result<ParamGrads, DiffError> {
    let n = s.z_star.len();
    let n_eq = s.nu_star.len();
    let n_ineq = s.lambda_star.len();
    if d.d_z.len() != n || d.d_nu.len() != n_eq || d.d_lambda.len() != n_ineq {
        return Err(DiffError::DimensionMismatch(format!(
            "adjoint dims ({}, {}, {}) vs solution ({n}, {n_eq}, {n_ineq})",
            d.d_z.len(),
            d.d_nu.len(),
            d.d_lambda.len()
        )));
    }
    let z = &s.z_star;
    let dz = &d.d_z;
    let outer = dz * z.transpose();
    let g_p = (&outer + outer.transpose()) * 0.5;
    let g_a = &d.d_nu * z.transpose() + &s.nu_star * dz.transpose();
    let lam_dlam = s.lambda_star.component_mul(&d.d_lambda);
    let g_g = &lam_dlam * z.transpose() + &s.lambda_star * dz.transpose();
    Ok(ParamGrads {
        g_p,
        g_q: dz.clone(),
        g_a,
        g_b: -&d.d_nu,
        g_g,
        g_h: -lam_dlam,
    })
}

/// Convenience: `backward_solve` followed by `assemble_grads`.
pub fn backward(
    p: &ValidatedProblem,
    s: &QpSolution,
    seeds: &BackwardSeeds,
) -> Result<(ParamGrads, DiffTriple), DiffError> {
    let d = backward_solve(p, s, seeds)?;
    Ok((assemble_grads(s, &d)?, d))
}

/// Per-block comparison of analytic and finite-difference gradients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradReport {
    pub err_p: f64,
    pub err_q: f64,
    pub err_a: f64,
    pub err_b: f64,
    pub err_g: f64,
    pub err_h: f64,
    /// Some constraint has both `λᵢ` and `slackᵢ` below the degeneracy
    /// threshold; gradients are heuristic.
    pub degenerate: bool,
    /// The complementarity margin `minᵢ max(λᵢ, slackᵢ)` is small enough that
    /// a finite-difference step may change the active set.
    pub near_kink: bool,
    pub margin: f64,
}

impl GradReport {
    pub fn max_error(&self) -> f64 {
        [self.err_p, self.err_q, self.err_a, self.err_b, self.err_g, self.err_h]
            .into_iter()
            .fold(0.0, f64::max)
    }

    pub fn flagged(&self) -> bool {
        self.degenerate || self.near_kink
    }
}

/// Relative error `‖a − f‖∞ / max(‖f‖∞, 1)`; an empty block scores 0.
pub fn relative_error(analytic: &[f64], fd: &[f64]) -> f64 {
    let diff = analytic
        .iter()
        .zip(fd)
        .fold(0.0_f64, |m, (a, f)| m.max((a - f).abs()));
    let scale = fd.iter().fold(1.0_f64, |m, f| m.max(f.abs()));
    diff / scale
}

/// Solver settings used for the perturbed re-solves of [`gradcheck`].
pub fn fd_solver_config() -> SolverConfig {
    SolverConfig {
        tol: 1e-10,
        max_iter: 100,
        kkt_reg: 1e-11,
    }
}

/// Compares analytic gradients of `ℓ = seedsᵀ z*` against central finite
/// differences of a re-solve, block by block.
pub fn gradcheck(
    p: &ValidatedProblem,
    seeds: &BackwardSeeds,
    fd_step: f64,
) -> Result<GradReport, DiffError> {
    let cfg = fd_solver_config();
    let sol = solve_qp(p, &cfg).map_err(|e| DiffError::NotOptimal(e.to_string()))?;
    if !sol.is_optimal() {
        return Err(DiffError::NotOptimal(format!("{:?}", sol.status)));
    }
    let (grads, triple) = backward(p, &sol, seeds)?;
    let margin = (0..sol.lambda_star.len())
        .map(|i| sol.lambda_star[i].max(sol.slack[i]))
        .fold(f64::INFINITY, f64::min);

    let base = p.problem().clone();
    let loss_at = |q: &QpProblem| -> Option<f64> {
        let v = validate_problem(q.clone()).ok()?;
        let s = solve_qp(&v, &cfg).ok()?;
        s.is_optimal().then(|| seeds.dl_dz.dot(&s.z_star))
    };

    type Setter = fn(&mut QpProblem, usize, f64);
    let blocks: [(&'static str, usize, Setter); 6] = [
        ("P", base.p.len(), |q, i, d| q.p[i] += d),
        ("q", base.q.len(), |q, i, d| q.q[i] += d),
        ("A", base.a.len(), |q, i, d| q.a[i] += d),
        ("b", base.b.len(), |q, i, d| q.b[i] += d),
        ("G", base.g.len(), |q, i, d| q.g[i] += d),
        ("h", base.h.len(), |q, i, d| q.h[i] += d),
    ];
    let mut errs = [0.0; 6];
    for (k, (name, len, set)) in blocks.into_iter().enumerate() {
        if len == 0 {
            continue;
        }
        let theta = DVector::zeros(len);
        let jac = finite_diff_jacobian(
            |t: &DVector<f64>| {
                let mut q = base.clone();
                let idx = t.iter().position(|v| *v != 0.0).unwrap_or(0);
                set(&mut q, idx, t[idx]);
                loss_at(&q).map(|l| DVector::from_element(1, l))
            },
            &theta,
            fd_step,
        )
        .map_err(|e| match e {
            ArgminError::EvaluationFailure { index } => DiffError::SolveFailedAtPerturbation {
                block: name,
                index,
            },
            _ => DiffError::SolveFailedAtPerturbation { block: name, index: 0 },
        })?;
        let fd: Vec<f64> = jac.row(0).iter().copied().collect();
        let analytic: Vec<f64> = match k {
            0 => grads.g_p.iter().copied().collect(),
            1 => grads.g_q.iter().copied().collect(),
            2 => grads.g_a.iter().copied().collect(),
            3 => grads.g_b.iter().copied().collect(),
            4 => grads.g_g.iter().copied().collect(),
            _ => grads.g_h.iter().copied().collect(),
        };
        errs[k] = relative_error(&analytic, &fd);
    }

    Ok(GradReport {
        err_p: errs[0],
        err_q: errs[1],
        err_a: errs[2],
        err_b: errs[3],
        err_g: errs[4],
        err_h: errs[5],
        degenerate: triple.is_heuristic(),
        near_kink: margin < 1e3 * fd_step,
        margin,
    })
}

/// Dense solve of the adjoint system exactly as written, without the
/// symmetric substitution. Used to cross-check the factor-reuse path.
pub fn backward_solve_dense(
    p: &QpProblem,
    s: &QpSolution,
    seeds: &BackwardSeeds,
) -> Option<DiffTriple> {
    let (n, me, mi) = p.dims();
    let dim = n + mi + me;
    let mut k = DMatrix::zeros(dim, dim);
    k.view_mut((0, 0), (n, n)).copy_from(&p.p);
    let gt_lam = p.g.transpose() * DMatrix::from_diagonal(&s.lambda_star);
    k.view_mut((0, n), (n, mi)).copy_from(&gt_lam);
    k.view_mut((0, n + mi), (n, me)).copy_from(&p.a.transpose());
    k.view_mut((n, 0), (mi, n)).copy_from(&p.g);
    for i in 0..mi {
        k[(n + i, n + i)] = -s.slack[i];
    }
    k.view_mut((n + mi, 0), (me, n)).copy_from(&p.a);
    let mut rhs = DVector::zeros(dim);
    rhs.rows_mut(0, n).copy_from(&(-&seeds.dl_dz));
    let x = k.lu().solve(&rhs)?;
    Some(DiffTriple {
        d_z: x.rows(0, n).into_owned(),
        d_lambda: x.rows(n, mi).into_owned(),
        d_nu: x.rows(n + mi, me).into_owned(),
        degenerate: degenerate_constraints(s),
    })
}
