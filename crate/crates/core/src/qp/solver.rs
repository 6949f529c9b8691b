//! Mehrotra predictor-corrector interior-point method for dense QPs.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{KktFactor, QpError, QpProblem, ValidatedProblem};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Bound on the primal residual, dual residual and duality gap.
    pub tol: f64,
    pub max_iter: usize,
    /// Diagonal regularization of the KKT factorization.
    pub kkt_reg: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 50,
            kkt_reg: 1e-9,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), QpError> {
        if !(self.tol > 0.0) {
            return Err(QpError::InvalidConfig(format!("tol must be > 0, got {}", self.tol)));
        }
        if self.max_iter < 1 {
            return Err(QpError::InvalidConfig("max_iter must be >= 1".into()));
        }
        if !(self.kkt_reg >= 0.0) {
            return Err(QpError::InvalidConfig(format!(
                "kkt_reg must be >= 0, got {}",
                self.kkt_reg
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Optimal,
    MaxIterations,
    NumericalFailure,
    Infeasible,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Residuals {
    pub primal: f64,
    pub dual: f64,
    pub gap: f64,
}

impl Residuals {
    fn within(&self, tol: f64) -> bool {
        self.primal <= tol && self.dual <= tol && self.gap <= tol
    }
}

/// Primal-dual optimum of a QP together with solver diagnostics.
#[derive(Debug, Clone)]
pub struct QpSolution {
    pub z_star: DVector<f64>,
    pub nu_star: DVector<f64>,
    pub lambda_star: DVector<f64>,
    /// `h − G z*`
    pub slack: DVector<f64>,
    pub status: SolveStatus,
    pub kkt_factor: Option<Arc<KktFactor>>,
    pub iterations: usize,
    pub residuals: Residuals,
    /// Whether the final iterate was replaced by an exact active-set solve.
    pub polished: bool,
}

impl QpSolution {
    /// Wraps an externally supplied primal-dual point (no factor cache).
    pub fn from_point(
        p: &QpProblem,
        z: DVector<f64>,
        nu: DVector<f64>,
        lambda: DVector<f64>,
    ) -> Self {
        let slack = if z.len() == p.n() {
            &p.h - &p.g * &z
        } else {
            DVector::from_element(p.n_ineq(), f64::NAN)
        };
        let dims_ok =
            z.len() == p.n() && nu.len() == p.n_eq() && lambda.len() == p.n_ineq();
        let report = if dims_ok {
            kkt_residuals_unchecked(p, &z, &nu, &lambda, &slack)
        } else {
            ResidualReport {
                stationarity: f64::INFINITY,
                equality: f64::INFINITY,
                inequality: f64::INFINITY,
                dual_feasibility: f64::INFINITY,
                complementarity: f64::INFINITY,
            }
        };
        let status = if report.max() <= SolverConfig::default().tol {
            SolveStatus::Optimal
        } else {
            SolveStatus::MaxIterations
        };
        Self {
            residuals: Residuals {
                primal: report.equality.max(report.inequality),
                dual: report.stationarity,
                gap: report.complementarity,
            },
            z_star: z,
            nu_star: nu,
            lambda_star: lambda,
            slack,
            status,
            kkt_factor: None,
            iterations: 0,
            polished: false,
        }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }
}

/// ∞-norms of each KKT condition group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    /// `‖P z + q + Aᵀν + Gᵀλ‖∞`
    pub stationarity: f64,
    /// `‖A z − b‖∞`
    pub equality: f64,
    /// `max(0, max(G z − h))`
    pub inequality: f64,
    /// `max(0, max(−λ))`
    pub dual_feasibility: f64,
    /// `maxᵢ |λᵢ (h − G z)ᵢ|`
    pub complementarity: f64,
}

impl ResidualReport {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.equality)
            .max(self.inequality)
            .max(self.dual_feasibility)
            .max(self.complementarity)
    }
}

fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

fn kkt_residuals_unchecked(
    p: &QpProblem,
    z: &DVector<f64>,
    nu: &DVector<f64>,
    lambda: &DVector<f64>,
    slack: &DVector<f64>,
) -> ResidualReport {
    let stat = &p.p * z + &p.q + p.a.transpose() * nu + p.g.transpose() * lambda;
    let eq = &p.a * z - &p.b;
    ResidualReport {
        stationarity: inf_norm(&stat),
        equality: inf_norm(&eq),
        inequality: slack.iter().fold(0.0_f64, |m, s| m.max(-s)),
        dual_feasibility: lambda.iter().fold(0.0_f64, |m, l| m.max(-l)),
        complementarity: lambda
            .iter()
            .zip(slack.iter())
            .fold(0.0_f64, |m, (l, s)| m.max((l * s).abs())),
    }
}

/// Evaluates every KKT condition group at the solution's primal-dual point.
pub fn kkt_residuals(p: &QpProblem, s: &QpSolution) -> Result<ResidualReport, QpError> {
    let (n, n_eq, n_ineq) = p.dims();
    if s.z_star.len() != n || s.nu_star.len() != n_eq || s.lambda_star.len() != n_ineq {
        return Err(QpError::DimensionMismatch(format!(
            "solution dims ({}, {}, {}) vs problem ({n}, {n_eq}, {n_ineq})",
            s.z_star.len(),
            s.nu_star.len(),
            s.lambda_star.len()
        )));
    }
    let slack = &p.h - &p.g * &s.z_star;
    Ok(kkt_residuals_unchecked(p, &s.z_star, &s.nu_star, &s.lambda_star, &slack))
}

/// Assembles the Newton matrix `[[P, Aᵀ, Gᵀ], [A, 0, 0], [G, 0, −W]]`.
fn newton_matrix(p: &QpProblem, w: &DVector<f64>) -> DMatrix<f64> {
    let (n, me, mi) = p.dims();
    let dim = n + me + mi;
    let mut k = DMatrix::zeros(dim, dim);
    k.view_mut((0, 0), (n, n)).copy_from(&p.p);
    k.view_mut((n, 0), (me, n)).copy_from(&p.a);
    k.view_mut((0, n), (n, me)).copy_from(&p.a.transpose());
    k.view_mut((n + me, 0), (mi, n)).copy_from(&p.g);
    k.view_mut((0, n + me), (n, mi)).copy_from(&p.g.transpose());
    for i in 0..mi {
        k[(n + me + i, n + me + i)] = -w[i];
    }
    k
}

fn regularize(k: &DMatrix<f64>, n: usize, reg: f64) -> DMatrix<f64> {
    let mut kr = k.clone();
    for i in 0..kr.nrows() {
        if i < n {
            kr[(i, i)] += reg;
        } else {
            kr[(i, i)] -= reg;
        }
    }
    kr
}

/// Largest `α ∈ (0, 1]` keeping `v + α dv ≥ 0` for both pairs.
fn max_step(s: &DVector<f64>, ds: &DVector<f64>, l: &DVector<f64>, dl: &DVector<f64>) -> f64 {
    let mut alpha = 1.0_f64;
    for i in 0..s.len() {
        if ds[i] < 0.0 {
            alpha = alpha.min(-s[i] / ds[i]);
        }
        if dl[i] < 0.0 {
            alpha = alpha.min(-l[i] / dl[i]);
        }
    }
    alpha
}

struct Iterate {
    z: DVector<f64>,
    nu: DVector<f64>,
    lam: DVector<f64>,
    s: DVector<f64>,
}

impl Iterate {
    fn residuals(&self, p: &QpProblem) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
        let rd = &p.p * &self.z + &p.q + p.a.transpose() * &self.nu + p.g.transpose() * &self.lam;
        let req = &p.a * &self.z - &p.b;
        let rin = &p.g * &self.z + &self.s - &p.h;
        (rd, req, rin)
    }

    fn summary(&self, p: &QpProblem) -> Residuals {
        let (rd, req, rin) = self.residuals(p);
        Residuals {
            primal: inf_norm(&req).max(inf_norm(&rin)),
            dual: inf_norm(&rd),
            gap: self.s.dot(&self.lam).abs(),
        }
    }
}

fn split(v: &DVector<f64>, n: usize, me: usize, mi: usize) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
    (
        v.rows(0, n).into_owned(),
        v.rows(n, me).into_owned(),
        v.rows(n + me, mi).into_owned(),
    )
}

fn finish(
    p: &QpProblem,
    it: Iterate,
    status: SolveStatus,
    iterations: usize,
    factor: Option<Arc<KktFactor>>,
) -> QpSolution {
    let residuals = it.summary(p);
    let slack = &p.h - &p.g * &it.z;
    QpSolution {
        z_star: it.z,
        nu_star: it.nu,
        lambda_star: it.lam,
        slack,
        status,
        kkt_factor: factor,
        iterations,
        residuals,
        polished: false,
    }
}

/// Solves a validated QP.
///
/// `status` is [`SolveStatus::Optimal`] iff the primal residual, dual
/// residual and duality gap all reach `cfg.tol` within `cfg.max_iter`
/// iterations. The returned solution carries a factorization of the final
/// KKT system for reuse by the backward pass.
pub fn solve_qp(p: &ValidatedProblem, cfg: &SolverConfig) -> Result<QpSolution, QpError> {
    cfg.validate()?;
    let p = p.problem();
    if p.n_ineq() == 0 {
        return Ok(solve_equality_only(p, cfg));
    }
    Ok(interior_point(p, cfg))
}

fn solve_equality_only(p: &QpProblem, cfg: &SolverConfig) -> QpSolution {
    let (n, me, _) = p.dims();
    let empty = DVector::zeros(0);
    let fail = |z: DVector<f64>, nu: DVector<f64>| {
        finish(
            p,
            Iterate { z, nu, lam: DVector::zeros(0), s: DVector::zeros(0) },
            SolveStatus::NumericalFailure,
            1,
            None,
        )
    };
    let factor = match KktFactor::full(p, &empty, cfg.kkt_reg) {
        Ok(f) => f,
        Err(_) => return fail(DVector::zeros(n), DVector::zeros(me)),
    };
    let mut rhs = DVector::zeros(n + me);
    rhs.rows_mut(0, n).copy_from(&(-&p.q));
    rhs.rows_mut(n, me).copy_from(&p.b);
    let (x, _) = factor.solve_with(&rhs, 50);
    let (z, nu, _) = split(&x, n, me, 0);
    let it = Iterate { z, nu, lam: DVector::zeros(0), s: DVector::zeros(0) };
    let res = it.summary(p);
    if !res.within(cfg.tol) || it.z.iter().any(|v| !v.is_finite()) {
        return fail(it.z, it.nu);
    }
    finish(p, it, SolveStatus::Optimal, 1, Some(Arc::new(factor)))
}

fn interior_point(p: &QpProblem, cfg: &SolverConfig) -> QpSolution {
    let (n, me, mi) = p.dims();
    let reg = cfg.kkt_reg;

    // Initial point: KKT solve with W = I, then push slacks and multipliers
    // to at least 1.
    let mut it = {
        let k = newton_matrix(p, &DVector::from_element(mi, 1.0));
        let mut rhs = DVector::zeros(n + me + mi);
        rhs.rows_mut(0, n).copy_from(&(-&p.q));
        rhs.rows_mut(n, me).copy_from(&p.b);
        rhs.rows_mut(n + me, mi).copy_from(&p.h);
        let x = crate::linalg::LdlFactor::new(&regularize(&k, n, reg))
            .map(|f| crate::linalg::solve_refined(&f, &k, &rhs, 5).0);
        match x {
            Ok(x) if x.iter().all(|v| v.is_finite()) => {
                let (z, nu, _) = split(&x, n, me, mi);
                let gz = &p.g * &z;
                let s = (&p.h - &gz).map(|v| v.max(1.0));
                let lam = (&gz - &p.h).map(|v| v.max(1.0));
                Iterate { z, nu, lam, s }
            }
            _ => Iterate {
                z: DVector::zeros(n),
                nu: DVector::zeros(me),
                lam: DVector::from_element(mi, 1.0),
                s: DVector::from_element(mi, 1.0),
            },
        }
    };

    let data_scale = 1.0
        + inf_norm(&p.q)
            .max(inf_norm(&p.b))
            .max(inf_norm(&p.h))
            .max(p.p.amax())
            .max(p.a.amax())
            .max(p.g.amax());
    let mut best_primal = f64::INFINITY;
    let mut stall = 0usize;

    for iter in 0..=cfg.max_iter {
        let (rd, req, rin) = it.residuals(p);
        let res = Residuals {
            primal: inf_norm(&req).max(inf_norm(&rin)),
            dual: inf_norm(&rd),
            gap: it.s.dot(&it.lam).abs(),
        };
        if !(res.primal.is_finite() && res.dual.is_finite() && res.gap.is_finite()) {
            return finish(p, it, SolveStatus::NumericalFailure, iter, None);
        }
        if res.within(cfg.tol) {
            return converged(p, it, cfg, iter);
        }
        if iter == cfg.max_iter {
            return stopped(p, it, cfg, SolveStatus::MaxIterations, iter);
        }

        // Infeasibility: the primal residual stops improving while the
        // multipliers (or the iterate) run away.
        if res.primal < 0.5 * best_primal {
            best_primal = res.primal;
            stall = 0;
        } else {
            stall += 1;
        }
        let blowup = inf_norm(&it.lam).max(inf_norm(&it.z)) > 1e10 * data_scale;
        if res.primal > cfg.tol && blowup && stall >= 3 {
            return finish(p, it, SolveStatus::Infeasible, iter, None);
        }

        let w = it.s.component_div(&it.lam);
        let k = newton_matrix(p, &w);
        let factor = match crate::linalg::LdlFactor::new(&regularize(&k, n, reg)) {
            Ok(f) => f,
            Err(_) => return stopped(p, it, cfg, SolveStatus::NumericalFailure, iter),
        };
        let newton = |rc: &DVector<f64>| {
            let mut rhs = DVector::zeros(n + me + mi);
            rhs.rows_mut(0, n).copy_from(&(-&rd));
            rhs.rows_mut(n, me).copy_from(&(-&req));
            rhs.rows_mut(n + me, mi)
                .copy_from(&(-&rin + rc.component_div(&it.lam)));
            let (x, _) = crate::linalg::solve_refined(&factor, &k, &rhs, 3);
            let (dz, dnu, dlam) = split(&x, n, me, mi);
            let ds = -(rc + it.s.component_mul(&dlam)).component_div(&it.lam);
            (dz, dnu, dlam, ds)
        };

        // Predictor (affine scaling) direction.
        let sl = it.s.component_mul(&it.lam);
        let (_, _, dlam_a, ds_a) = newton(&sl);
        let alpha_a = max_step(&it.s, &ds_a, &it.lam, &dlam_a);
        let mu = it.s.dot(&it.lam) / mi as f64;
        let mu_a = (&it.s + alpha_a * &ds_a).dot(&(&it.lam + alpha_a * &dlam_a)) / mi as f64;
        let sigma = (mu_a / mu).powi(3).clamp(0.0, 1.0);

        // Combined predictor-corrector direction.
        let rc = &sl + ds_a.component_mul(&dlam_a) - DVector::from_element(mi, sigma * mu);
        let (dz, dnu, dlam, ds) = newton(&rc);
        if [&dz, &dnu, &dlam, &ds].iter().any(|v| v.iter().any(|x| !x.is_finite())) {
            return stopped(p, it, cfg, SolveStatus::NumericalFailure, iter);
        }
        let alpha = (0.99 * max_step(&it.s, &ds, &it.lam, &dlam)).min(1.0);

        it.z += alpha * dz;
        it.nu += alpha * dnu;
        it.lam += alpha * dlam;
        it.s += alpha * ds;
    }
    unreachable!("loop returns on its last iteration")
}

/// The iteration cannot continue. Near the optimum the scaled KKT matrix is
/// badly conditioned while the active set is already clear, so an exact
/// active-set solve that verifies at `cfg.tol` is still accepted.
fn stopped(p: &QpProblem, it: Iterate, cfg: &SolverConfig, status: SolveStatus, iters: usize) -> QpSolution {
    polish(p, &it, cfg, iters).unwrap_or_else(|| finish(p, it, status, iters, None))
}

/// Post-processes a converged iterate: tries an exact solve on the
/// identified active set, then caches the KKT factorization.
fn converged(p: &QpProblem, it: Iterate, cfg: &SolverConfig, iters: usize) -> QpSolution {
    if let Some(sol) = polish(p, &it, cfg, iters) {
        return sol;
    }
    let factor = KktFactor::full(p, &it.s.component_div(&it.lam), cfg.kkt_reg)
        .ok()
        .map(Arc::new);
    finish(p, it, SolveStatus::Optimal, iters, factor)
}

fn polish(p: &QpProblem, it: &Iterate, cfg: &SolverConfig, iters: usize) -> Option<QpSolution> {
    let (n, me, mi) = p.dims();
    let active: Vec<usize> = (0..mi).filter(|&i| it.lam[i] > it.s[i]).collect();
    if active.len() + me > n {
        return None;
    }
    let factor = KktFactor::reduced(p, active.clone(), cfg.kkt_reg.max(1e-12)).ok()?;
    let k = active.len();
    let mut rhs = DVector::zeros(n + me + k);
    rhs.rows_mut(0, n).copy_from(&(-&p.q));
    rhs.rows_mut(n, me).copy_from(&p.b);
    for (r, &i) in active.iter().enumerate() {
        rhs[n + me + r] = p.h[i];
    }
    let (x, sys_res) = factor.solve_with(&rhs, 20);
    let scale = 1.0 + inf_norm(&rhs);
    if !(sys_res <= 1e-10 * scale) {
        return None;
    }
    let (z, nu, lam_act) = split(&x, n, me, k);
    let mut lam = DVector::zeros(mi);
    for (r, &i) in active.iter().enumerate() {
        lam[i] = lam_act[r];
    }
    let slack = &p.h - &p.g * &z;
    let report = kkt_residuals_unchecked(p, &z, &nu, &lam, &slack);
    if report.max() > cfg.tol {
        return None;
    }
    let residuals = Residuals {
        primal: report.equality.max(report.inequality),
        dual: report.stationarity,
        gap: lam.dot(&slack).abs(),
    };
    if !residuals.within(cfg.tol) {
        return None;
    }
    Some(QpSolution {
        z_star: z,
        nu_star: nu,
        lambda_star: lam,
        slack,
        status: SolveStatus::Optimal,
        kkt_factor: Some(Arc::new(factor)),
        iterations: iters,
        residuals,
        polished: true,
    })
}
