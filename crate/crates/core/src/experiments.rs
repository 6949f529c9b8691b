//! Seeded experiments behind the command-line tool: gradient-check suites,
//! learned TV denoising, ridge-regression data poisoning, and JSON reports
//! for solving and canonicalizing problem files.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::argmin::finite_diff_jacobian;
use crate::cone::{derivative_adjoint, derivative_forward, planted_lp, solve_lp, ConeData, ConeSolution};
use crate::dpp::{canonical_dump, canonicalize, verify_dpp, DppError};
use crate::dsl::parse_problem;
use crate::qp::{
    kkt_residuals, solve_batch, solve_qp, validate_problem, QpProblem, QpSolution, ResidualReport, SolveStatus,
    ValidatedProblem,
};
use crate::qp_diff::{backward, fd_solver_config, gradcheck, relative_error, BackwardSeeds};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Solver(String),
}

impl ExperimentError {
    /// 1 for input or verification errors, 2 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Input(_) => 1,
            ExperimentError::Solver(_) => 2,
        }
    }
}

fn solver_err(e: impl std::fmt::Display) -> ExperimentError {
    ExperimentError::Solver(e.to_string())
}

/// Feasible QP with a planted primal-dual optimum. Each inequality is
/// active with probability ½, up to `n − n_eq` active rows so that the
/// active constraints stay independent; with probability `degenerate_prob`
/// it is weakly active (zero slack and zero multiplier).
pub fn planted_qp<R: Rng>(rng: &mut R, n: usize, n_eq: usize, n_ineq: usize, degenerate_prob: f64) -> QpProblem {
    assert!(n_eq < n.max(1), "need n_eq < n");
    let mut u = || rng.random_range(-1.0..1.0);
    let l = DMatrix::from_fn(n, n, |_, _| u());
    let p = &l * l.transpose() + DMatrix::identity(n, n) * 0.1;
    let a = DMatrix::from_fn(n_eq, n, |_, _| u());
    let g = DMatrix::from_fn(n_ineq, n, |_, _| u());
    let z = DVector::from_fn(n, |_, _| u());
    let nu = DVector::from_fn(n_eq, |_, _| u());
    let mut lam = DVector::zeros(n_ineq);
    let mut slack = DVector::zeros(n_ineq);
    let mut room = n - n_eq;
    for i in 0..n_ineq {
        if room > 0 && rng.random_bool(degenerate_prob) {
            room -= 1;
            continue;
        }
        if room > 0 && rng.random_bool(0.5) {
            room -= 1;
            lam[i] = rng.random_range(0.5..2.0);
        } else {
            slack[i] = rng.random_range(0.5..2.0);
        }
    }
    let b = &a * &z;
    let h = &g * &z + slack;
    let q = -(&p * &z) - a.transpose() * nu - g.transpose() * lam;
    QpProblem::unconstrained(p, q).with_equalities(a, b).with_inequalities(g, h)
}

/// Random dimensions within `n ≤ 8`, `n_eq ≤ min(3, n − 1)`, `n_ineq ≤ 5`.
pub fn random_dims<R: Rng>(rng: &mut R) -> (usize, usize, usize) {
    let n = rng.random_range(1..=8);
    let n_eq = rng.random_range(0..=3.min(n - 1));
    (n, n_eq, rng.random_range(0..=5))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QpGradcheckReport {
    pub trials: usize,
    pub nondegenerate: usize,
    pub flagged: usize,
    pub failures: usize,
    pub max_error: f64,
    pub passed: bool,
}

/// Finite-difference check of every QP data block on seeded problems.
pub fn qp_gradcheck_suite(seed: u64, trials: usize) -> Result<QpGradcheckReport, ExperimentError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut r = QpGradcheckReport { trials, nondegenerate: 0, flagged: 0, failures: 0, max_error: 0.0, passed: true };
    for _ in 0..trials {
        let (n, me, mi) = random_dims(&mut rng);
        let p = validate_problem(planted_qp(&mut rng, n, me, mi, 0.0)).map_err(solver_err)?;
        let seeds = BackwardSeeds::new(DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0)));
        let report = gradcheck(&p, &seeds, 1e-5).map_err(solver_err)?;
        if report.flagged() {
            r.flagged += 1;
            continue;
        }
        r.nondegenerate += 1;
        r.max_error = r.max_error.max(report.max_error());
        if report.max_error() > 1e-4 {
            r.failures += 1;
        }
    }
    r.passed = r.failures == 0;
    Ok(r)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConeGradcheckReport {
    pub trials: usize,
    /// `|⟨dl, D·dp⟩ − ⟨Dᵀdl, dp⟩| / max(1, |⟨dl, D·dp⟩|)`
    pub max_adjoint_error: f64,
    pub max_fd_error: f64,
    /// Against the QP derivative of the same LP with `P = 10⁻⁶ I`.
    pub max_qp_error: f64,
    pub passed: bool,
}

fn flat(s: &ConeSolution) -> DVector<f64> {
    DVector::from_iterator(s.x.len() + 2 * s.y.len(), s.x.iter().chain(s.y.iter()).chain(s.s.iter()).copied())
}

fn random_data<R: Rng>(rng: &mut R, m: usize, n: usize) -> ConeData {
    let mut u = || rng.random_range(-1.0..1.0);
    ConeData {
        a: DMatrix::from_fn(m, n, |_, _| u()),
        b: DVector::from_fn(m, |_, _| u()),
        c: DVector::from_fn(n, |_, _| u()),
    }
}

/// Adjoint identity, finite differences and QP agreement on planted LPs.
pub fn cone_gradcheck_suite(seed: u64, trials: usize) -> Result<ConeGradcheckReport, ExperimentError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut r = ConeGradcheckReport { trials, max_adjoint_error: 0.0, max_fd_error: 0.0, max_qp_error: 0.0, passed: true };
    for _ in 0..trials {
        let n = rng.random_range(2..=5);
        let m = n + rng.random_range(1..=4);
        let (lp, _) = planted_lp(&mut rng, n, m);
        let sol = solve_lp(&lp).map_err(solver_err)?;
        let dp = random_data(&mut rng, m, n);
        let dl = ConeSolution {
            x: DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0)),
            y: DVector::from_fn(m, |_, _| rng.random_range(-1.0..1.0)),
            s: DVector::from_fn(m, |_, _| rng.random_range(-1.0..1.0)),
        };
        let fwd = derivative_forward(&lp, &sol, &dp).map_err(solver_err)?;
        let adj = derivative_adjoint(&lp, &sol, &dl).map_err(solver_err)?;
        let lhs = dl.dot(&fwd);
        r.max_adjoint_error = r.max_adjoint_error.max((lhs - adj.dot(&dp)).abs() / lhs.abs().max(1.0));

        let fd = finite_diff_jacobian(|t| solve_lp(&lp.perturbed(&dp, t[0])).ok().map(|s| flat(&s)), &DVector::zeros(1), 1e-5)
            .map_err(solver_err)?;
        let fd: Vec<f64> = fd.column(0).iter().copied().collect();
        r.max_fd_error = r.max_fd_error.max(relative_error(flat(&fwd).as_slice(), &fd));

        let qp = validate_problem(lp.as_regularized_qp(1e-6)).map_err(solver_err)?;
        let qs = solve_qp(&qp, &fd_solver_config()).map_err(solver_err)?;
        if !qs.is_optimal() {
            return Err(ExperimentError::Solver(format!("regularized LP: {:?}", qs.status)));
        }
        let x_only = ConeSolution { x: dl.x.clone(), y: DVector::zeros(m), s: DVector::zeros(m) };
        let cone_g = derivative_adjoint(&lp, &sol, &x_only).map_err(solver_err)?;
        let (qp_g, _) = backward(&qp, &qs, &BackwardSeeds::new(dl.x.clone())).map_err(solver_err)?;
        let e = relative_error(cone_g.a.as_slice(), qp_g.g_g.as_slice())
            .max(relative_error(cone_g.b.as_slice(), qp_g.g_h.as_slice()))
            .max(relative_error(cone_g.c.as_slice(), qp_g.g_q.as_slice()));
        r.max_qp_error = r.max_qp_error.max(e);
    }
    r.passed = r.max_adjoint_error <= 1e-8 && r.max_fd_error <= 1e-4 && r.max_qp_error <= 1e-3;
    Ok(r)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub qp: Option<QpGradcheckReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cone: Option<ConeGradcheckReport>,
    pub passed: bool,
}

pub fn run_gradcheck(seed: u64, trials: usize, cone: bool) -> Result<GradcheckReport, ExperimentError> {
    let (qp, cone) = if cone {
        (None, Some(cone_gradcheck_suite(seed, trials)?))
    } else {
        (Some(qp_gradcheck_suite(seed, trials)?), None)
    };
    let passed = qp.as_ref().is_none_or(|r| r.passed) && cone.as_ref().is_none_or(|r| r.passed);
    Ok(GradcheckReport { seed, qp, cone, passed })
}

// ---------------------------------------------------------------------------
// TV denoising

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DenoiseConfig {
    pub seed: u64,
    pub signal_len: usize,
    pub segments: usize,
    pub noise: f64,
    pub signals: usize,
    pub train_fraction: f64,
    pub init_lambda: f64,
    pub learning_rate: f64,
    pub iterations: usize,
    /// Also learn the entries of the difference operator.
    pub learn_operator: bool,
}

impl Default for DenoiseConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            signal_len: 50,
            segments: 5,
            noise: 0.1,
            signals: 10,
            train_fraction: 0.8,
            init_lambda: 1.0,
            learning_rate: 0.5,
            iterations: 30,
            learn_operator: false,
        }
    }
}

impl DenoiseConfig {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: &str| Err(ExperimentError::Input(m.into()));
        if self.signal_len < 2 || self.segments < 1 || self.segments > self.signal_len {
            return bad("need signal_len >= 2 and 1 <= segments <= signal_len");
        }
        if !(self.noise >= 0.0) || !(self.init_lambda > 0.0) || !(self.learning_rate > 0.0) {
            return bad("noise must be >= 0, init_lambda and learning_rate > 0");
        }
        let n_train = self.train_count();
        if n_train == 0 || n_train >= self.signals {
            return bad("train_fraction must leave both train and test signals");
        }
        Ok(())
    }

    fn train_count(&self) -> usize {
        (self.signals as f64 * self.train_fraction).round() as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiseMetrics {
    pub lambda_initial: f64,
    pub lambda_final: f64,
    pub baseline_test_mse: f64,
    pub initial_train_mse: f64,
    pub initial_test_mse: f64,
    pub final_train_mse: f64,
    pub final_test_mse: f64,
    pub train_history: Vec<f64>,
}

/// Piecewise-constant signal with levels in `[−1, 1]`.
pub fn piecewise_constant_signal<R: Rng>(rng: &mut R, len: usize, segments: usize) -> DVector<f64> {
    let mut cuts: Vec<usize> = (1..len).collect();
    for i in (1..cuts.len()).rev() {
        cuts.swap(i, rng.random_range(0..=i));
    }
    let mut cuts: Vec<usize> = cuts.into_iter().take(segments - 1).collect();
    cuts.sort_unstable();
    let levels: Vec<f64> = (0..segments).map(|_| rng.random_range(-1.0..1.0)).collect();
    DVector::from_fn(len, |i, _| levels[cuts.iter().filter(|&&c| c <= i).count()])
}

pub fn difference_operator(len: usize) -> DMatrix<f64> {
    DMatrix::from_fn(len - 1, len, |i, j| {
        if j == i + 1 {
            1.0
        } else if j == i {
            -1.0
        } else {
            0.0
        }
    })
}

/// `min ½‖y − z‖² + λ1ᵀt s.t. Dz − t ≤ 0, −Dz − t ≤ 0` over `(z, t)`.
pub fn tv_qp(y: &DVector<f64>, d: &DMatrix<f64>, lambda: f64) -> QpProblem {
    let (k, n) = d.shape();
    let mut p = DMatrix::zeros(n + k, n + k);
    p.view_mut((0, 0), (n, n)).fill_with_identity();
    let mut q = DVector::from_element(n + k, lambda);
    q.rows_mut(0, n).copy_from(&-y);
    let mut g = DMatrix::zeros(2 * k, n + k);
    g.view_mut((0, 0), (k, n)).copy_from(d);
    g.view_mut((k, 0), (k, n)).copy_from(&-d);
    g.view_mut((0, n), (k, k)).copy_from(&-DMatrix::identity(k, k));
    g.view_mut((k, n), (k, k)).copy_from(&-DMatrix::identity(k, k));
    QpProblem::unconstrained(p, q).with_inequalities(g, DVector::zeros(2 * k))
}

fn mse(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm_squared() / a.len() as f64
}

struct Denoised {
    mse: f64,
    grad_log_lambda: f64,
    grad_d: DMatrix<f64>,
}

fn denoise_batch(
    noisy: &[DVector<f64>],
    clean: &[DVector<f64>],
    d: &DMatrix<f64>,
    lambda: f64,
    with_grad: bool,
) -> Result<Denoised, ExperimentError> {
    let n = d.ncols();
    let k = d.nrows();
    let problems: Vec<ValidatedProblem> =
        noisy.iter().map(|y| validate_problem(tv_qp(y, d, lambda))).collect::<Result<_, _>>().map_err(solver_err)?;
    let sols = solve_batch(&problems, &fd_solver_config()).map_err(solver_err)?;
    let mut out = Denoised { mse: 0.0, grad_log_lambda: 0.0, grad_d: DMatrix::zeros(k, n) };
    let count = noisy.len() as f64;
    for ((p, s), x) in problems.iter().zip(&sols).zip(clean) {
        if !s.is_optimal() {
            return Err(ExperimentError::Solver(format!("TV solve: {:?}", s.status)));
        }
        let z = s.z_star.rows(0, n).into_owned();
        out.mse += mse(&z, x) / count;
        if !with_grad {
            continue;
        }
        let mut seed = DVector::zeros(n + k);
        seed.rows_mut(0, n).copy_from(&((&z - x) * (2.0 / (n as f64 * count))));
        let (g, _) = backward(p, s, &BackwardSeeds::new(seed)).map_err(solver_err)?;
        out.grad_log_lambda += lambda * g.g_q.rows(n, k).sum();
        out.grad_d += g.g_g.view((0, 0), (k, n)) - g.g_g.view((k, 0), (k, n));
    }
    Ok(out)
}

pub fn run_denoise(cfg: &DenoiseConfig) -> Result<DenoiseMetrics, ExperimentError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let normal = Normal::new(0.0, cfg.noise).map_err(|e| ExperimentError::Input(e.to_string()))?;
    let clean: Vec<DVector<f64>> =
        (0..cfg.signals).map(|_| piecewise_constant_signal(&mut rng, cfg.signal_len, cfg.segments)).collect();
    let noisy: Vec<DVector<f64>> =
        clean.iter().map(|x| x.map(|v| v + normal.sample(&mut rng))).collect();
    let n_train = cfg.train_count();
    let (train_y, test_y) = noisy.split_at(n_train);
    let (train_x, test_x) = clean.split_at(n_train);

    let mut d = difference_operator(cfg.signal_len);
    let mut log_lambda = cfg.init_lambda.ln();
    let baseline_test_mse = test_y.iter().zip(test_x).map(|(y, x)| mse(y, x)).sum::<f64>() / test_y.len() as f64;
    let initial_test_mse = denoise_batch(test_y, test_x, &d, cfg.init_lambda, false)?.mse;

    let mut history = Vec::with_capacity(cfg.iterations + 1);
    for _ in 0..cfg.iterations {
        let step = denoise_batch(train_y, train_x, &d, log_lambda.exp(), true)?;
        history.push(step.mse);
        // normalized steps keep the rate meaningful across noise levels
        let scale = step.mse.max(1e-12);
        log_lambda -= (cfg.learning_rate * step.grad_log_lambda / scale).clamp(-1.0, 1.0);
        if cfg.learn_operator {
            d -= step.grad_d * (0.1 * cfg.learning_rate / scale);
        }
    }
    let final_train = denoise_batch(train_y, train_x, &d, log_lambda.exp(), false)?.mse;
    history.push(final_train);
    let final_test_mse = denoise_batch(test_y, test_x, &d, log_lambda.exp(), false)?.mse;
    Ok(DenoiseMetrics {
        lambda_initial: cfg.init_lambda,
        lambda_final: log_lambda.exp(),
        baseline_test_mse,
        initial_train_mse: history[0],
        initial_test_mse,
        final_train_mse: final_train,
        final_test_mse,
        train_history: history,
    })
}

// ---------------------------------------------------------------------------
// Data poisoning

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoisonConfig {
    pub seed: u64,
    pub train_points: usize,
    pub test_points: usize,
    pub epsilon: f64,
    /// Ridge penalty `α`.
    pub ridge: f64,
    /// Distance of each blob centre from the origin along `(1, 1)`.
    pub separation: f64,
}

impl Default for PoisonConfig {
    fn default() -> Self {
        Self { seed: 0, train_points: 40, test_points: 200, epsilon: 0.05, ridge: 0.1, separation: 1.0 }
    }
}

impl PoisonConfig {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        if !(0.0..=0.1).contains(&self.epsilon) {
            return Err(ExperimentError::Input(format!("epsilon must be in [0, 0.1], got {}", self.epsilon)));
        }
        if self.train_points < 2 || self.test_points < 1 || !(self.ridge > 0.0) {
            return Err(ExperimentError::Input("need train_points >= 2, test_points >= 1, ridge > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoisonMetrics {
    pub epsilon: f64,
    pub clean_test_loss: f64,
    pub poisoned_test_loss: f64,
    /// Largest coordinate change applied to any training point.
    pub max_perturbation: f64,
    pub moved_coordinates: usize,
}

/// Two Gaussian blobs labelled ±1, with a constant feature appended.
pub fn gaussian_blobs<R: Rng>(rng: &mut R, count: usize, separation: f64) -> (DMatrix<f64>, DVector<f64>) {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut x = DMatrix::zeros(count, 3);
    let mut y = DVector::zeros(count);
    for i in 0..count {
        let label = if i % 2 == 0 { 1.0 } else { -1.0 };
        x[(i, 0)] = label * separation + normal.sample(rng);
        x[(i, 1)] = label * separation + normal.sample(rng);
        x[(i, 2)] = 1.0;
        y[i] = label;
    }
    (x, y)
}

/// `min ‖Xθ − y‖² + α‖θ‖²` as `½ θᵀPθ + qᵀθ`.
pub fn ridge_qp(x: &DMatrix<f64>, y: &DVector<f64>, alpha: f64) -> QpProblem {
    let d = x.ncols();
    let p = (x.transpose() * x + DMatrix::identity(d, d) * alpha) * 2.0;
    QpProblem::unconstrained(p, -(x.transpose() * y) * 2.0)
}

fn ridge_fit(x: &DMatrix<f64>, y: &DVector<f64>, alpha: f64) -> Result<(ValidatedProblem, QpSolution), ExperimentError> {
    let p = validate_problem(ridge_qp(x, y, alpha)).map_err(solver_err)?;
    let s = solve_qp(&p, &fd_solver_config()).map_err(solver_err)?;
    if !s.is_optimal() {
        return Err(ExperimentError::Solver(format!("ridge solve: {:?}", s.status)));
    }
    Ok((p, s))
}

fn test_loss(theta: &DVector<f64>, x: &DMatrix<f64>, y: &DVector<f64>) -> f64 {
    mse(&(x * theta), y)
}

/// `∂L_test/∂X` through the ridge solution; the constant column is zeroed.
pub fn poisoning_gradient(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    alpha: f64,
    x_test: &DMatrix<f64>,
    y_test: &DVector<f64>,
) -> Result<DMatrix<f64>, ExperimentError> {
    let (p, s) = ridge_fit(x, y, alpha)?;
    let resid = x_test * &s.z_star - y_test;
    let dl = x_test.transpose() * resid * (2.0 / y_test.len() as f64);
    let (g, _) = backward(&p, &s, &BackwardSeeds::new(dl)).map_err(solver_err)?;
    // P = 2XᵀX + 2αI, q = −2Xᵀy
    let mut gx = x * (&g.g_p + g.g_p.transpose()) * 2.0 - y * g.g_q.transpose() * 2.0;
    gx.column_mut(x.ncols() - 1).fill(0.0);
    Ok(gx)
}

pub fn run_poison(cfg: &PoisonConfig) -> Result<PoisonMetrics, ExperimentError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (x, y) = gaussian_blobs(&mut rng, cfg.train_points, cfg.separation);
    let (x_test, y_test) = gaussian_blobs(&mut rng, cfg.test_points, cfg.separation);
    let (_, clean) = ridge_fit(&x, &y, cfg.ridge)?;
    let clean_test_loss = test_loss(&clean.z_star, &x_test, &y_test);

    let gx = poisoning_gradient(&x, &y, cfg.ridge, &x_test, &y_test)?;
    let step = gx.map(|g| if g > 0.0 { cfg.epsilon } else if g < 0.0 { -cfg.epsilon } else { 0.0 });
    let poisoned_x = &x + &step;
    let (_, poisoned) = ridge_fit(&poisoned_x, &y, cfg.ridge)?;
    Ok(PoisonMetrics {
        epsilon: cfg.epsilon,
        clean_test_loss,
        poisoned_test_loss: test_loss(&poisoned.z_star, &x_test, &y_test),
        max_perturbation: step.amax(),
        moved_coordinates: step.iter().filter(|&&v| v != 0.0).count(),
    })
}

// ---------------------------------------------------------------------------
// Problem files

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableValue {
    pub name: String,
    pub value: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub status: SolveStatus,
    pub objective: f64,
    pub variables: Vec<VariableValue>,
    /// Canonical-problem multipliers.
    pub nu: Vec<f64>,
    pub lambda: Vec<f64>,
    pub residuals: ResidualReport,
    pub iterations: usize,
}

/// Parses, verifies and solves a problem whose parameters all have bound
/// values. A non-optimal status is returned in the report, not as an error.
pub fn solve_file(text: &str) -> Result<SolveReport, ExperimentError> {
    let parsed = parse_problem(text).map_err(|e| ExperimentError::Input(e.to_string()))?;
    let theta = parsed
        .theta()
        .ok_or_else(|| ExperimentError::Input("every parameter needs a bound value to solve".into()))?;
    let form = canonicalize(&parsed.problem).map_err(|e| match e {
        DppError::NotVerified(m) => ExperimentError::Input(format!("not DPP: {m}")),
        other => ExperimentError::Input(other.to_string()),
    })?;
    let qp = form.instantiate(&theta).map_err(|e| ExperimentError::Input(e.to_string()))?;
    let vp = validate_problem(qp).map_err(|e| ExperimentError::Input(e.to_string()))?;
    let s = solve_qp(&vp, &fd_solver_config()).map_err(solver_err)?;
    let x = form.retriever.apply(&s.z_star);
    let mut variables = Vec::new();
    let mut off = 0;
    for (name, dim) in &parsed.problem.variables {
        variables.push(VariableValue { name: name.clone(), value: x.rows(off, *dim).iter().copied().collect() });
        off += dim;
    }
    Ok(SolveReport {
        status: s.status,
        objective: vp.problem().objective(&s.z_star),
        variables,
        nu: s.nu_star.iter().copied().collect(),
        lambda: s.lambda_star.iter().copied().collect(),
        residuals: kkt_residuals(vp.problem(), &s).map_err(solver_err)?,
        iterations: s.iterations,
    })
}

/// Canonical-form dump, or every DPP violation with its subtree path.
pub fn canon_file(text: &str) -> Result<String, ExperimentError> {
    let parsed = parse_problem(text).map_err(|e| ExperimentError::Input(e.to_string()))?;
    let report = verify_dpp(&parsed.problem);
    if !report.is_ok() {
        let lines: Vec<String> = report
            .violations
            .iter()
            .map(|v| format!("violation at {} path {:?}: {}", v.location, v.path, v.message))
            .collect();
        return Err(ExperimentError::Input(lines.join("\n")));
    }
    let form = canonicalize(&parsed.problem).map_err(|e| ExperimentError::Input(e.to_string()))?;
    Ok(canonical_dump(&parsed.problem, &form))
}
