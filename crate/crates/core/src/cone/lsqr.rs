//! Matrix-free LSQR (Paige and Saunders).

use nalgebra::DVector;

/// Result of an LSQR run. `x` is the best iterate even when `converged` is
/// false.
#[derive(Debug, Clone, PartialEq)]
pub struct LsqrOutcome {
    pub x: DVector<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// `‖b − A x‖ / ‖b‖` (zero when `b = 0`).
    pub relative_residual: f64,
}

/// Minimizes `‖A x − b‖` using only `A v` (`matvec`) and `Aᵀ u` (`rmatvec`).
///
/// Starting from zero, the iterates stay in `range(Aᵀ)`, so on consistent
/// rank-deficient systems the limit is the minimum-norm solution. Stops when
/// `‖r‖ ≤ tol ‖b‖` or `‖Aᵀr‖ ≤ tol ‖A‖ ‖r‖`.
pub fn lsqr_solve<F, G>(
    matvec: F,
    rmatvec: G,
    rhs: &DVector<f64>,
    tol: f64,
    max_iter: usize,
) -> LsqrOutcome
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
    G: Fn(&DVector<f64>) -> DVector<f64>,
{
    let bnorm = rhs.norm();
    let mut u = rhs.clone();
    let mut beta = bnorm;
    let probe = rmatvec(&u);
    let mut x = DVector::zeros(probe.len());
    if beta == 0.0 {
        return LsqrOutcome { x, iterations: 0, converged: true, relative_residual: 0.0 };
    }
    u /= beta;
    let mut v = rmatvec(&u);
    let mut alpha = v.norm();
    if alpha == 0.0 {
        // b is orthogonal to range(A); x = 0 is a least-squares solution.
        return LsqrOutcome { x, iterations: 0, converged: true, relative_residual: 1.0 };
    }
    v /= alpha;
    let mut w = v.clone();
    let mut phibar = beta;
    let mut rhobar = alpha;
    let mut anorm2 = 0.0;

    for it in 1..=max_iter {
        u = matvec(&v) - alpha * &u;
        beta = u.norm();
        if beta > 0.0 {
            u /= beta;
        }
        anorm2 += alpha * alpha + beta * beta;
        v = rmatvec(&u) - beta * &v;
        alpha = v.norm();
        if alpha > 0.0 {
            v /= alpha;
        }

        let rho = rhobar.hypot(beta);
        let c = rhobar / rho;
        let s = beta / rho;
        let theta = s * alpha;
        rhobar = -c * alpha;
        let phi = c * phibar;
        phibar *= s;

        x += (phi / rho) * &w;
        w = &v - (theta / rho) * &w;

        let rnorm = phibar;
        let arnorm = phibar * alpha * c.abs();
        let consistent = rnorm <= tol * bnorm;
        let least_squares = rnorm > 0.0 && arnorm <= tol * anorm2.sqrt() * rnorm;
        if consistent || least_squares || alpha == 0.0 {
            return LsqrOutcome { x, iterations: it, converged: true, relative_residual: rnorm / bnorm };
        }
    }
    LsqrOutcome { x, iterations: max_iter, converged: false, relative_residual: phibar / bnorm }
}
