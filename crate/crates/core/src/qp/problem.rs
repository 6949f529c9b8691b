use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::QpError;
use crate::linalg::{numerical_rank, symmetrize};

pub const PSD_TOL: f64 = 1e-9;
pub const RANK_TOL: f64 = 1e-10;

/// One convex QP instance:
///
/// ```text
/// minimize    ½ zᵀ P z + qᵀ z + r
/// subject to  A z = b,  G z ≤ h
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QpProblem {
    pub p: DMatrix<f64>,
    pub q: DVector<f64>,
    #[serde(default)]
    pub r: f64,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub g: DMatrix<f64>,
    pub h: DVector<f64>,
}

impl QpProblem {
    /// Unconstrained problem `min ½ zᵀPz + qᵀz`.
    pub fn unconstrained(p: DMatrix<f64>, q: DVector<f64>) -> Self {
        let n = q.len();
        Self {
            p,
            q,
            r: 0.0,
            a: DMatrix::zeros(0, n),
            b: DVector::zeros(0),
            g: DMatrix::zeros(0, n),
            h: DVector::zeros(0),
        }
    }

    pub fn with_equalities(mut self, a: DMatrix<f64>, b: DVector<f64>) -> Self {
        self.a = a;
        self.b = b;
        self
    }

    pub fn with_inequalities(mut self, g: DMatrix<f64>, h: DVector<f64>) -> Self {
        self.g = g;
        self.h = h;
        self
    }

    pub fn n(&self) -> usize {
        self.q.len()
    }

    pub fn n_eq(&self) -> usize {
        self.b.len()
    }

    pub fn n_ineq(&self) -> usize {
        self.h.len()
    }

    /// `(n, n_eq, n_ineq)`
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.n(), self.n_eq(), self.n_ineq())
    }

    pub fn objective(&self, z: &DVector<f64>) -> f64 {
        0.5 * z.dot(&(&self.p * z)) + self.q.dot(z) + self.r
    }

    fn check_dims(&self) -> Result<(), QpError> {
        let n = self.n();
        let mismatch = |what: &str, expected: (usize, usize), got: (usize, usize)| {
            Err(QpError::DimensionMismatch(format!(
                "{what}: expected {}x{}, got {}x{}",
                expected.0, expected.1, got.0, got.1
            )))
        };
        if n == 0 {
            return Err(QpError::DimensionMismatch("n must be at least 1".into()));
        }
        if self.p.shape() != (n, n) {
            return mismatch("P", (n, n), self.p.shape());
        }
        if self.a.shape() != (self.n_eq(), n) {
            return mismatch("A", (self.n_eq(), n), self.a.shape());
        }
        if self.g.shape() != (self.n_ineq(), n) {
            return mismatch("G", (self.n_ineq(), n), self.g.shape());
        }
        let finite = self.p.iter().all(|v| v.is_finite())
            && self.q.iter().all(|v| v.is_finite())
            && self.a.iter().all(|v| v.is_finite())
            && self.b.iter().all(|v| v.is_finite())
            && self.g.iter().all(|v| v.is_finite())
            && self.h.iter().all(|v| v.is_finite())
            && self.r.is_finite();
        if !finite {
            return Err(QpError::NonFinite);
        }
        Ok(())
    }
}

/// A [`QpProblem`] whose invariants have been checked: consistent
/// dimensions, `P` symmetric PSD, `A` of full row rank.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedProblem(QpProblem);

impl ValidatedProblem {
    pub fn problem(&self) -> &QpProblem {
        &self.0
    }

    pub fn into_inner(self) -> QpProblem {
        self.0
    }
}

impl std::ops::Deref for ValidatedProblem {
    type Target = QpProblem;

    fn deref(&self) -> &QpProblem {
        &self.0
    }
}

/// Checks every [`QpProblem`] invariant. `P` is replaced by `(P + Pᵀ)/2`.
pub fn validate_problem(mut p: QpProblem) -> Result<ValidatedProblem, QpError> {
    p.check_dims()?;
    p.p = symmetrize(&p.p);

    let pnorm = p.p.amax();
    if pnorm > 0.0 {
        let eig = SymmetricEigen::new(p.p.clone());
        let min_eig = eig.eigenvalues.min();
        let scale = eig.eigenvalues.amax();
        if min_eig < -PSD_TOL * scale {
            return Err(QpError::NotPsd { min_eigenvalue: min_eig });
        }
    }

    if p.n_eq() > 0 {
        let rank = numerical_rank(&p.a, RANK_TOL);
        if rank < p.n_eq() {
            return Err(QpError::RankDeficientEquality {
                rank,
                n_eq: p.n_eq(),
            });
        }
    }
    Ok(ValidatedProblem(p))
}
