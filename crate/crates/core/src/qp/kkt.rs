use nalgebra::{DMatrix, DVector};

use super::QpProblem;
use crate::linalg::{solve_refined, FactorError, LdlFactor};

/// Which inequality rows appear in a cached KKT system, and how.
#[derive(Debug, Clone, PartialEq)]
pub enum KktLayout {
    /// Every inequality row, with the `−diag(slack/λ)` block of the
    /// interior-point Newton system.
    Full { scaling: DVector<f64> },
    /// Only the listed (active) rows, held as equalities.
    Reduced { active: Vec<usize> },
}

/// A factorized KKT matrix in the variable order `(z, ν, λ-block)`:
///
/// ```text
/// [ P   Aᵀ  Gₛᵀ ]
/// [ A   0   0   ]
/// [ Gₛ  0   −W  ]
/// ```
///
/// The factor is of the regularized matrix (`+reg` on the `P` block, `−reg`
/// on the constraint blocks); solves are refined against the exact matrix.
#[derive(Debug, Clone)]
pub struct KktFactor {
    layout: KktLayout,
    n: usize,
    n_eq: usize,
    matrix: DMatrix<f64>,
    factor: LdlFactor,
    reg: f64,
}

impl KktFactor {
    pub fn full(
        p: &QpProblem,
        scaling: &DVector<f64>,
        reg: f64,
    ) -> Result<Self, FactorError> {
        let rows: Vec<usize> = (0..p.n_ineq()).collect();
        Self::build(p, KktLayout::Full { scaling: scaling.clone() }, &rows, reg)
    }

    pub fn reduced(p: &QpProblem, active: Vec<usize>, reg: f64) -> Result<Self, FactorError> {
        let rows = active.clone();
        Self::build(p, KktLayout::Reduced { active }, &rows, reg)
    }

    fn build(
        p: &QpProblem,
        layout: KktLayout,
        rows: &[usize],
        reg: f64,
    ) -> Result<Self, FactorError> {
        let (n, n_eq, _) = p.dims();
        let k = rows.len();
        let dim = n + n_eq + k;
        let mut m = DMatrix::zeros(dim, dim);
        m.view_mut((0, 0), (n, n)).copy_from(&p.p);
        m.view_mut((n, 0), (n_eq, n)).copy_from(&p.a);
        m.view_mut((0, n), (n, n_eq)).copy_from(&p.a.transpose());
        for (r, &i) in rows.iter().enumerate() {
            for j in 0..n {
                m[(n + n_eq + r, j)] = p.g[(i, j)];
                m[(j, n + n_eq + r)] = p.g[(i, j)];
            }
        }
        if let KktLayout::Full { scaling } = &layout {
            for r in 0..k {
                m[(n + n_eq + r, n + n_eq + r)] = -scaling[r];
            }
        }
        let mut mreg = m.clone();
        for i in 0..n {
            mreg[(i, i)] += reg;
        }
        for i in n..dim {
            mreg[(i, i)] -= reg;
        }
        let factor = LdlFactor::new(&mreg)?;
        Ok(Self {
            layout,
            n,
            n_eq,
            matrix: m,
            factor,
            reg,
        })
    }

    pub fn layout(&self) -> &KktLayout {
        &self.layout
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn regularization(&self) -> f64 {
        self.reg
    }

    /// Whether this factor was built for a problem with these dimensions.
    pub fn matches(&self, p: &QpProblem) -> bool {
        let rows_ok = match &self.layout {
            KktLayout::Full { scaling } => scaling.len() == p.n_ineq(),
            KktLayout::Reduced { active } => active.iter().all(|&i| i < p.n_ineq()),
        };
        self.n == p.n() && self.n_eq == p.n_eq() && rows_ok
    }

    /// Solves with the exact (unregularized) matrix, returning the solution
    /// and the residual ∞-norm.
    pub fn solve(&self, rhs: &DVector<f64>) -> (DVector<f64>, f64) {
        solve_refined(&self.factor, &self.matrix, rhs, 10)
    }

    /// Like [`solve`](Self::solve) but with an explicit refinement budget.
    pub(crate) fn solve_with(&self, rhs: &DVector<f64>, steps: usize) -> (DVector<f64>, f64) {
        solve_refined(&self.factor, &self.matrix, rhs, steps)
    }
}
