//! Dense symmetric-indefinite factorization used by the interior-point solver
//! and the backward pass.
//!
//! The KKT matrices handled here are symmetric but indefinite, so Cholesky is
//! not an option. [`LdlFactor`] implements the Bunch–Kaufman diagonal pivoting
//! scheme (1×1 and 2×2 pivots), giving `Pᵀ K P = L D Lᵀ` with unit lower
//! triangular `L` and block diagonal `D`.

use nalgebra::{DMatrix, DVector};

/// Growth-control constant of the Bunch–Kaufman pivot rule, `(1 + √17) / 8`.
const BK_ALPHA: f64 = 0.640_388_203_202_208_4;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Pivot {
    One(f64),
    /// Symmetric 2×2 block `[[a, b], [b, c]]`.
    Two(f64, f64, f64),
}

/// Bunch–Kaufman `L D Lᵀ` factorization of a dense symmetric matrix.
#[derive(Debug, Clone)]
pub struct LdlFactor {
    n: usize,
    /// Unit lower-triangular factor, stored in the strict lower triangle.
    l: DMatrix<f64>,
    /// Pivot blocks in elimination order; a 2×2 block covers two positions.
    pivots: Vec<Pivot>,
    /// `perm[k]` is the original row index placed at position `k`.
    perm: Vec<usize>,
}

/// Reasons a factorization cannot be formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FactorError {
    NotSquare,
    Singular,
    NonFinite,
}

impl LdlFactor {
    /// Factorizes the symmetric matrix `k`. Only the lower triangle is read.
    pub fn new(k: &DMatrix<f64>) -> Result<Self, FactorError> {
        if k.nrows() != k.ncols() {
            return Err(FactorError::NotSquare);
        }
        let n = k.nrows();
        if k.iter().any(|v| !v.is_finite()) {
            return Err(FactorError::NonFinite);
        }
        // Work on a full symmetric copy; symmetric swaps act on whole rows and
        // columns so the trailing block always stays symmetric.
        let mut a = DMatrix::zeros(n, n);
        for j in 0..n {
            for i in j..n {
                a[(i, j)] = k[(i, j)];
                a[(j, i)] = k[(i, j)];
            }
        }
        let scale = a.amax().max(f64::MIN_POSITIVE);
        let tiny = scale * f64::EPSILON * (n.max(1) as f64);
        let mut perm: Vec<usize> = (0..n).collect();
        let mut pivots = Vec::with_capacity(n);

        let mut k0 = 0;
        while k0 < n {
            let absakk = a[(k0, k0)].abs();
            let (imax, colmax) = ((k0 + 1)..n)
                .map(|i| (i, a[(i, k0)].abs()))
                .fold((k0, 0.0), |best, cur| if cur.1 > best.1 { cur } else { best });

            if absakk.max(colmax) <= tiny {
                return Err(FactorError::Singular);
            }

            let (kp, kstep) = if absakk >= BK_ALPHA * colmax {
                (k0, 1)
            } else {
                let rowmax = (k0..n)
                    .filter(|&j| j != imax)
                    .map(|j| a[(imax, j)].abs())
                    .fold(0.0, f64::max);
                if absakk * rowmax >= BK_ALPHA * colmax * colmax {
                    (k0, 1)
                } else if a[(imax, imax)].abs() >= BK_ALPHA * rowmax {
                    (imax, 1)
                } else {
                    (imax, 2)
                }
            };

            let kk = k0 + kstep - 1;
            if kp != kk {
                a.swap_rows(kk, kp);
                a.swap_columns(kk, kp);
                perm.swap(kk, kp);
            }

            if kstep == 1 {
                let d = a[(k0, k0)];
                if d.abs() <= tiny {
                    return Err(FactorError::Singular);
                }
                for i in (k0 + 1)..n {
                    a[(i, k0)] /= d;
                }
                for j in (k0 + 1)..n {
                    let ljd = a[(j, k0)] * d;
                    if ljd == 0.0 {
                        continue;
                    }
                    for i in j..n {
                        a[(i, j)] -= a[(i, k0)] * ljd;
                    }
                }
                // Restore symmetry of the trailing block for future swaps.
                for j in (k0 + 1)..n {
                    for i in (j + 1)..n {
                        a[(j, i)] = a[(i, j)];
                    }
                }
                pivots.push(Pivot::One(d));
            } else {
                let d11 = a[(k0, k0)];
                let d21 = a[(k0 + 1, k0)];
                let d22 = a[(k0 + 1, k0 + 1)];
                let det = d11 * d22 - d21 * d21;
                if det.abs() <= tiny * tiny || !det.is_finite() {
                    return Err(FactorError::Singular);
                }
                // Columns of L: [l_i0, l_i1] = [a_i0, a_i1] D⁻¹.
                for i in (k0 + 2)..n {
                    let x0 = a[(i, k0)];
                    let x1 = a[(i, k0 + 1)];
                    a[(i, k0)] = (x0 * d22 - x1 * d21) / det;
                    a[(i, k0 + 1)] = (x1 * d11 - x0 * d21) / det;
                }
                for j in (k0 + 2)..n {
                    // w_j = D l_j = original column entries.
                    let w0 = a[(j, k0)] * d11 + a[(j, k0 + 1)] * d21;
                    let w1 = a[(j, k0)] * d21 + a[(j, k0 + 1)] * d22;
                    for i in j..n {
                        a[(i, j)] -= a[(i, k0)] * w0 + a[(i, k0 + 1)] * w1;
                    }
                }
                for j in (k0 + 2)..n {
                    for i in (j + 1)..n {
                        a[(j, i)] = a[(i, j)];
                    }
                }
                a[(k0 + 1, k0)] = 0.0;
                pivots.push(Pivot::Two(d11, d21, d22));
            }
            k0 += kstep;
        }

        if a.iter().any(|v| !v.is_finite()) {
            return Err(FactorError::NonFinite);
        }
        Ok(Self {
            n,
            l: a,
            pivots,
            perm,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Solves `K x = b`.
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        assert_eq!(b.len(), self.n, "rhs dimension mismatch");
        let n = self.n;
        let mut y: DVector<f64> = DVector::from_fn(n, |k, _| b[self.perm[k]]);

        // L y = b (unit lower, columns stored below the diagonal).
        let mut k = 0;
        for piv in &self.pivots {
            let width = match piv {
                Pivot::One(_) => 1,
                Pivot::Two(..) => 2,
            };
            for c in k..k + width {
                let yc = y[c];
                if yc != 0.0 {
                    for i in (k + width)..n {
                        y[i] -= self.l[(i, c)] * yc;
                    }
                }
            }
            k += width;
        }

        // D w = y
        let mut k = 0;
        for piv in &self.pivots {
            match *piv {
                Pivot::One(d) => {
                    y[k] /= d;
                    k += 1;
                }
                Pivot::Two(a, b, c) => {
                    let det = a * c - b * b;
                    let (y0, y1) = (y[k], y[k + 1]);
                    y[k] = (c * y0 - b * y1) / det;
                    y[k + 1] = (a * y1 - b * y0) / det;
                    k += 2;
                }
            }
        }

        // Lᵀ x = w
        let mut k = n;
        for piv in self.pivots.iter().rev() {
            let width = match piv {
                Pivot::One(_) => 1,
                Pivot::Two(..) => 2,
            };
            k -= width;
            for c in k..k + width {
                let mut acc = y[c];
                for i in (k + width)..n {
                    acc -= self.l[(i, c)] * y[i];
                }
                y[c] = acc;
            }
        }

        let mut x = DVector::zeros(n);
        for (pos, &orig) in self.perm.iter().enumerate() {
            x[orig] = y[pos];
        }
        x
    }

    /// Number of (positive, negative) eigenvalues of the factored matrix.
    pub fn inertia(&self) -> (usize, usize) {
        let mut pos = 0;
        let mut neg = 0;
        for piv in &self.pivots {
            match *piv {
                Pivot::One(d) => {
                    if d > 0.0 {
                        pos += 1
                    } else {
                        neg += 1
                    }
                }
                // A 2×2 Bunch–Kaufman block always has one eigenvalue of each sign.
                Pivot::Two(..) => {
                    pos += 1;
                    neg += 1;
                }
            }
        }
        (pos, neg)
    }
}

/// Solves `K x = b` using a factorization of a nearby (regularized) matrix,
/// then refines the answer against the exact `K`.
///
/// Returns the refined solution and the final residual ∞-norm.
pub fn solve_refined(
    factor: &LdlFactor,
    k: &DMatrix<f64>,
    b: &DVector<f64>,
    max_steps: usize,
) -> (DVector<f64>, f64) {
    let mut x = factor.solve(b);
    let bnorm = b.amax().max(1.0);
    let mut res = b - k * &x;
    let mut rnorm = res.amax();
    for _ in 0..max_steps {
        if rnorm <= 1e-15 * bnorm {
            break;
        }
        let dx = factor.solve(&res);
        let candidate = &x + dx;
        let cres = b - k * &candidate;
        let cnorm = cres.amax();
        if !(cnorm < rnorm) {
            break;
        }
        x = candidate;
        res = cres;
        rnorm = cnorm;
    }
    (x, rnorm)
}

/// Symmetrizes `m` as `(m + mᵀ)/2`.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Numerical rank from singular values, relative to the largest one.
pub fn numerical_rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let sv = m.clone().singular_values();
    let smax = sv.amax();
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * smax).count()
}

/// Orthonormal basis for the null space of `m` (columns), from the
/// eigendecomposition of `mᵀm`.
pub fn null_space_basis(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.ncols();
    if m.nrows() == 0 {
        return DMatrix::identity(n, n);
    }
    let gram = m.transpose() * m;
    let eig = nalgebra::SymmetricEigen::new(gram);
    let emax = eig.eigenvalues.amax().max(f64::MIN_POSITIVE);
    let cols: Vec<DVector<f64>> = (0..n)
        .filter(|&i| eig.eigenvalues[i] <= 1e-12 * emax)
        .map(|i| eig.eigenvectors.column(i).into_owned())
        .collect();
    if cols.is_empty() {
        DMatrix::zeros(n, 0)
    } else {
        DMatrix::from_columns(&cols)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lcg(seed: &mut u64) -> f64 {
        *seed = seed
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        ((*seed >> 11) as f64) / ((1u64 << 53) as f64) - 0.5
    }

    #[test]
    fn solves_spd_system() {
        let k = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.0, 1.0, 3.0, 1.0, 0.0, 1.0, 2.0]);
        let b = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let f = LdlFactor::new(&k).unwrap();
        let x = f.solve(&b);
        assert!((&k * x - b).amax() < 1e-14);
        assert_eq!(f.inertia(), (3, 0));
    }

    #[test]
    fn zero_diagonal_needs_two_by_two_pivot() {
        // [[0, 1], [1, 0]] has no usable 1×1 pivot.
        let k = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let f = LdlFactor::new(&k).unwrap();
        let b = DVector::from_vec(vec![2.0, -3.0]);
        let x = f.solve(&b);
        assert!((x - DVector::from_vec(vec![-3.0, 2.0])).amax() < 1e-15);
        assert_eq!(f.inertia(), (1, 1));
    }

    #[test]
    fn random_kkt_matrices() {
        let mut seed = 17u64;
        for n in [1usize, 2, 5, 9, 14] {
            for m in [0usize, 1, 3].into_iter().filter(|&m| m <= n) {
                let mut p = DMatrix::from_fn(n, n, |_, _| lcg(&mut seed));
                p = &p * p.transpose();
                let a = DMatrix::from_fn(m, n, |_, _| lcg(&mut seed));
                let mut k = DMatrix::zeros(n + m, n + m);
                k.view_mut((0, 0), (n, n)).copy_from(&p);
                k.view_mut((n, 0), (m, n)).copy_from(&a);
                k.view_mut((0, n), (n, m)).copy_from(&a.transpose());
                let b = DVector::from_fn(n + m, |_, _| lcg(&mut seed));
                let f = LdlFactor::new(&k).unwrap();
                let x = f.solve(&b);
                assert!((&k * &x - &b).amax() < 1e-9, "n={n} m={m}");
                let (pos, neg) = f.inertia();
                assert_eq!((pos, neg), (n, m));
            }
        }
    }

    #[test]
    fn singular_matrix_rejected() {
        let k = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert_eq!(LdlFactor::new(&k).unwrap_err(), FactorError::Singular);
        assert_eq!(
            LdlFactor::new(&DMatrix::zeros(2, 3)).unwrap_err(),
            FactorError::NotSquare
        );
    }

    #[test]
    fn refinement_recovers_unregularized_solution() {
        let k = DMatrix::from_row_slice(3, 3, &[2.0, 0.0, 1.0, 0.0, 1.0, 1.0, 1.0, 1.0, 0.0]);
        let mut kr = k.clone();
        kr[(0, 0)] += 1e-6;
        kr[(1, 1)] += 1e-6;
        kr[(2, 2)] -= 1e-6;
        let f = LdlFactor::new(&kr).unwrap();
        let b = DVector::from_vec(vec![1.0, -1.0, 0.5]);
        let (x, r) = solve_refined(&f, &k, &b, 10);
        assert!(r < 1e-13);
        assert!((&k * x - b).amax() < 1e-13);
    }

    #[test]
    fn null_space_and_rank() {
        let a = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let f = null_space_basis(&a);
        assert_eq!(f.ncols(), 1);
        assert!((&a * &f).amax() < 1e-12);
        let dup = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 2.0, 0.0]);
        assert_eq!(numerical_rank(&dup, 1e-10), 1);
    }
}
