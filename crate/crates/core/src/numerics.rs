//! Dense symmetric linear algebra with jitter-stabilized Cholesky
//! factorization. Every covariance matrix in the crate flows through here.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::real::{cst, Real};

#[derive(Error, Debug, Clone, PartialEq)]
pub enum NumericsError {
    #[error("matrix is not positive definite (failed at maximum jitter {max_jitter:e})")]
    NotPositiveDefinite { max_jitter: f64 },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("matrix is not symmetric within tolerance")]
    NotSymmetric,
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is not lower triangular with positive diagonal")]
    NotLowerTriangular,
    #[error("matrix is empty")]
    Empty,
}

pub type Result<T> = std::result::Result<T, NumericsError>;

/// Dense symmetric matrix, validated at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct PsdMatrix<T: Real> {
    mat: DMatrix<T>,
}

impl<T: Real> PsdMatrix<T> {
    /// Wraps a dense matrix, checking squareness and symmetry to 1e-12
    /// relative tolerance.
    pub fn new(mat: DMatrix<T>) -> Result<Self> {
        if mat.nrows() != mat.ncols() {
            return Err(NumericsError::NotSquare {
                rows: mat.nrows(),
                cols: mat.ncols(),
            });
        }
        if mat.nrows() == 0 {
            return Err(NumericsError::Empty);
        }
        let scale = mat.iter().fold(T::zero(), |a, &v| a.max(v.abs()));
        let tol = cst::<T>(1e-12) * scale.max(T::one());
        for i in 0..mat.nrows() {
            for j in (i + 1)..mat.ncols() {
                if (mat[(i, j)] - mat[(j, i)]).abs() > tol {
                    return Err(NumericsError::NotSymmetric);
                }
            }
        }
        Ok(Self { mat })
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<T> {
        &self.mat
    }

    pub fn into_matrix(self) -> DMatrix<T> {
        self.mat
    }

    pub fn mean_diag(&self) -> T {
        self.mat.diagonal().sum() / cst::<T>(self.dim() as f64)
    }
}

/// Lower-triangular factor with strictly positive diagonal. Entries above the
/// diagonal are exactly zero.
#[derive(Debug, Clone, PartialEq)]
pub struct LowerTriangular<T: Real> {
    mat: DMatrix<T>,
}

impl<T: Real> LowerTriangular<T> {
    pub fn new(mat: DMatrix<T>) -> Result<Self> {
        if mat.nrows() != mat.ncols() {
            return Err(NumericsError::NotSquare {
                rows: mat.nrows(),
                cols: mat.ncols(),
            });
        }
        if mat.nrows() == 0 {
            return Err(NumericsError::Empty);
        }
        for i in 0..mat.nrows() {
            if !(mat[(i, i)] > T::zero()) {
                return Err(NumericsError::NotLowerTriangular);
            }
            for j in (i + 1)..mat.ncols() {
                if mat[(i, j)] != T::zero() {
                    return Err(NumericsError::NotLowerTriangular);
                }
            }
        }
        Ok(Self { mat })
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<T> {
        &self.mat
    }

    /// Reconstructs L·Lᵀ.
    pub fn reconstruct(&self) -> DMatrix<T> {
        &self.mat * self.mat.transpose()
    }
}

/// Escalating jitter ladder, expressed relative to `mean(diag A)`.
#[derive(Debug, Clone, Copy)]
pub struct JitterPolicy {
    pub initial_rel: f64,
    pub growth: f64,
    pub max_rel: f64,
}

impl Default for JitterPolicy {
    fn default() -> Self {
        Self {
            initial_rel: 1e-8,
            growth: 10.0,
            max_rel: 1e-2,
        }
    }
}

/// Cholesky factor plus the jitter that was actually added.
#[derive(Debug, Clone)]
pub struct CholeskyOutcome<T: Real> {
    pub factor: LowerTriangular<T>,
    pub jitter: T,
}

fn raw_cholesky<T: Real>(a: &DMatrix<T>, jitter: T) -> Option<DMatrix<T>> {
    let n = a.nrows();
    let mut l = DMatrix::<T>::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)] + jitter;
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > T::zero()) || !d.is_finite() {
            return None;
        }
        let dj = d.sqrt();
        l[(j, j)] = dj;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / dj;
        }
    }
    Some(l)
}

/// Factorizes A + εI = L·Lᵀ, starting at ε = 0 and escalating ε through the
/// policy ladder until the factorization succeeds.
pub fn cholesky_psd<T: Real>(a: &PsdMatrix<T>, policy: JitterPolicy) -> Result<CholeskyOutcome<T>> {
    let base = a.mean_diag().abs().max(T::tiny());
    let mut rel = 0.0f64;
    loop {
        let jitter = base * cst::<T>(rel);
        if let Some(l) = raw_cholesky(a.as_matrix(), jitter) {
            return Ok(CholeskyOutcome {
                factor: LowerTriangular { mat: l },
                jitter,
            });
        }
        if rel == 0.0 {
            rel = policy.initial_rel;
        } else if rel >= policy.max_rel {
            return Err(NumericsError::NotPositiveDefinite {
                max_jitter: policy.max_rel,
            });
        } else {
            rel = (rel * policy.growth).min(policy.max_rel);
        }
    }
}

/// Solves L·X = B by forward substitution.
pub fn solve_lower<T: Real>(l: &LowerTriangular<T>, b: &DMatrix<T>) -> Result<DMatrix<T>> {
    let n = l.dim();
    if b.nrows() != n {
        return Err(NumericsError::DimensionMismatch {
            expected: n,
            found: b.nrows(),
        });
    }
    let lm = l.as_matrix();
    let mut x = b.clone();
    for c in 0..x.ncols() {
        for i in 0..n {
            let mut s = x[(i, c)];
            for k in 0..i {
                s -= lm[(i, k)] * x[(k, c)];
            }
            x[(i, c)] = s / lm[(i, i)];
        }
    }
    Ok(x)
}

/// Solves Lᵀ·X = B by backward substitution.
pub fn solve_lower_transpose<T: Real>(l: &LowerTriangular<T>, b: &DMatrix<T>) -> Result<DMatrix<T>> {
    let n = l.dim();
    if b.nrows() != n {
        return Err(NumericsError::DimensionMismatch {
            expected: n,
            found: b.nrows(),
        });
    }
    let lm = l.as_matrix();
    let mut x = b.clone();
    for c in 0..x.ncols() {
        for ii in 0..n {
            let i = n - 1 - ii;
            let mut s = x[(i, c)];
            for k in (i + 1)..n {
                s -= lm[(k, i)] * x[(k, c)];
            }
            x[(i, c)] = s / lm[(i, i)];
        }
    }
    Ok(x)
}

/// Solves (L·Lᵀ)·X = B.
pub fn solve_chol<T: Real>(l: &LowerTriangular<T>, b: &DMatrix<T>) -> Result<DMatrix<T>> {
    solve_lower_transpose(l, &solve_lower(l, b)?)
}

/// Vector variant of [`solve_lower`].
pub fn solve_lower_vec<T: Real>(l: &LowerTriangular<T>, b: &DVector<T>) -> Result<DVector<T>> {
    let m = DMatrix::from_column_slice(b.len(), 1, b.as_slice());
    Ok(DVector::from_column_slice(solve_lower(l, &m)?.as_slice()))
}

/// Vector variant of [`solve_chol`].
pub fn solve_chol_vec<T: Real>(l: &LowerTriangular<T>, b: &DVector<T>) -> Result<DVector<T>> {
    let m = DMatrix::from_column_slice(b.len(), 1, b.as_slice());
    Ok(DVector::from_column_slice(solve_chol(l, &m)?.as_slice()))
}

/// Explicit inverse of L·Lᵀ. Only used where the full matrix is genuinely
/// needed (gradient assembly at M ≤ 150).
pub fn inverse_from_chol<T: Real>(l: &LowerTriangular<T>) -> Result<DMatrix<T>> {
    solve_chol(l, &DMatrix::identity(l.dim(), l.dim()))
}

/// log det(L·Lᵀ) = 2·Σ log Lᵢᵢ.
pub fn logdet_from_chol<T: Real>(l: &LowerTriangular<T>) -> T {
    let two = cst::<T>(2.0);
    (0..l.dim()).map(|i| l.as_matrix()[(i, i)].ln()).sum::<T>() * two
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn psd(entries: &[f64], n: usize) -> PsdMatrix<f64> {
        PsdMatrix::new(DMatrix::from_row_slice(n, n, entries)).unwrap()
    }

    #[test]
    fn cholesky_identity_no_jitter() {
        let a = psd(&[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0], 3);
        let out = cholesky_psd(&a, JitterPolicy::default()).unwrap();
        assert_eq!(out.jitter, 0.0);
        assert_eq!(out.factor.as_matrix(), &DMatrix::identity(3, 3));
    }

    #[test]
    fn cholesky_two_by_two_hand_factor() {
        // [[4,2],[2,3]] -> [[2,0],[1,sqrt(2)]]
        let a = psd(&[4.0, 2.0, 2.0, 3.0], 2);
        let out = cholesky_psd(&a, JitterPolicy::default()).unwrap();
        let l = out.factor.as_matrix();
        assert_relative_eq!(l[(0, 0)], 2.0, max_relative = 1e-14);
        assert_relative_eq!(l[(1, 0)], 1.0, max_relative = 1e-14);
        assert_relative_eq!(l[(1, 1)], 2.0_f64.sqrt(), max_relative = 1e-14);
        assert_eq!(l[(0, 1)], 0.0);
        // multiply back
        let r = out.factor.reconstruct();
        assert_relative_eq!(r[(0, 0)], 4.0, max_relative = 1e-14);
        assert_relative_eq!(r[(1, 1)], 3.0, max_relative = 1e-14);
    }

    #[test]
    fn cholesky_singular_rank_one_uses_ladder() {
        // v = (1,1): vv^T is singular, the ladder must kick in.
        let a = psd(&[1.0, 1.0, 1.0, 1.0], 2);
        let out = cholesky_psd(&a, JitterPolicy::default()).unwrap();
        assert!(out.jitter > 0.0);
        let resid = out.factor.reconstruct() - a.as_matrix();
        assert!(resid.norm() <= out.jitter * 2.0 + 1e-12);
    }

    #[test]
    fn not_positive_definite_at_max_jitter() {
        let a = psd(&[1.0, 0.0, 0.0, -1.0], 2);
        let err = cholesky_psd(&a, JitterPolicy::default()).unwrap_err();
        assert!(matches!(err, NumericsError::NotPositiveDefinite { .. }));
    }

    #[test]
    fn solve_lower_identity_and_hand_case() {
        let l = LowerTriangular::new(DMatrix::identity(2, 2)).unwrap();
        let b = DMatrix::from_row_slice(2, 1, &[4.0, 3.0]);
        assert_eq!(solve_lower(&l, &b).unwrap(), b);

        // L = [[2,0],[1,sqrt2]], B = (4,3)^T -> (2, 1/sqrt2)^T
        let l = LowerTriangular::new(DMatrix::from_row_slice(
            2,
            2,
            &[2.0, 0.0, 1.0, 2.0_f64.sqrt()],
        ))
        .unwrap();
        let x = solve_lower(&l, &b).unwrap();
        assert_relative_eq!(x[(0, 0)], 2.0, max_relative = 1e-14);
        assert_relative_eq!(x[(1, 0)], 1.0 / 2.0_f64.sqrt(), max_relative = 1e-14);
        // substitute back
        let back = l.as_matrix() * &x;
        assert_relative_eq!(back[(0, 0)], 4.0, max_relative = 1e-14);
        assert_relative_eq!(back[(1, 0)], 3.0, max_relative = 1e-14);
    }

    #[test]
    fn lower_triangular_rejects_zero_diagonal() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 0.0]);
        assert!(LowerTriangular::new(m).is_err());
    }

    #[test]
    fn lower_triangular_rejects_upper_entries() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(LowerTriangular::new(m).is_err());
    }

    #[test]
    fn logdet_cases() {
        let l = LowerTriangular::<f64>::new(DMatrix::identity(3, 3)).unwrap();
        assert_eq!(logdet_from_chol(&l), 0.0);

        // diag(2,8) factor of diag(4,64): logdet = log 256
        let l =
            LowerTriangular::new(DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 8.0])).unwrap();
        assert_relative_eq!(logdet_from_chol(&l), 256.0_f64.ln(), max_relative = 1e-14);

        let l = LowerTriangular::new(DMatrix::from_row_slice(1, 1, &[3.0_f64.sqrt()])).unwrap();
        assert_relative_eq!(logdet_from_chol(&l), 3.0_f64.ln(), max_relative = 1e-14);
    }

    #[test]
    fn psd_rejects_asymmetric() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.6, 1.0]);
        assert!(PsdMatrix::new(m).is_err());
    }

    #[test]
    fn solve_dimension_mismatch() {
        let l = LowerTriangular::new(DMatrix::identity(2, 2)).unwrap();
        let b = DMatrix::from_row_slice(3, 1, &[1.0, 2.0, 3.0]);
        assert!(matches!(
            solve_lower(&l, &b),
            Err(NumericsError::DimensionMismatch { .. })
        ));
    }
}
