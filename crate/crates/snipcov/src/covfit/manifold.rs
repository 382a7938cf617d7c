//! The manifold of lower-triangular matrices with strictly positive
//! diagonal, under the Log-Cholesky geometry: off-diagonal entries update
//! additively, diagonal entries multiplicatively through the scalar
//! exponential, so every exponential-map image stays on the manifold.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::scalar::Real;

#[derive(Debug, Error)]
pub enum ManifoldError {
    #[error("matrix is not square: {0}x{1}")]
    NotSquare(usize, usize),
    #[error("diagonal entry {0} is not strictly positive")]
    NonPositiveDiagonal(usize),
    #[error("upper-triangular entry ({0}, {1}) is nonzero")]
    NonZeroUpper(usize, usize),
}

/// A point on the manifold: lower-triangular with strictly positive
/// diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct CholeskyPoint<T: Real> {
    l: DMatrix<T>,
}

impl<T: Real> CholeskyPoint<T> {
    pub fn new(l: DMatrix<T>) -> Result<Self, ManifoldError> {
        if l.nrows() != l.ncols() {
            return Err(ManifoldError::NotSquare(l.nrows(), l.ncols()));
        }
        for j in 0..l.nrows() {
            if l[(j, j)] <= T::zero() {
                return Err(ManifoldError::NonPositiveDiagonal(j));
            }
            for k in (j + 1)..l.ncols() {
                if l[(j, k)] != T::zero() {
                    return Err(ManifoldError::NonZeroUpper(j, k));
                }
            }
        }
        Ok(Self { l })
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<T> {
        &self.l
    }

    /// The represented covariance coefficient matrix C = LLᵀ.
    pub fn covariance(&self) -> DMatrix<T> {
        &self.l * self.l.transpose()
    }

    /// Riemannian exponential map: strictly lower parts add, the diagonal
    /// updates as L_jj · exp(S_jj / L_jj).
    pub fn exp_map(&self, tangent: &DMatrix<T>) -> Self {
        let p = self.dim();
        let mut out = DMatrix::zeros(p, p);
        for j in 0..p {
            for k in 0..j {
                out[(j, k)] = self.l[(j, k)] + tangent[(j, k)];
            }
            out[(j, j)] = self.l[(j, j)] * (tangent[(j, j)] / self.l[(j, j)]).exp();
        }
        Self { l: out }
    }
}

/// Coordinate chart for the tangent space: the p(p+1)/2 lower-triangular
/// entries enumerated row-major, (τ, ν) with ν ≤ τ.
#[derive(Debug, Clone)]
pub struct LowerTriCoords {
    pub p: usize,
    pub entries: Vec<(usize, usize)>,
}

impl LowerTriCoords {
    pub fn new(p: usize) -> Self {
        let mut entries = Vec::with_capacity(p * (p + 1) / 2);
        for tau in 0..p {
            for nu in 0..=tau {
                entries.push((tau, nu));
            }
        }
        Self { p, entries }
    }

    pub fn dim(&self) -> usize {
        self.entries.len()
    }

    /// Flattens the lower triangle of a matrix into coordinates.
    pub fn to_vector<T: Real>(&self, m: &DMatrix<T>) -> DVector<T> {
        DVector::from_iterator(self.dim(), self.entries.iter().map(|&(t, n)| m[(t, n)]))
    }

    /// Expands coordinates into a lower-triangular matrix.
    pub fn to_matrix<T: Real>(&self, v: &DVector<T>) -> DMatrix<T> {
        let mut m = DMatrix::zeros(self.p, self.p);
        for (i, &(t, n)) in self.entries.iter().enumerate() {
            m[(t, n)] = v[i];
        }
        m
    }
}

/// Zeroes the strict upper triangle (tangent-space projection).
pub fn project_lower<T: Real>(m: &mut DMatrix<T>) {
    for j in 0..m.nrows() {
        for k in (j + 1)..m.ncols() {
            m[(j, k)] = T::zero();
        }
    }
}
