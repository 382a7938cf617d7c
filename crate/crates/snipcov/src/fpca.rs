//! Functional principal component analysis of a fitted covariance:
//! the operator eigenproblem ∫γ̂(s,t)ψ(t)dt = λψ(s) restricted to the basis
//! span, ψ = Φ_pᵀa, becomes CUa = λa and is solved in symmetric form by
//! whitening with a Cholesky factor of the Gram matrix U.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::basis::{BasisError, GramMatrices};
use crate::covfit::CovFit;
use crate::scalar::Real;

#[derive(Debug, Error)]
pub enum FpcaError {
    #[error("requested {k} components but the basis has only {p}")]
    TooManyComponents { k: usize, p: usize },
    #[error("at least one component must be requested")]
    ZeroComponents,
    #[error("Gram matrix is numerically singular")]
    SingularGram,
    #[error("the covariance has an all-zero spectrum")]
    ZeroSpectrum,
    #[error(transparent)]
    Basis(#[from] BasisError),
}

/// Principal components of a fitted covariance.
#[derive(Debug, Clone)]
pub struct EigenSystem<T: Real> {
    /// Nonincreasing, nonnegative (negatives above −1e−10 clipped to 0).
    pub eigenvalues: Vec<T>,
    /// Coefficient vectors a_k with ψ_k(t) = a_kᵀΦ_p(t).
    pub coefficients: Vec<DVector<T>>,
    /// λ_k / Σ_j λ_j over the full spectrum.
    pub fractions: Vec<T>,
}

/// Componentwise λ_k / Σλ.
pub fn variance_fractions<T: Real>(eigenvalues: &[T]) -> Result<Vec<T>, FpcaError> {
    let total: T = eigenvalues.iter().fold(T::zero(), |acc, &v| acc + v);
    if total <= T::zero() {
        return Err(FpcaError::ZeroSpectrum);
    }
    Ok(eigenvalues.iter().map(|&v| v / total).collect())
}

/// Leading k eigenpairs of the fitted covariance operator.
///
/// U = EEᵀ by Cholesky (with a 1e−12-scaled ridge retry), the symmetric
/// problem EᵀCE y = λy is eigendecomposed, and a = E⁻ᵀy maps back to basis
/// coefficients. Fractions are always taken over the full spectrum.
pub fn eigenpairs<T: Real>(
    fit: &CovFit<T>,
    grams: &GramMatrices<T>,
    k: usize,
) -> Result<EigenSystem<T>, FpcaError> {
    let p = fit.p;
    if k == 0 {
        return Err(FpcaError::ZeroComponents);
    }
    if k > p {
        return Err(FpcaError::TooManyComponents { k, p });
    }
    let e = cholesky_with_ridge(&grams.u).ok_or(FpcaError::SingularGram)?;
    let whitened = e.transpose() * &fit.c * &e;
    let whitened = (&whitened + whitened.transpose()) * T::of_f64(0.5);
    let eig = whitened.symmetric_eigen();

    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    let eigenvalues: Vec<T> = order
        .iter()
        .map(|&i| {
            let v = eig.eigenvalues[i];
            if v < T::zero() {
                T::zero()
            } else {
                v
            }
        })
        .collect();
    let fractions = variance_fractions(&eigenvalues)?;

    // back-substitute a = E⁻ᵀ y through the triangular factor
    let et = e.transpose();
    let phi_mid = fit.spec.eval_vector(T::of_f64(0.5), p, 0)?;
    let mut coefficients = Vec::with_capacity(k);
    for &i in order.iter().take(k) {
        let y = eig.eigenvectors.column(i).into_owned();
        let mut a = y;
        if !et.solve_upper_triangular_mut(&mut a) {
            return Err(FpcaError::SingularGram);
        }
        let mid = a.dot(&phi_mid);
        let flip = if mid != T::zero() {
            mid < T::zero()
        } else {
            crate::quad::integrate_01(|t| {
                fit.spec
                    .eval_vector(t, p, 0)
                    .map(|phi| a.dot(&phi))
                    .unwrap_or_else(|_| T::zero())
            }) < T::zero()
        };
        if flip {
            a = -a;
        }
        coefficients.push(a);
    }

    Ok(EigenSystem {
        eigenvalues: eigenvalues.into_iter().take(k).collect(),
        coefficients,
        fractions: fractions.into_iter().take(k).collect(),
    })
}

impl<T: Real> EigenSystem<T> {
    /// ψ_k evaluated at t.
    pub fn eval(&self, fit: &CovFit<T>, k: usize, t: T) -> Result<T, BasisError> {
        let phi = fit.spec.eval_vector(t, fit.p, 0)?;
        Ok(self.coefficients[k].dot(&phi))
    }
}

fn cholesky_with_ridge<T: Real>(u: &DMatrix<T>) -> Option<DMatrix<T>> {
    if let Some(chol) = u.clone().cholesky() {
        return Some(chol.l());
    }
    let n = u.nrows();
    let ridge = T::of_f64(1e-12) * (T::one() + u.diagonal().amax());
    let mut ridged = u.clone();
    for j in 0..n {
        ridged[(j, j)] += ridge;
    }
    ridged.cholesky().map(|c| c.l())
}
