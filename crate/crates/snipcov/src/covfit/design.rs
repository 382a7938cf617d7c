//! Precomputed per-subject quantities for the covariance objective:
//! evaluation matrices B_i (rows = observations, columns = basis
//! functions), raw-product matrices R_i, diagonal products Γ_ijj, subject
//! weights, and the basis Gram matrices. Built once per basis size and
//! shared across penalty values.

use nalgebra::{DMatrix, DVector};

use super::CovFitError;
use crate::basis::{BasisSpec, GramMatrices};
use crate::scalar::Real;
use crate::snippets::{SnippetDataset, WeightScheme};

/// One subject's contribution to the design (only subjects with at least
/// two observations appear).
#[derive(Debug, Clone)]
pub struct SubjectDesign<T: Real> {
    /// mᵢ×p evaluation matrix, entry (j, k) = φ_k(T_ij).
    pub b: DMatrix<T>,
    /// mᵢ×mᵢ raw products, entry (j, l) = Γ_ijl (diagonal included).
    pub r: DMatrix<T>,
    /// Diagonal products Γ_ijj.
    pub diag: DVector<T>,
    pub weight: T,
}

/// The full covariance design.
#[derive(Debug, Clone)]
pub struct CovDesign<T: Real> {
    pub spec: BasisSpec<T>,
    pub p: usize,
    pub scheme: WeightScheme,
    pub subjects: Vec<SubjectDesign<T>>,
    pub grams: GramMatrices<T>,
    /// Σᵢ wᵢ Bᵢᵀ Rᵢ Bᵢ, the only data aggregate that does not depend on
    /// the iterate.
    pub weighted_rb: DMatrix<T>,
}

/// Materializes the design for a dataset, mean function, and basis size.
pub fn precompute_design<T: Real>(
    dataset: &SnippetDataset<T>,
    mean_fn: impl Fn(T) -> T,
    spec: &BasisSpec<T>,
    p: usize,
    scheme: WeightScheme,
) -> Result<CovDesign<T>, CovFitError> {
    assert!(p >= 1, "basis size must be positive");
    let weights = dataset.cov_weights(scheme);
    let mut subjects = Vec::new();
    let mut weighted_rb = DMatrix::<T>::zeros(p, p);
    for (subject, &weight) in dataset.subjects.iter().zip(&weights) {
        let m = subject.len();
        if m < 2 {
            continue;
        }
        let b = spec.eval_matrix(&subject.times, p, 0)?;
        let resid: Vec<T> = subject
            .times
            .iter()
            .zip(&subject.values)
            .map(|(&t, &y)| y - mean_fn(t))
            .collect();
        let r = DMatrix::from_fn(m, m, |j, l| resid[j] * resid[l]);
        let diag = DVector::from_iterator(m, resid.iter().map(|&e| e * e));
        weighted_rb += b.transpose() * &r * &b * weight;
        subjects.push(SubjectDesign { b, r, diag, weight });
    }
    if subjects.is_empty() {
        return Err(CovFitError::NoPairs);
    }
    Ok(CovDesign {
        spec: *spec,
        p,
        scheme,
        subjects,
        grams: GramMatrices::new(spec, p),
        weighted_rb,
    })
}
