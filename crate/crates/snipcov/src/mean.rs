//! Penalized least-squares mean estimation over an analytic basis, with
//! K-fold cross-validated selection of the basis size q and the roughness
//! penalty ρ.
//!
//! The coefficients solve the normal equations (G + ρW) a = b with
//! G = Σᵢ vᵢ Σⱼ Φ(T_ij)Φ(T_ij)ᵀ, b = Σᵢ vᵢ Σⱼ Y_ij Φ(T_ij) and W the Gram
//! matrix of second derivatives.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::basis::{BasisError, BasisKind, BasisSpec, GramOrder};
use crate::scalar::Real;
use crate::snippets::{SnippetDataset, WeightScheme};

#[derive(Debug, Error)]
pub enum MeanError {
    #[error("dataset has no observations")]
    EmptyDataset,
    #[error("normal equations singular even after ridge fallback (q = {q}); q too large for the design")]
    SingularSystem { q: usize },
    #[error("basis error: {0}")]
    Basis(#[from] BasisError),
    #[error("cross-validation needs at least {needed} subjects, got {got}")]
    TooFewSubjects { needed: usize, got: usize },
    #[error("empty tuning grid")]
    EmptyGrid,
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("fit document error: {0}")]
    Document(#[from] serde_json::Error),
}

/// A fitted mean function μ̂(t) = âᵀΦ_q(t).
#[derive(Debug, Clone)]
pub struct MeanFit<T: Real> {
    pub spec: BasisSpec<T>,
    pub coefficients: DVector<T>,
    pub q: usize,
    pub rho: T,
    pub scheme: WeightScheme,
}

impl<T: Real> MeanFit<T> {
    /// μ̂(t), the inner product of the coefficients with the basis vector.
    pub fn eval(&self, t: T) -> Result<T, MeanError> {
        let phi = self.spec.eval_vector(t, self.q, 0)?;
        Ok(self.coefficients.dot(&phi))
    }
}

/// Fits the penalized least-squares mean estimator.
pub fn fit_mean<T: Real>(
    dataset: &SnippetDataset<T>,
    spec: &BasisSpec<T>,
    q: usize,
    rho: T,
    scheme: WeightScheme,
) -> Result<MeanFit<T>, MeanError> {
    assert!(q >= 1, "q must be positive");
    assert!(rho >= T::zero(), "rho must be nonnegative");
    if dataset.n_observations() == 0 {
        return Err(MeanError::EmptyDataset);
    }
    let weights = dataset.mean_weights(scheme);
    let mut gram = DMatrix::<T>::zeros(q, q);
    let mut rhs = DVector::<T>::zeros(q);
    for (subject, &v) in dataset.subjects.iter().zip(&weights) {
        for (&t, &y) in subject.times.iter().zip(&subject.values) {
            let phi = spec.eval_vector(t, q, 0)?;
            gram.syger(v, &phi, &phi, T::one());
            rhs.axpy(v * y, &phi, T::one());
        }
    }
    for k in 0..q {
        for l in (k + 1)..q {
            gram[(k, l)] = gram[(l, k)];
        }
    }
    let penalty = spec.gram_matrix(q, GramOrder::W);
    let system = &gram + &penalty * rho;
    let coefficients = solve_spd_with_ridge(system, &rhs).ok_or(MeanError::SingularSystem { q })?;
    Ok(MeanFit {
        spec: *spec,
        coefficients,
        q,
        rho,
        scheme,
    })
}

/// Solves a symmetric positive-definite system, retrying once with a ridge
/// of 1e−10·trace/n. W is singular for the Fourier constant function, so ρW
/// alone cannot rescue a deficient G.
pub(crate) fn solve_spd_with_ridge<T: Real>(
    system: DMatrix<T>,
    rhs: &DVector<T>,
) -> Option<DVector<T>> {
    if let Some(chol) = system.clone().cholesky() {
        return Some(chol.solve(rhs));
    }
    let n = system.nrows();
    let ridge = T::of_f64(1e-10) * system.trace() / T::of_usize(n);
    let mut ridged = system;
    for k in 0..n {
        ridged[(k, k)] += ridge;
    }
    ridged.cholesky().map(|chol| chol.solve(rhs))
}

/// Result of the K-fold search over (q, ρ).
#[derive(Debug, Clone)]
pub struct CvSelection<T: Real> {
    pub q: usize,
    pub rho: T,
    /// Validation error per grid point, in grid order.
    pub table: Vec<(usize, T, T)>,
}

/// Default q grid used when the caller asks for automatic selection.
pub fn default_q_grid() -> Vec<usize> {
    (3..=21).step_by(2).collect()
}

/// Default ρ grid: 10⁻⁹ … 10⁻¹. The fidelity weights are normalized to sum
/// to one, so useful penalties sit several orders of magnitude below what a
/// raw-sum objective would need; the low end brackets that regime.
pub fn default_rho_grid<T: Real>() -> Vec<T> {
    (-9..=-1).map(|e| T::of_f64(10f64.powi(e))).collect()
}

/// K-fold cross-validation over the (q, ρ) grid. Ties break toward the
/// smaller q, then the smaller ρ. Grid points whose fit is singular on some
/// fold get infinite validation error rather than aborting the search.
pub fn cv_select_mean<T: Real>(
    dataset: &SnippetDataset<T>,
    spec: &BasisSpec<T>,
    q_grid: &[usize],
    rho_grid: &[T],
    folds: usize,
    scheme: WeightScheme,
    seed: u64,
) -> Result<CvSelection<T>, MeanError> {
    if q_grid.is_empty() || rho_grid.is_empty() {
        return Err(MeanError::EmptyGrid);
    }
    assert!(folds >= 2, "need at least two folds");
    let n = dataset.n_subjects();
    if n < folds {
        return Err(MeanError::TooFewSubjects { needed: folds, got: n });
    }

    // Seeded permutation; folds of size ⌊n/K⌋ or ⌈n/K⌉.
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let fold_of: Vec<usize> = {
        let mut assignment = vec![0usize; n];
        for (pos, &subject) in order.iter().enumerate() {
            assignment[subject] = pos % folds;
        }
        assignment
    };

    let mut grid: Vec<(usize, T)> = Vec::new();
    let mut sorted_q = q_grid.to_vec();
    sorted_q.sort_unstable();
    let mut sorted_rho = rho_grid.to_vec();
    sorted_rho.sort_by(|a, b| a.partial_cmp(b).unwrap());
    for &q in &sorted_q {
        for &rho in &sorted_rho {
            grid.push((q, rho));
        }
    }

    let table: Vec<(usize, T, T)> = grid
        .par_iter()
        .map(|&(q, rho)| {
            let mut total = T::zero();
            for fold in 0..folds {
                let train = SnippetDataset {
                    subjects: dataset
                        .subjects
                        .iter()
                        .enumerate()
                        .filter(|(i, _)| fold_of[*i] != fold)
                        .map(|(_, s)| s.clone())
                        .collect(),
                };
                let fit = match fit_mean(&train, spec, q, rho, scheme) {
                    Ok(fit) => fit,
                    Err(_) => return (q, rho, T::of_f64(f64::INFINITY)),
                };
                for (i, subject) in dataset.subjects.iter().enumerate() {
                    if fold_of[i] != fold {
                        continue;
                    }
                    for (&t, &y) in subject.times.iter().zip(&subject.values) {
                        let r = y - fit.eval(t).unwrap();
                        total += r * r;
                    }
                }
            }
            (q, rho, total)
        })
        .collect();

    let best = table
        .iter()
        .min_by(|a, b| a.2.partial_cmp(&b.2).unwrap())
        .copied()
        .unwrap();
    Ok(CvSelection {
        q: best.0,
        rho: best.1,
        table,
    })
}

/// Serializable form of a mean fit (JSON document).
#[derive(Debug, Serialize, Deserialize)]
pub struct MeanFitDocument {
    pub kind: BasisKind,
    pub zeta: f64,
    pub q: usize,
    pub rho: f64,
    pub scheme: WeightScheme,
    pub coefficients: Vec<f64>,
}

impl<T: Real> MeanFit<T> {
    pub fn to_document(&self) -> MeanFitDocument {
        MeanFitDocument {
            kind: self.spec.kind(),
            zeta: self.spec.zeta().as_f64(),
            q: self.q,
            rho: self.rho.as_f64(),
            scheme: self.scheme,
            coefficients: self.coefficients.iter().map(|c| c.as_f64()).collect(),
        }
    }

    pub fn from_document(doc: &MeanFitDocument) -> Result<Self, MeanError> {
        let spec = BasisSpec::new(doc.kind, T::of_f64(doc.zeta))?;
        Ok(MeanFit {
            spec,
            coefficients: DVector::from_iterator(
                doc.coefficients.len(),
                doc.coefficients.iter().map(|&c| T::of_f64(c)),
            ),
            q: doc.coefficients.len(),
            rho: T::of_f64(doc.rho),
            scheme: doc.scheme,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), MeanError> {
        let json = serde_json::to_string_pretty(&self.to_document())?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, MeanError> {
        let doc: MeanFitDocument = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        Self::from_document(&doc)
    }
}
