//! Penalized least-squares covariance estimation over an analytic basis,
//! γ̂(s,t) = Φ_p(s)ᵀ Ĉ Φ_p(t), with Ĉ = LLᵀ optimized by a geometric Newton
//! method on the Log-Cholesky manifold so the estimate is positive
//! semidefinite by construction.

pub mod design;
pub mod manifold;
pub mod newton;
pub mod objective;

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use design::{precompute_design, CovDesign, SubjectDesign};
pub use manifold::{CholeskyPoint, LowerTriCoords, ManifoldError};
pub use newton::{
    band_error, default_lambda_grid, default_p_grid, family_check, init_point, newton_fit,
    select_cov_tuning, CovTuningSelection, NewtonOptions,
};
pub use objective::{gradient, hessian, objective, penalty};

use crate::basis::{BasisError, BasisKind, BasisSpec};
use crate::scalar::Real;

#[derive(Debug, Error)]
pub enum CovFitError {
    #[error("no subject has two or more observations")]
    NoPairs,
    #[error("singular normal system at initialization: p = {p} exceeds what the pair design supports")]
    SingularInit { p: usize },
    #[error("eigen-repaired initializer is not positive definite")]
    InitNotPositive,
    #[error("no feasible initializer inside the constraint family")]
    InfeasibleInit,
    #[error("tuning grid is empty")]
    EmptyGrid,
    #[error(transparent)]
    Basis(#[from] BasisError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Why the Newton iteration stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TerminationReason {
    /// Gradient norm fell below the (relative) tolerance.
    Converged,
    /// Iteration cap reached.
    MaxIterations,
    /// Candidate iterates left the constraint family; the last feasible
    /// iterate was returned.
    FamilyViolation,
    /// No descent step was found even after damping and backtracking.
    Stalled,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Diagnostics {
    pub iterations: usize,
    pub final_gradient_norm: f64,
    pub final_objective: f64,
    pub termination: TerminationReason,
}

/// A fitted covariance function γ̂(s,t) = Φ_p(s)ᵀ C Φ_p(t).
#[derive(Debug, Clone)]
pub struct CovFit<T: Real> {
    pub spec: BasisSpec<T>,
    /// Symmetric PSD coefficient matrix.
    pub c: DMatrix<T>,
    pub p: usize,
    pub lambda: T,
    pub diagnostics: Diagnostics,
}

impl<T: Real> CovFit<T> {
    /// Evaluates γ̂ at (s, t).
    pub fn eval(&self, s: T, t: T) -> Result<T, BasisError> {
        let phi_s = self.spec.eval_vector(s, self.p, 0)?;
        let phi_t = self.spec.eval_vector(t, self.p, 0)?;
        Ok((phi_s.transpose() * &self.c * phi_t)[(0, 0)])
    }

    /// Evaluates γ̂ on the grid product, entry (j, l) = γ̂(ts[j], ts[l]).
    pub fn eval_grid(&self, ts: &[T]) -> Result<DMatrix<T>, BasisError> {
        let phi = self.spec.eval_matrix(ts, self.p, 0)?;
        Ok(&phi * &self.c * phi.transpose())
    }

    pub fn save(&self, path: &Path) -> Result<(), CovFitError> {
        // nalgebra iterates column-major; store row-major for readability
        let mut row_major = Vec::with_capacity(self.p * self.p);
        for j in 0..self.p {
            for l in 0..self.p {
                row_major.push(self.c[(j, l)].as_f64());
            }
        }
        let doc = CovFitDocument {
            kind: self.spec.kind(),
            zeta: self.spec.zeta().as_f64(),
            p: self.p,
            lambda: self.lambda.as_f64(),
            c: row_major,
            diagnostics: self.diagnostics.clone(),
        };
        fs::write(path, serde_json::to_string_pretty(&doc)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CovFitError> {
        let doc: CovFitDocument = serde_json::from_str(&fs::read_to_string(path)?)?;
        let spec = BasisSpec::new(doc.kind, T::of_f64(doc.zeta))?;
        let c = DMatrix::from_row_slice(
            doc.p,
            doc.p,
            &doc.c.iter().map(|&v| T::of_f64(v)).collect::<Vec<_>>(),
        );
        Ok(Self {
            spec,
            c,
            p: doc.p,
            lambda: T::of_f64(doc.lambda),
            diagnostics: doc.diagnostics,
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CovFitDocument {
    kind: BasisKind,
    zeta: f64,
    p: usize,
    lambda: f64,
    /// Row-major C.
    c: Vec<f64>,
    diagnostics: Diagnostics,
}
