//! Estimation of mean and covariance functions from functional snippets.
//!
//! Functional snippets are short per-subject observation windows: each
//! subject is observed only on a subinterval of length δ < 1 of the study
//! domain, so the raw data carry no direct covariance information outside
//! the diagonal band |s − t| ≤ δ. This crate estimates the mean by
//! penalized least squares over an analytic basis expansion and the
//! covariance by a penalized fit over Cholesky factors, solved with a
//! geometric Newton method under the Log-Cholesky manifold structure so
//! that the fitted coefficient matrix is positive semidefinite by
//! construction. The analyticity of the basis carries information from the
//! diagonal band to the rest of the unit square.
//!
//! The numerical core is generic over the scalar type (see [`scalar::Real`]);
//! simulation and the Monte Carlo harness are `f64`.

pub mod basis;
pub mod covfit;
pub mod experiments;
pub mod fpca;
pub mod mean;
pub mod pilot;
pub mod quad;
pub mod scalar;
pub mod snippets;

pub use basis::{BasisKind, BasisSpec, GramMatrices, GramOrder};
pub use scalar::Real;

/// Default scalar used by the simulator, the harness, and the CLI.
pub type Scalar = f64;

pub type BasisSpec64 = basis::BasisSpec<f64>;
pub type GramMatrices64 = basis::GramMatrices<f64>;
pub type MeanFit64 = mean::MeanFit<f64>;
pub type CovFit64 = covfit::CovFit<f64>;
pub type CholeskyPoint64 = covfit::CholeskyPoint<f64>;
pub type EigenSystem64 = fpca::EigenSystem<f64>;
