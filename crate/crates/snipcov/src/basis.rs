//! Analytic basis families on [0, 1]: plain Fourier, Fourier with an
//! extension margin, and orthonormal shifted Legendre polynomials.
//!
//! The Fourier convention places cosines at even indices and sines at odd
//! indices starting from 3, for both the plain and the extended family:
//! `φ₁(t) = (1+2ζ)^{-1/2}`, `φ_{2k}(t) = cos(2kπt/(1+2ζ))`,
//! `φ_{2k+1}(t) = sin(2kπt/(1+2ζ))` with ζ = 0 for the plain family.
//!
//! Legendre functions are evaluated through the three-term Bonnet recurrence
//! in the shifted variable `u = 2t - 1`; derivatives use the standard
//! derivative recurrences, so no numerical differentiation is involved.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::quad;
use crate::scalar::Real;

#[derive(Debug, Error)]
pub enum BasisError {
    #[error("extension margin must be nonnegative, got {0}")]
    NegativeMargin(f64),
    #[error("extension margin {0} is only meaningful for the Fourier extension family")]
    MarginWithoutExtension(f64),
    #[error("evaluation point {0} outside the domain [0, 1]")]
    OutOfDomain(f64),
    #[error("derivative order {0} not supported (only 0, 1, 2)")]
    BadDerivative(u32),
}

/// Basis family identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BasisKind {
    Fourier,
    FourierExtension,
    Legendre,
}

/// A concrete basis family: the kind plus the extension margin ζ
/// (zero unless the kind is [`BasisKind::FourierExtension`]).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BasisSpec<T: Real> {
    kind: BasisKind,
    zeta: T,
}

impl<T: Real> BasisSpec<T> {
    /// Builds a basis spec, validating the extension margin.
    pub fn new(kind: BasisKind, zeta: T) -> Result<Self, BasisError> {
        if zeta < T::zero() {
            return Err(BasisError::NegativeMargin(zeta.as_f64()));
        }
        if zeta > T::zero() && kind != BasisKind::FourierExtension {
            return Err(BasisError::MarginWithoutExtension(zeta.as_f64()));
        }
        Ok(Self { kind, zeta })
    }

    pub fn kind(&self) -> BasisKind {
        self.kind
    }

    pub fn zeta(&self) -> T {
        self.zeta
    }

    /// The deriv-th derivative of the first `q` basis functions at `t`.
    pub fn eval_vector(&self, t: T, q: usize, deriv: u32) -> Result<DVector<T>, BasisError> {
        if t < T::zero() || t > T::one() {
            return Err(BasisError::OutOfDomain(t.as_f64()));
        }
        if deriv > 2 {
            return Err(BasisError::BadDerivative(deriv));
        }
        assert!(q >= 1, "basis size must be positive");
        let mut out = DVector::zeros(q);
        match self.kind {
            BasisKind::Fourier | BasisKind::FourierExtension => {
                self.fill_fourier(t, deriv, out.as_mut_slice())
            }
            BasisKind::Legendre => fill_legendre(t, deriv, out.as_mut_slice()),
        }
        Ok(out)
    }

    /// Evaluation matrix: row `i` is the basis vector at `ts[i]`.
    pub fn eval_matrix(&self, ts: &[T], q: usize, deriv: u32) -> Result<DMatrix<T>, BasisError> {
        let mut m = DMatrix::zeros(ts.len(), q);
        for (i, &t) in ts.iter().enumerate() {
            let row = self.eval_vector(t, q, deriv)?;
            m.row_mut(i).copy_from(&row.transpose());
        }
        Ok(m)
    }

    fn fill_fourier(&self, t: T, deriv: u32, out: &mut [T]) {
        let two = T::of_f64(2.0);
        let span = T::one() + two * self.zeta;
        // Constant function, flattened on the extended domain.
        out[0] = match deriv {
            0 => T::one() / span.sqrt(),
            _ => T::zero(),
        };
        // √(2/span) normalizes the trigonometric functions to unit L² norm
        // on the (extended) domain, making the family orthonormal there.
        let amp = (two / span).sqrt();
        for idx in 1..out.len() {
            let k = (idx + 1) / 2; // frequency index
            let omega = two * T::of_usize(k) * T::pi() / span;
            let phase = omega * t;
            let is_cos = (idx + 1) % 2 == 0;
            out[idx] = amp
                * match (deriv, is_cos) {
                    (0, true) => phase.cos(),
                    (0, false) => phase.sin(),
                    (1, true) => -omega * phase.sin(),
                    (1, false) => omega * phase.cos(),
                    (2, true) => -omega * omega * phase.cos(),
                    (2, false) => -omega * omega * phase.sin(),
                    _ => unreachable!(),
                };
        }
    }

    /// Gram matrix of the deriv-th derivatives: entry (k, l) is
    /// ∫₀¹ φ_k^{(r)} φ_l^{(r)} dt with r = 0/1/2 for U/V/W.
    pub fn gram_matrix(&self, size: usize, order: GramOrder) -> DMatrix<T> {
        let deriv = order as u32;
        let mut m = DMatrix::zeros(size, size);
        for (t, w) in quad::unit_rule::<T>() {
            let v = self
                .eval_vector(t, size, deriv)
                .expect("quadrature nodes lie in [0,1]");
            m.syger(w, &v, &v, T::one());
        }
        // syger fills the lower triangle; mirror it.
        for k in 0..size {
            for l in (k + 1)..size {
                m[(k, l)] = m[(l, k)];
            }
        }
        let half = T::of_f64(0.5);
        let sym = (&m + m.transpose()) * half;
        sym
    }
}

/// Which Gram matrix: values (U), first derivatives (V), or second
/// derivatives (W).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GramOrder {
    U = 0,
    V = 1,
    W = 2,
}

/// The three Gram matrices of a basis at a common size.
#[derive(Debug, Clone)]
pub struct GramMatrices<T: Real> {
    pub u: DMatrix<T>,
    pub v: DMatrix<T>,
    pub w: DMatrix<T>,
}

impl<T: Real> GramMatrices<T> {
    pub fn new(spec: &BasisSpec<T>, size: usize) -> Self {
        Self {
            u: spec.gram_matrix(size, GramOrder::U),
            v: spec.gram_matrix(size, GramOrder::V),
            w: spec.gram_matrix(size, GramOrder::W),
        }
    }
}

/// Orthonormal shifted Legendre values/derivatives via the Bonnet recurrence
/// in u = 2t - 1; derivative recurrences P'_n = P'_{n-2} + (2n-1) P_{n-1}
/// and P''_n = P''_{n-2} + (2n-1) P'_{n-1}.
fn fill_legendre<T: Real>(t: T, deriv: u32, out: &mut [T]) {
    let q = out.len();
    let two = T::of_f64(2.0);
    let u = two * t - T::one();
    let mut p = vec![T::zero(); q];
    let mut dp = vec![T::zero(); q];
    let mut d2p = vec![T::zero(); q];
    p[0] = T::one();
    if q > 1 {
        p[1] = u;
        dp[1] = T::one();
    }
    for n in 2..q {
        let nf = T::of_usize(n);
        let c1 = (two * nf - T::one()) / nf;
        let c2 = (nf - T::one()) / nf;
        p[n] = c1 * u * p[n - 1] - c2 * p[n - 2];
        dp[n] = dp[n - 2] + (two * nf - T::one()) * p[n - 1];
        d2p[n] = d2p[n - 2] + (two * nf - T::one()) * dp[n - 1];
    }
    for k in 0..q {
        let norm = (two * T::of_usize(k) + T::one()).sqrt();
        out[k] = match deriv {
            0 => norm * p[k],
            1 => norm * two * dp[k],
            2 => norm * two * two * d2p[k],
            _ => unreachable!(),
        };
    }
}
