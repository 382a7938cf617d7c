//! Local-linear smoothing of raw covariance products on the diagonal band
//! |s − t| ≤ δ̂, producing the pilot surface used only for covariance
//! tuning-parameter selection.
//!
//! At each band grid pair a weighted plane Γ ≈ β₀ + β₁(s − t_j) + β₂(t − t_l)
//! is fitted under product Epanechnikov weights; β₀ is the pilot value.
//! Diagonal products Γ_ijj are never fed in here: they are biased upward by
//! the noise variance.

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use thiserror::Error;

use crate::scalar::Real;
use crate::snippets::RawCovTriple;

#[derive(Debug, Error)]
pub enum PilotError {
    #[error("no raw covariance pairs to smooth")]
    EmptyTriples,
    #[error("zero kernel mass at band point ({0}, {1}) even after two bandwidth doublings")]
    ZeroKernelMass(f64, f64),
    #[error("grid size must be at least 2, got {0}")]
    GridTooSmall(usize),
}

/// Pilot covariance surface: defined only on the band
/// {(j, l): |t_j − t_l| ≤ δ̂} of a G×G grid, symmetric where defined.
#[derive(Debug, Clone)]
pub struct PilotEstimate<T: Real> {
    pub grid: Vec<T>,
    values: Vec<Option<T>>,
    pub bandwidth: T,
    pub delta_hat: T,
}

impl<T: Real> PilotEstimate<T> {
    pub fn grid_size(&self) -> usize {
        self.grid.len()
    }

    /// The smoothed value at grid pair (j, l); `None` off the band.
    pub fn value(&self, j: usize, l: usize) -> Option<T> {
        self.values[j * self.grid.len() + l]
    }

    /// Iterates over defined band entries as (t_j, t_l, value).
    pub fn band_entries(&self) -> impl Iterator<Item = (T, T, T)> + '_ {
        let g = self.grid.len();
        (0..g).flat_map(move |j| {
            (0..g).filter_map(move |l| self.value(j, l).map(|v| (self.grid[j], self.grid[l], v)))
        })
    }
}

/// Default pilot grid resolution.
pub const DEFAULT_GRID_SIZE: usize = 51;

/// Default bandwidth rule: δ̂ / 3.
pub fn auto_bandwidth<T: Real>(delta_hat: T) -> T {
    delta_hat / T::of_f64(3.0)
}

/// Smooths off-diagonal raw covariance products on the band grid.
///
/// Band points with fewer than 6 effective neighbors fall back to a
/// Nadaraya–Watson average with doubled bandwidth; a point with zero kernel
/// mass after two doublings is an error.
pub fn pilot_covariance<T: Real>(
    triples: &[RawCovTriple<T>],
    grid_size: usize,
    bandwidth: Option<T>,
    delta_hat: T,
) -> Result<PilotEstimate<T>, PilotError> {
    if triples.is_empty() {
        return Err(PilotError::EmptyTriples);
    }
    if grid_size < 2 {
        return Err(PilotError::GridTooSmall(grid_size));
    }
    let h = bandwidth.unwrap_or_else(|| auto_bandwidth(delta_hat));
    assert!(h > T::zero(), "bandwidth must be positive");
    let grid: Vec<T> = (0..grid_size)
        .map(|i| T::of_usize(i) / T::of_usize(grid_size - 1))
        .collect();

    let raw: Vec<Option<T>> = (0..grid_size * grid_size)
        .into_par_iter()
        .map(|idx| {
            let (j, l) = (idx / grid_size, idx % grid_size);
            let (tj, tl) = (grid[j], grid[l]);
            if (tj - tl).abs() > delta_hat {
                return Ok(None);
            }
            fit_at(triples, tj, tl, h).map(Some)
        })
        .collect::<Result<_, PilotError>>()?;

    // Average the (j, l) and (l, j) fits.
    let mut values = raw.clone();
    let half = T::of_f64(0.5);
    for j in 0..grid_size {
        for l in 0..grid_size {
            if let (Some(a), Some(b)) = (raw[j * grid_size + l], raw[l * grid_size + j]) {
                values[j * grid_size + l] = Some(half * (a + b));
            }
        }
    }

    Ok(PilotEstimate {
        grid,
        values,
        bandwidth: h,
        delta_hat,
    })
}

fn epanechnikov<T: Real>(u: T) -> T {
    if u.abs() <= T::one() {
        T::of_f64(0.75) * (T::one() - u * u)
    } else {
        T::zero()
    }
}

fn fit_at<T: Real>(triples: &[RawCovTriple<T>], tj: T, tl: T, h: T) -> Result<T, PilotError> {
    // Local-linear fit; kernel weights include the subject weights.
    let mut moment = Matrix3::<T>::zeros();
    let mut rhs = Vector3::<T>::zeros();
    let mut effective = 0usize;
    for triple in triples {
        let kernel =
            epanechnikov((triple.s - tj) / h) * epanechnikov((triple.t - tl) / h) * triple.weight;
        if kernel <= T::zero() {
            continue;
        }
        effective += 1;
        let ds = triple.s - tj;
        let dt = triple.t - tl;
        let x = Vector3::new(T::one(), ds, dt);
        moment += x * x.transpose() * kernel;
        rhs += x * (kernel * triple.product);
    }
    if effective >= 6 {
        // Tiny 3x3 system; fall through to NW if it is numerically singular
        // (e.g. all neighbors at one design point).
        if let Some(beta) = moment.lu().solve(&rhs) {
            if beta.iter().all(|b| b.is_finite()) && moment.determinant().abs() > T::of_f64(1e-300)
            {
                return Ok(beta[0]);
            }
        }
    }
    // Nadaraya-Watson fallback with doubled bandwidth, twice.
    for factor in [2.0, 4.0] {
        let hh = h * T::of_f64(factor);
        let mut mass = T::zero();
        let mut acc = T::zero();
        for triple in triples {
            let kernel = epanechnikov((triple.s - tj) / hh)
                * epanechnikov((triple.t - tl) / hh)
                * triple.weight;
            mass += kernel;
            acc += kernel * triple.product;
        }
        if mass > T::zero() {
            return Ok(acc / mass);
        }
    }
    Err(PilotError::ZeroKernelMass(tj.as_f64(), tl.as_f64()))
}
