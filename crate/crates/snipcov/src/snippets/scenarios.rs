//! Simulation scenarios: the two mean functions and four covariance
//! functions of the benchmark design, the matching noise level, and the
//! Gaussian-process snippet simulator.
//!
//! Subjects are simulated independently: reference time R ~ U[δ/2, 1−δ/2],
//! m = 2 + Poisson(3) observation times i.i.d. U[R−δ/2, R+δ/2], responses
//! jointly Gaussian with the scenario mean/covariance plus i.i.d. N(0, σ²)
//! noise, where σ² is set from the signal-to-noise ratio.
//!
//! Each subject draws from its own RNG stream derived from
//! (seed, subject index), so simulation is deterministic and
//! order-independent under parallelism.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{SnippetDataset, SnippetError, Subject};
use crate::quad;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeanScenario {
    Mu1,
    Mu2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovScenario {
    Gamma1,
    Gamma2,
    Gamma3,
    Gamma4,
}

impl MeanScenario {
    /// μ1(t) = Σ_{k=1}^9 (−1)^k 1.2^{−k} φ_k(t) with the amplitude-one
    /// trigonometric functions of the benchmark design (see
    /// [`scenario_fourier`]); μ2(t) = 2t.
    pub fn eval(self, t: f64) -> f64 {
        match self {
            MeanScenario::Mu1 => (1..=9)
                .map(|k: i32| {
                    let sign = if k % 2 == 1 { -1.0 } else { 1.0 };
                    sign * 1.2f64.powi(-k) * scenario_fourier(k as usize, t)
                })
                .sum(),
            MeanScenario::Mu2 => 2.0 * t,
        }
    }
}

/// The benchmark design's trigonometric system: φ₁ = 1, φ₂ₖ = cos(2kπt),
/// φ₂ₖ₊₁ = sin(2kπt) with amplitude one (1-based k). These span the same
/// space as the orthonormal estimation basis — cos(2kπt) is √2·φ̃₂ₖ/√2 — but
/// carry the amplitude the benchmark formulas are written with, so scenario
/// magnitudes match the published design rather than the orthonormal
/// rescaling.
fn scenario_fourier(k: usize, t: f64) -> f64 {
    if k == 1 {
        1.0
    } else if k % 2 == 0 {
        let freq = (k / 2) as f64;
        (2.0 * freq * std::f64::consts::PI * t).cos()
    } else {
        let freq = (k / 2) as f64;
        (2.0 * freq * std::f64::consts::PI * t).sin()
    }
}

/// Coefficient matrix of the Fourier-rank covariance scenarios:
/// c_kl = 2^{−|k−l|−5/2} off the diagonal and 1.5^{1−k} on it (1-based).
pub fn fourier_cov_coefficients(size: usize) -> DMatrix<f64> {
    DMatrix::from_fn(size, size, |i, j| {
        if i == j {
            1.5f64.powi(-(i as i32))
        } else {
            2.0f64.powf(-((i as f64 - j as f64).abs() + 2.5))
        }
    })
}

impl CovScenario {
    pub fn eval(self, s: f64, t: f64) -> f64 {
        match self {
            CovScenario::Gamma1 => fourier_rank_cov(s, t, 5),
            CovScenario::Gamma2 => {
                let corr = (-(s - t) * (s - t)).exp();
                (variance_profile(s) * variance_profile(t) / 2.0).sqrt() * corr
            }
            CovScenario::Gamma3 => fourier_rank_cov(s, t, 30),
            CovScenario::Gamma4 => 0.4 * bimodal_density(s) * bimodal_density(t),
        }
    }

    /// σ² such that E‖X−μ‖² / σ² equals the given signal-to-noise ratio,
    /// with E‖X−μ‖² = ∫ γ(t,t) dt.
    pub fn noise_variance(self, snr: f64) -> f64 {
        assert!(snr > 0.0, "signal-to-noise ratio must be positive");
        quad::integrate_01(|t| self.eval(t, t)) / snr
    }
}

fn fourier_rank_cov(s: f64, t: f64, size: usize) -> f64 {
    let c = psd_cov_coefficients(size);
    let ps = DMatrix::from_fn(size, 1, |k, _| scenario_fourier(k + 1, s));
    let pt = DMatrix::from_fn(size, 1, |k, _| scenario_fourier(k + 1, t));
    (ps.transpose() * c * pt)[(0, 0)]
}

/// The coefficient matrix projected onto the PSD cone. At size 5 the matrix
/// is already positive definite and the projection is the identity; at size
/// 30 the banded construction has eigenvalues down to ≈ −0.117 and would not
/// be a covariance without clipping them to zero. Cached per size.
fn psd_cov_coefficients(size: usize) -> &'static DMatrix<f64> {
    use std::collections::HashMap;
    use std::sync::OnceLock;
    static CACHE: OnceLock<HashMap<usize, DMatrix<f64>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| {
        let mut map = HashMap::new();
        for size in [5usize, 30] {
            let mut eig = fourier_cov_coefficients(size).symmetric_eigen();
            for v in eig.eigenvalues.iter_mut() {
                *v = v.max(0.0);
            }
            map.insert(size, eig.recompose());
        }
        map
    });
    cache.get(&size).expect("unsupported scenario size")
}

/// v(t) = {1 + ∫₀ᵗ (1 + ⌊4.5x⌋) dx} / √2, with the floor integral in
/// closed form over the breakpoints k/4.5.
pub fn variance_profile(t: f64) -> f64 {
    (1.0 + t + floor_integral(t, 4.5)) / 2.0f64.sqrt()
}

/// ∫₀ᵗ ⌊cx⌋ dx, exact.
fn floor_integral(t: f64, c: f64) -> f64 {
    let k = (c * t).floor();
    (k * (k - 1.0) / 2.0) / c + k * (t - k / c)
}

fn bimodal_density(t: f64) -> f64 {
    0.3 * normal_pdf(t, 0.3, 0.05) + 0.7 * normal_pdf(t, 0.7, 0.05)
}

fn normal_pdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    (-0.5 * z * z).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt())
}

/// Full description of one simulated design.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationScenario {
    pub mean: MeanScenario,
    pub covariance: CovScenario,
    /// Snippet width δ ∈ (0, 1).
    pub delta: f64,
    /// Number of subjects.
    pub n: usize,
    /// Signal-to-noise ratio; the benchmark design uses 4.
    pub snr: f64,
}

impl SimulationScenario {
    pub fn new(mean: MeanScenario, covariance: CovScenario, delta: f64, n: usize) -> Self {
        Self {
            mean,
            covariance,
            delta,
            n,
            snr: 4.0,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(0.0 < self.delta && self.delta < 1.0) {
            return Err(format!("delta must lie in (0, 1), got {}", self.delta));
        }
        if self.n == 0 {
            return Err("n must be at least 1".into());
        }
        if self.snr <= 0.0 {
            return Err(format!("snr must be positive, got {}", self.snr));
        }
        Ok(())
    }
}

/// Simulates a snippet dataset. Deterministic given the seed; subjects use
/// independent RNG streams so the result does not depend on scheduling.
pub fn simulate(scenario: &SimulationScenario, seed: u64) -> Result<SnippetDataset<f64>, SnippetError> {
    scenario
        .validate()
        .unwrap_or_else(|msg| panic!("invalid scenario: {msg}"));
    let sigma2 = scenario.covariance.noise_variance(scenario.snr);
    let subjects: Result<Vec<Subject<f64>>, SnippetError> = (0..scenario.n)
        .into_par_iter()
        .map(|i| simulate_subject(scenario, sigma2, seed, i))
        .collect();
    Ok(SnippetDataset { subjects: subjects? })
}

fn simulate_subject(
    scenario: &SimulationScenario,
    sigma2: f64,
    seed: u64,
    index: usize,
) -> Result<Subject<f64>, SnippetError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    let delta = scenario.delta;
    let reference: f64 = rng.gen_range(delta / 2.0..=1.0 - delta / 2.0);
    let m = 2 + Poisson::new(3.0).unwrap().sample(&mut rng) as usize;
    let mut times: Vec<f64> = (0..m)
        .map(|_| rng.gen_range(reference - delta / 2.0..=reference + delta / 2.0))
        .collect();
    times.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let cov = DMatrix::from_fn(m, m, |j, k| scenario.covariance.eval(times[j], times[k]));
    let chol = cholesky_with_jitter(cov, index)?;
    let z: Vec<f64> = (0..m).map(|_| StandardNormal.sample(&mut rng)).collect();
    let x = chol * DMatrix::from_column_slice(m, 1, &z);
    let sigma = sigma2.sqrt();
    let values: Vec<f64> = (0..m)
        .map(|j| {
            let noise: f64 = StandardNormal.sample(&mut rng);
            scenario.mean.eval(times[j]) + x[(j, 0)] + sigma * noise
        })
        .collect();
    Ok(Subject {
        id: format!("s{index:05}"),
        times,
        values,
    })
}

/// Cholesky with escalating diagonal jitter from 1e−10·(1 + max diagonal)
/// up to 1e−6; rank-deficient scenario kernels (γ4) need this.
fn cholesky_with_jitter(cov: DMatrix<f64>, subject: usize) -> Result<DMatrix<f64>, SnippetError> {
    let max_diag = cov.diagonal().amax();
    let mut jitter = 1e-10;
    while jitter <= 1e-6 {
        let mut jittered = cov.clone();
        for j in 0..jittered.nrows() {
            jittered[(j, j)] += jitter * (1.0 + max_diag);
        }
        if let Some(chol) = jittered.cholesky() {
            return Ok(chol.l());
        }
        jitter *= 10.0;
    }
    Err(SnippetError::CholeskyFailure(subject))
}
