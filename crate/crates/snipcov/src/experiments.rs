//! Monte Carlo harness: simulate snippet data, run the full estimation
//! pipeline (mean by cross-validated penalized least squares; covariance by
//! pilot-tuned geometric Newton), and accumulate MISE across replicates for
//! each (scenario, n, δ, basis-variant) cell.

use std::fs::File;
use std::io::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::basis::{BasisKind, BasisSpec};
use crate::covfit::{select_cov_tuning, NewtonOptions};
use crate::mean::{cv_select_mean, default_q_grid, default_rho_grid, fit_mean};
use crate::pilot::{auto_bandwidth, pilot_covariance, DEFAULT_GRID_SIZE};
use crate::snippets::{simulate, CovScenario, MeanScenario, SimulationScenario, WeightScheme};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("cell {cell}: {failed} of {total} replicates failed (over 20%); last error: {last}")]
    TooManyFailures {
        cell: String,
        failed: usize,
        total: usize,
        last: String,
    },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("config parse error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Which function is being estimated and scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Mean,
    Covariance,
}

/// Basis variant: Fourier extension with ζ = 0.1, or the plain (non-extended)
/// Fourier basis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BasisVariant {
    Fe,
    Nfe,
}

impl BasisVariant {
    pub fn spec(self) -> BasisSpec<f64> {
        match self {
            BasisVariant::Fe => BasisSpec::new(BasisKind::FourierExtension, 0.1).unwrap(),
            BasisVariant::Nfe => BasisSpec::new(BasisKind::Fourier, 0.0).unwrap(),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            BasisVariant::Fe => "fe",
            BasisVariant::Nfe => "nfe",
        }
    }
}

fn default_replicates() -> usize {
    20
}
fn default_snr() -> f64 {
    4.0
}
fn default_mise_grid() -> usize {
    201
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    /// Mean scenario. Covariance experiments fix the mean to μ1.
    #[serde(default = "default_mean")]
    pub mean: MeanScenario,
    /// Covariance scenario. Mean experiments fix the covariance to γ1.
    #[serde(default = "default_cov")]
    pub covariance: CovScenario,
    pub ns: Vec<usize>,
    pub deltas: Vec<f64>,
    pub variants: Vec<BasisVariant>,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    pub master_seed: u64,
    #[serde(default = "default_snr")]
    pub snr: f64,
    #[serde(default = "default_mise_grid")]
    pub mise_grid: usize,
}

fn default_mean() -> MeanScenario {
    MeanScenario::Mu1
}
fn default_cov() -> CovScenario {
    CovScenario::Gamma1
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.replicates == 0 {
            return Err(ExperimentError::Invalid("replicates must be ≥ 1".into()));
        }
        if self.ns.is_empty() || self.deltas.is_empty() || self.variants.is_empty() {
            return Err(ExperimentError::Invalid(
                "ns, deltas, and variants must be nonempty".into(),
            ));
        }
        if self.mise_grid < 2 {
            return Err(ExperimentError::Invalid("mise_grid must be ≥ 2".into()));
        }
        for &d in &self.deltas {
            if !(0.0 < d && d < 1.0) {
                return Err(ExperimentError::Invalid(format!(
                    "delta must lie in (0, 1), got {d}"
                )));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let config: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        config.validate()?;
        Ok(config)
    }

    fn scenario_label(&self) -> &'static str {
        match self.kind {
            ExperimentKind::Mean => match self.mean {
                MeanScenario::Mu1 => "mu1",
                MeanScenario::Mu2 => "mu2",
            },
            ExperimentKind::Covariance => match self.covariance {
                CovScenario::Gamma1 => "gamma1",
                CovScenario::Gamma2 => "gamma2",
                CovScenario::Gamma3 => "gamma3",
                CovScenario::Gamma4 => "gamma4",
            },
        }
    }
}

/// Aggregated result of one table cell.
#[derive(Debug, Clone)]
pub struct MiseResult {
    pub scenario: String,
    pub n: usize,
    pub delta: f64,
    pub variant: BasisVariant,
    /// Mean MISE over successful replicates (natural scale, no ×10).
    pub mise: f64,
    /// Monte Carlo standard deviation over successful replicates.
    pub sd: f64,
    /// Per-replicate MISE values; failures carry `None`.
    pub per_replicate: Vec<Option<f64>>,
    pub n_fail: usize,
}

impl MiseResult {
    /// Standard error of the mean MISE.
    pub fn se(&self) -> f64 {
        let n = (self.per_replicate.len() - self.n_fail) as f64;
        if n > 0.0 {
            self.sd / n.sqrt()
        } else {
            f64::NAN
        }
    }

    pub fn median(&self) -> f64 {
        let mut vals: Vec<f64> = self.per_replicate.iter().flatten().copied().collect();
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let m = vals.len();
        if m == 0 {
            return f64::NAN;
        }
        if m % 2 == 1 {
            vals[m / 2]
        } else {
            0.5 * (vals[m / 2 - 1] + vals[m / 2])
        }
    }
}

/// Trapezoid-rule ∫ (μ̂ − μ)² on an equally spaced grid.
pub fn mise_mean(
    estimate: impl Fn(f64) -> f64,
    truth: impl Fn(f64) -> f64,
    grid_size: usize,
) -> f64 {
    assert!(grid_size >= 2, "grid_size must be at least 2");
    let h = 1.0 / (grid_size - 1) as f64;
    let mut total = 0.0;
    for i in 0..grid_size {
        let t = i as f64 * h;
        let e = estimate(t) - truth(t);
        let w = if i == 0 || i == grid_size - 1 { 0.5 } else { 1.0 };
        total += w * e * e;
    }
    total * h
}

/// Trapezoid-rule ∬ (γ̂ − γ)² on the grid product.
pub fn mise_cov(
    estimate: impl Fn(f64, f64) -> f64,
    truth: impl Fn(f64, f64) -> f64,
    grid_size: usize,
) -> f64 {
    assert!(grid_size >= 2, "grid_size must be at least 2");
    let h = 1.0 / (grid_size - 1) as f64;
    let mut total = 0.0;
    for i in 0..grid_size {
        let s = i as f64 * h;
        let wi = if i == 0 || i == grid_size - 1 { 0.5 } else { 1.0 };
        for j in 0..grid_size {
            let t = j as f64 * h;
            let wj = if j == 0 || j == grid_size - 1 { 0.5 } else { 1.0 };
            let e = estimate(s, t) - truth(s, t);
            total += wi * wj * e * e;
        }
    }
    total * h * h
}

/// Per-replicate seed: a fixed-multiplier mix of the master seed and the
/// replicate index so replicates are independent streams but shared across
/// cells with the same index.
fn replicate_seed(master: u64, replicate: usize) -> u64 {
    master
        .wrapping_mul(0x9e37_79b9_7f4a_7c15)
        .wrapping_add(replicate as u64 + 1)
}

/// One replicate of a mean experiment: simulate, auto-tune by CV, score.
fn mean_replicate(
    scenario: &SimulationScenario,
    variant: BasisVariant,
    mise_grid: usize,
    seed: u64,
) -> Result<f64, String> {
    let data = simulate(scenario, seed).map_err(|e| e.to_string())?;
    let spec = variant.spec();
    let selection = cv_select_mean(
        &data,
        &spec,
        &default_q_grid(),
        &default_rho_grid(),
        5,
        WeightScheme::Obs,
        seed,
    )
    .map_err(|e| e.to_string())?;
    let fit = fit_mean(&data, &spec, selection.q, selection.rho, WeightScheme::Obs)
        .map_err(|e| e.to_string())?;
    let truth = scenario.mean;
    Ok(mise_mean(
        |t| fit.eval(t).unwrap_or(f64::NAN),
        |t| truth.eval(t),
        mise_grid,
    ))
}

/// One replicate of a covariance experiment: simulate, estimate the mean by
/// CV, smooth the pilot, tune (p, λ) against it, score the selected fit.
fn cov_replicate(
    scenario: &SimulationScenario,
    variant: BasisVariant,
    mise_grid: usize,
    seed: u64,
) -> Result<f64, String> {
    let data = simulate(scenario, seed).map_err(|e| e.to_string())?;
    let spec = variant.spec();
    let selection = cv_select_mean(
        &data,
        &spec,
        &default_q_grid(),
        &default_rho_grid(),
        5,
        WeightScheme::Obs,
        seed,
    )
    .map_err(|e| e.to_string())?;
    let mean_fit = fit_mean(&data, &spec, selection.q, selection.rho, WeightScheme::Obs)
        .map_err(|e| e.to_string())?;
    let mean_fn = |t: f64| mean_fit.eval(t).unwrap_or(f64::NAN);

    let raw = data.raw_covariances(&mean_fn, WeightScheme::Obs);
    let delta_hat = data.estimate_delta().map_err(|e| e.to_string())?;
    let pilot = pilot_covariance(
        &raw.pairs,
        DEFAULT_GRID_SIZE,
        Some(auto_bandwidth(delta_hat)),
        delta_hat,
    )
    .map_err(|e| e.to_string())?;

    let tuning = select_cov_tuning(
        &data,
        &mean_fn,
        &spec,
        &crate::covfit::default_p_grid(),
        &crate::covfit::default_lambda_grid(),
        &pilot,
        WeightScheme::Obs,
        &NewtonOptions::default(),
    )
    .map_err(|e| e.to_string())?;

    let truth = scenario.covariance;
    Ok(mise_cov(
        |s, t| tuning.fit.eval(s, t).unwrap_or(f64::NAN),
        |s, t| truth.eval(s, t),
        mise_grid,
    ))
}

/// Runs every cell of the configured experiment. Cells are deterministic in
/// the master seed; replicates run in parallel.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<MiseResult>, ExperimentError> {
    config.validate()?;
    let mut results = Vec::new();
    for &n in &config.ns {
        for &delta in &config.deltas {
            for &variant in &config.variants {
                results.push(run_cell(config, n, delta, variant)?);
            }
        }
    }
    Ok(results)
}

fn run_cell(
    config: &ExperimentConfig,
    n: usize,
    delta: f64,
    variant: BasisVariant,
) -> Result<MiseResult, ExperimentError> {
    let (mean_scenario, cov_scenario) = match config.kind {
        // the other component is held fixed at its benchmark setting
        ExperimentKind::Mean => (config.mean, CovScenario::Gamma1),
        ExperimentKind::Covariance => (MeanScenario::Mu1, config.covariance),
    };
    let mut scenario = SimulationScenario::new(mean_scenario, cov_scenario, delta, n);
    scenario.snr = config.snr;

    let outcomes: Vec<Result<f64, String>> = (0..config.replicates)
        .into_par_iter()
        .map(|r| {
            let seed = replicate_seed(config.master_seed, r);
            match config.kind {
                ExperimentKind::Mean => mean_replicate(&scenario, variant, config.mise_grid, seed),
                ExperimentKind::Covariance => {
                    cov_replicate(&scenario, variant, config.mise_grid, seed)
                }
            }
        })
        .collect();

    let cell = format!(
        "{}/n={}/delta={}/{}",
        config.scenario_label(),
        n,
        delta,
        variant.label()
    );
    let mut per_replicate = Vec::with_capacity(config.replicates);
    let mut last_error = String::new();
    let mut n_fail = 0usize;
    for outcome in outcomes {
        match outcome {
            Ok(v) => per_replicate.push(Some(v)),
            Err(e) => {
                per_replicate.push(None);
                n_fail += 1;
                last_error = e;
            }
        }
    }
    if 5 * n_fail > config.replicates {
        return Err(ExperimentError::TooManyFailures {
            cell,
            failed: n_fail,
            total: config.replicates,
            last: last_error,
        });
    }

    let values: Vec<f64> = per_replicate.iter().flatten().copied().collect();
    let count = values.len() as f64;
    let mise = values.iter().sum::<f64>() / count;
    let sd = if values.len() > 1 {
        (values.iter().map(|v| (v - mise) * (v - mise)).sum::<f64>() / (count - 1.0)).sqrt()
    } else {
        0.0
    };

    Ok(MiseResult {
        scenario: config.scenario_label().to_string(),
        n,
        delta,
        variant,
        mise,
        sd,
        per_replicate,
        n_fail,
    })
}

/// Writes the summary table CSV: one row per cell.
pub fn write_summary_csv(results: &[MiseResult], path: &Path) -> Result<(), ExperimentError> {
    let mut file = File::create(path)?;
    writeln!(file, "scenario,n,delta,variant,mise,se,n_fail")?;
    for r in results {
        writeln!(
            file,
            "{},{},{},{},{:.16e},{:.16e},{}",
            r.scenario,
            r.n,
            r.delta,
            r.variant.label(),
            r.mise,
            r.se(),
            r.n_fail
        )?;
    }
    Ok(())
}

/// Writes the per-replicate CSV: one row per (cell, replicate).
pub fn write_replicates_csv(results: &[MiseResult], path: &Path) -> Result<(), ExperimentError> {
    let mut file = File::create(path)?;
    writeln!(file, "scenario,n,delta,variant,replicate,mise,failed")?;
    for r in results {
        for (idx, value) in r.per_replicate.iter().enumerate() {
            match value {
                Some(v) => writeln!(
                    file,
                    "{},{},{},{},{},{:.16e},0",
                    r.scenario,
                    r.n,
                    r.delta,
                    r.variant.label(),
                    idx,
                    v
                )?,
                None => writeln!(
                    file,
                    "{},{},{},{},{},,1",
                    r.scenario,
                    r.n,
                    r.delta,
                    r.variant.label(),
                    idx
                )?,
            }
        }
    }
    Ok(())
}
