//! Snippet datasets: per-subject observation times and values on [0, 1],
//! CSV ingestion/emission, raw covariance products, and the Gaussian
//! process simulator (see [`scenarios`]).
//!
//! CSV format: header `subject_id,t,y`, UTF-8, one observation per row.
//! Values are written at 17 significant digits so a write/load round trip
//! is bit-identical.

pub mod scenarios;

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Real;

pub use scenarios::{fourier_cov_coefficients, simulate, CovScenario, MeanScenario, SimulationScenario};

#[derive(Debug, Error)]
pub enum SnippetError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("malformed row {row}: {message}")]
    MalformedRow { row: usize, message: String },
    #[error("time {0} outside domain [0, 1] at row {1}")]
    TimeOutsideDomain(f64, usize),
    #[error("dataset is empty")]
    Empty,
    #[error(
        "subject covariance matrix is not positive definite even after jitter escalation \
         (subject {0})"
    )]
    CholeskyFailure(usize),
}

/// One subject's snippet: sorted observation times in [0, 1] and the
/// corresponding responses.
#[derive(Debug, Clone, PartialEq)]
pub struct Subject<T: Real> {
    pub id: String,
    pub times: Vec<T>,
    pub values: Vec<T>,
}

impl<T: Real> Subject<T> {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// The entire observed sample.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SnippetDataset<T: Real> {
    pub subjects: Vec<Subject<T>>,
}

/// Weighting scheme: equal weight per observation (OBS) or per subject
/// (SUBJ).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum WeightScheme {
    Obs,
    Subj,
}

/// One raw covariance product Γ = (Y_ij − μ̂(T_ij))(Y_il − μ̂(T_il)).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawCovTriple<T: Real> {
    pub s: T,
    pub t: T,
    pub product: T,
    pub subject_index: usize,
    pub weight: T,
}

/// Raw covariance products split into off-diagonal pairs (j ≠ l) and the
/// diagonal products Γ_ijj, which are biased upward by the noise variance
/// and are used only by the covariance objective's diagonal-exclusion term.
#[derive(Debug, Clone)]
pub struct RawCovariances<T: Real> {
    pub pairs: Vec<RawCovTriple<T>>,
    pub diagonals: Vec<RawCovTriple<T>>,
}

impl<T: Real> SnippetDataset<T> {
    pub fn n_subjects(&self) -> usize {
        self.subjects.len()
    }

    pub fn n_observations(&self) -> usize {
        self.subjects.iter().map(|s| s.len()).sum()
    }

    /// Loads a dataset from a `subject_id,t,y` CSV file. Rows are grouped by
    /// subject id preserving first-appearance order; times are sorted within
    /// each subject.
    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self, SnippetError> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_path(path.as_ref())?;
        let mut order: Vec<String> = Vec::new();
        let mut groups: std::collections::HashMap<String, Vec<(f64, f64)>> =
            std::collections::HashMap::new();
        for (i, record) in reader.records().enumerate() {
            let row = i + 2; // 1-based, after the header
            let record = record?;
            if record.len() != 3 {
                return Err(SnippetError::MalformedRow {
                    row,
                    message: format!("expected 3 fields, got {}", record.len()),
                });
            }
            let id = record[0].to_string();
            let t: f64 = record[1].parse().map_err(|e| SnippetError::MalformedRow {
                row,
                message: format!("bad time value {:?}: {e}", &record[1]),
            })?;
            let y: f64 = record[2].parse().map_err(|e| SnippetError::MalformedRow {
                row,
                message: format!("bad response value {:?}: {e}", &record[2]),
            })?;
            if !(0.0..=1.0).contains(&t) {
                return Err(SnippetError::TimeOutsideDomain(t, row));
            }
            if !groups.contains_key(&id) {
                order.push(id.clone());
            }
            groups.entry(id).or_default().push((t, y));
        }
        if order.is_empty() {
            return Err(SnippetError::Empty);
        }
        let subjects = order
            .into_iter()
            .map(|id| {
                let mut obs = groups.remove(&id).unwrap();
                obs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
                Subject {
                    id,
                    times: obs.iter().map(|&(t, _)| T::of_f64(t)).collect(),
                    values: obs.iter().map(|&(_, y)| T::of_f64(y)).collect(),
                }
            })
            .collect();
        Ok(Self { subjects })
    }

    /// Writes the dataset as `subject_id,t,y` CSV with 17-significant-digit
    /// values.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<(), SnippetError> {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path.as_ref())?);
        writeln!(file, "subject_id,t,y")?;
        for subject in &self.subjects {
            for (t, y) in subject.times.iter().zip(&subject.values) {
                writeln!(file, "{},{:.16e},{:.16e}", subject.id, t.as_f64(), y.as_f64())?;
            }
        }
        Ok(())
    }

    /// Maximum within-subject absolute time difference: the plug-in estimate
    /// of the snippet width δ. Zero when every subject has one observation.
    pub fn estimate_delta(&self) -> Result<T, SnippetError> {
        if self.subjects.is_empty() {
            return Err(SnippetError::Empty);
        }
        let mut best = T::zero();
        for subject in &self.subjects {
            if let (Some(&first), Some(&last)) = (subject.times.first(), subject.times.last()) {
                // times are sorted, so the extreme pair is (first, last)
                if last - first > best {
                    best = last - first;
                }
            }
        }
        Ok(best)
    }

    /// Per-subject covariance weights w_i normalized so that
    /// Σᵢ mᵢ(mᵢ−1) wᵢ = 1 over subjects with mᵢ ≥ 2. Subjects with fewer
    /// than two observations get weight 0.
    pub fn cov_weights(&self, scheme: WeightScheme) -> Vec<T> {
        let pair_counts: Vec<f64> = self
            .subjects
            .iter()
            .map(|s| (s.len() * s.len().saturating_sub(1)) as f64)
            .collect();
        let n_pairs: f64 = pair_counts.iter().sum();
        let n_multi = pair_counts.iter().filter(|&&c| c > 0.0).count() as f64;
        pair_counts
            .iter()
            .map(|&c| {
                if c == 0.0 {
                    T::zero()
                } else {
                    match scheme {
                        WeightScheme::Obs => T::of_f64(1.0 / n_pairs),
                        WeightScheme::Subj => T::of_f64(1.0 / (n_multi * c)),
                    }
                }
            })
            .collect()
    }

    /// Per-subject mean weights v_i satisfying Σᵢ mᵢ vᵢ = 1.
    pub fn mean_weights(&self, scheme: WeightScheme) -> Vec<T> {
        let total: f64 = self.n_observations() as f64;
        let n = self.n_subjects() as f64;
        self.subjects
            .iter()
            .map(|s| match scheme {
                WeightScheme::Obs => T::of_f64(1.0 / total),
                WeightScheme::Subj => T::of_f64(1.0 / (n * s.len() as f64)),
            })
            .collect()
    }

    /// All ordered within-subject raw covariance products against the given
    /// mean function, with diagonal products Γ_ijj emitted separately.
    pub fn raw_covariances(
        &self,
        mean_fn: impl Fn(T) -> T,
        scheme: WeightScheme,
    ) -> RawCovariances<T> {
        let weights = self.cov_weights(scheme);
        let mut pairs = Vec::new();
        let mut diagonals = Vec::new();
        for (i, subject) in self.subjects.iter().enumerate() {
            if subject.len() < 2 {
                continue;
            }
            let resid: Vec<T> = subject
                .times
                .iter()
                .zip(&subject.values)
                .map(|(&t, &y)| y - mean_fn(t))
                .collect();
            for j in 0..subject.len() {
                diagonals.push(RawCovTriple {
                    s: subject.times[j],
                    t: subject.times[j],
                    product: resid[j] * resid[j],
                    subject_index: i,
                    weight: weights[i],
                });
                for l in 0..subject.len() {
                    if j == l {
                        continue;
                    }
                    pairs.push(RawCovTriple {
                        s: subject.times[j],
                        t: subject.times[l],
                        product: resid[j] * resid[l],
                        subject_index: i,
                        weight: weights[i],
                    });
                }
            }
        }
        RawCovariances { pairs, diagonals }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn toy() -> SnippetDataset<f64> {
        SnippetDataset {
            subjects: vec![
                Subject {
                    id: "a".into(),
                    times: vec![0.1, 0.3],
                    values: vec![1.0, 2.0],
                },
                Subject {
                    id: "b".into(),
                    times: vec![0.5, 0.7, 0.9],
                    values: vec![0.0, 1.0, -1.0],
                },
            ],
        }
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let data = toy();
        data.write_csv(&path).unwrap();
        let loaded = SnippetDataset::<f64>::load_csv(&path).unwrap();
        assert_eq!(data, loaded);
    }

    #[test]
    fn csv_parse_groups_and_sorts() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        std::fs::write(&path, "subject_id,t,y\na,0.3,2.0\na,0.1,1.0\nb,0.5,0.0\n").unwrap();
        let data = SnippetDataset::<f64>::load_csv(&path).unwrap();
        assert_eq!(data.n_subjects(), 2);
        assert_eq!(data.subjects[0].times, vec![0.1, 0.3]);
        assert_eq!(data.subjects[0].values, vec![1.0, 2.0]);
        assert_eq!(data.subjects[1].len(), 1);
    }

    #[test]
    fn csv_rejects_out_of_domain_time() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        std::fs::write(&path, "subject_id,t,y\na,1.5,2.0\n").unwrap();
        let err = SnippetDataset::<f64>::load_csv(&path).unwrap_err();
        assert!(matches!(err, SnippetError::TimeOutsideDomain(_, 2)));
    }

    #[test]
    fn csv_rejects_empty_and_malformed() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        std::fs::write(&path, "subject_id,t,y\n").unwrap();
        assert!(matches!(
            SnippetDataset::<f64>::load_csv(&path).unwrap_err(),
            SnippetError::Empty
        ));
        std::fs::write(&path, "subject_id,t,y\na,zzz,1.0\n").unwrap();
        assert!(matches!(
            SnippetDataset::<f64>::load_csv(&path).unwrap_err(),
            SnippetError::MalformedRow { row: 2, .. }
        ));
    }

    #[test]
    fn delta_estimate() {
        let data = SnippetDataset::<f64> {
            subjects: vec![
                Subject {
                    id: "a".into(),
                    times: vec![0.1, 0.3],
                    values: vec![0.0, 0.0],
                },
                Subject {
                    id: "b".into(),
                    times: vec![0.5, 0.9],
                    values: vec![0.0, 0.0],
                },
            ],
        };
        assert_abs_diff_eq!(data.estimate_delta().unwrap(), 0.4);
        let single = SnippetDataset::<f64> {
            subjects: vec![Subject {
                id: "a".into(),
                times: vec![0.2],
                values: vec![0.0],
            }],
        };
        assert_eq!(single.estimate_delta().unwrap(), 0.0);
        assert!(SnippetDataset::<f64>::default().estimate_delta().is_err());
    }

    #[test]
    fn raw_covariance_products() {
        let data = SnippetDataset::<f64> {
            subjects: vec![Subject {
                id: "a".into(),
                times: vec![0.1, 0.2],
                values: vec![1.0, 2.0],
            }],
        };
        let raw = data.raw_covariances(|_| 0.0, WeightScheme::Obs);
        assert_eq!(raw.pairs.len(), 2);
        assert_abs_diff_eq!(raw.pairs[0].s, 0.1);
        assert_abs_diff_eq!(raw.pairs[0].t, 0.2);
        assert_abs_diff_eq!(raw.pairs[0].product, 2.0);
        assert_abs_diff_eq!(raw.pairs[1].s, 0.2);
        assert_abs_diff_eq!(raw.pairs[1].product, 2.0);
        assert_eq!(raw.diagonals.len(), 2);
        assert_abs_diff_eq!(raw.diagonals[0].product, 1.0);
        assert_abs_diff_eq!(raw.diagonals[1].product, 4.0);
    }

    #[test]
    fn weight_normalization() {
        // two subjects with m = (2, 3): OBS weight is 1/(2 + 6) per subject
        let data = SnippetDataset::<f64> {
            subjects: vec![
                Subject {
                    id: "a".into(),
                    times: vec![0.1, 0.2],
                    values: vec![0.0; 2],
                },
                Subject {
                    id: "b".into(),
                    times: vec![0.4, 0.5, 0.6],
                    values: vec![0.0; 3],
                },
            ],
        };
        let obs = data.cov_weights(WeightScheme::Obs);
        assert_abs_diff_eq!(obs[0], 1.0 / 8.0);
        assert_abs_diff_eq!(obs[1], 1.0 / 8.0);
        for scheme in [WeightScheme::Obs, WeightScheme::Subj] {
            let w = data.cov_weights(scheme);
            let total: f64 = data
                .subjects
                .iter()
                .zip(&w)
                .map(|(s, &wi)| (s.len() * (s.len() - 1)) as f64 * wi)
                .sum();
            assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
            let v = data.mean_weights(scheme);
            let total: f64 = data
                .subjects
                .iter()
                .zip(&v)
                .map(|(s, &vi)| s.len() as f64 * vi)
                .sum();
            assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn singleton_subjects_carry_no_pairs() {
        let data = SnippetDataset::<f64> {
            subjects: vec![Subject {
                id: "a".into(),
                times: vec![0.2],
                values: vec![1.0],
            }],
        };
        let raw = data.raw_covariances(|_| 0.0, WeightScheme::Obs);
        assert!(raw.pairs.is_empty());
        assert!(raw.diagonals.is_empty());
    }
}
