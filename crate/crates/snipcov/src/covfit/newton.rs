//! Geometric Newton iteration for the covariance fit: eigen-clipped
//! initialization from the unconstrained quadratic minimizer, damped Newton
//! steps in the tangent space, the family constraint check, and tuning
//! selection against the pilot surface.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::design::{precompute_design, CovDesign};
use super::manifold::{CholeskyPoint, LowerTriCoords};
use super::objective::{gradient, hessian, objective};
use super::{CovFit, CovFitError, Diagnostics, TerminationReason};
use crate::basis::BasisSpec;
use crate::mean::solve_spd_with_ridge;
use crate::pilot::PilotEstimate;
use crate::scalar::Real;
use crate::snippets::{SnippetDataset, WeightScheme};

/// Options for the Newton iteration.
#[derive(Debug, Clone, Copy)]
pub struct NewtonOptions<T: Real> {
    /// Iteration cap K.
    pub max_iter: usize,
    /// Gradient tolerance, relative to max(1, ‖F(L₀)‖_F).
    pub tol: T,
    /// Family bound on sup |γ|.
    pub m1: T,
    /// Family bound on sup ‖∇γ‖₂.
    pub m2: T,
    /// Damping escalations before falling back to a gradient step.
    pub max_damping: usize,
    /// Backtracking halvings for the gradient fallback.
    pub max_halvings: usize,
}

impl<T: Real> Default for NewtonOptions<T> {
    fn default() -> Self {
        Self {
            max_iter: 50,
            tol: T::of_f64(1e-6),
            m1: T::of_f64(100.0),
            m2: T::of_f64(100.0),
            max_damping: 12,
            max_halvings: 30,
        }
    }
}

/// Closed-form minimizer of Q over symmetric C (no definiteness or family
/// constraint), eigen-repaired to a manifold point: nonpositive eigenvalues
/// are replaced by 0.01 × the largest singular value.
pub fn init_point<T: Real>(design: &CovDesign<T>, lambda: T) -> Result<CholeskyPoint<T>, CovFitError> {
    let p = design.p;
    let coords = LowerTriCoords::new(p);
    let d = coords.dim();

    // feature vector of a pair (x, y): f_α = xᵀ S_α y for the symmetric
    // basis matrices S_α (E_kk on the diagonal, E_kl + E_lk off it)
    let feature = |x: &DVector<T>, y: &DVector<T>| -> DVector<T> {
        DVector::from_iterator(
            d,
            coords.entries.iter().map(|&(tau, nu)| {
                if tau == nu {
                    x[tau] * y[tau]
                } else {
                    x[tau] * y[nu] + x[nu] * y[tau]
                }
            }),
        )
    };

    let mut normal = DMatrix::<T>::zeros(d, d);
    let mut rhs = DVector::<T>::zeros(d);
    for subject in &design.subjects {
        let m = subject.b.nrows();
        let rows: Vec<DVector<T>> = (0..m).map(|j| subject.b.row(j).transpose()).collect();
        for j in 0..m {
            for l in 0..m {
                if j == l {
                    continue;
                }
                let f = feature(&rows[j], &rows[l]);
                normal.syger(subject.weight, &f, &f, T::one());
                rhs.axpy(subject.weight * subject.r[(j, l)], &f, T::one());
            }
        }
    }
    for a in 0..d {
        for b in (a + 1)..d {
            normal[(a, b)] = normal[(b, a)];
        }
    }

    // penalty Hessian over the symmetric coordinates
    let sym_basis: Vec<DMatrix<T>> = coords
        .entries
        .iter()
        .map(|&(tau, nu)| {
            let mut s = DMatrix::zeros(p, p);
            s[(tau, nu)] = T::one();
            s[(nu, tau)] = T::one();
            if tau == nu {
                s[(tau, nu)] = T::one();
            }
            s
        })
        .collect();
    let g = &design.grams;
    let half = T::of_f64(0.5);
    for a in 0..d {
        let ua_w = &g.u * &sym_basis[a] * &g.w;
        let va_v = &g.v * &sym_basis[a] * &g.v;
        for b in 0..d {
            let m_ab = half
                * ((&ua_w * &sym_basis[b]).trace() + (&g.u * &sym_basis[b] * &g.w * &sym_basis[a]).trace())
                + (&va_v * &sym_basis[b]).trace();
            normal[(a, b)] += lambda * m_ab;
        }
    }

    let coeffs =
        solve_spd_with_ridge(normal, &rhs).ok_or(CovFitError::SingularInit { p })?;
    let mut c = DMatrix::<T>::zeros(p, p);
    for (i, &(tau, nu)) in coords.entries.iter().enumerate() {
        c[(tau, nu)] = coeffs[i];
        c[(nu, tau)] = coeffs[i];
    }
    cholesky_of_repaired(c)
}

/// Eigen-clips a symmetric matrix to positive definiteness and returns its
/// Cholesky factor.
pub(crate) fn cholesky_of_repaired<T: Real>(c: DMatrix<T>) -> Result<CholeskyPoint<T>, CovFitError> {
    let p = c.nrows();
    let eig = c.clone().symmetric_eigen();
    let largest_sv = eig.eigenvalues.amax();
    let floor = T::of_f64(0.01) * largest_sv;
    let needs_repair = eig.eigenvalues.iter().any(|&v| v <= T::zero());
    let repaired = if needs_repair {
        let mut vals = eig.eigenvalues.clone();
        for v in vals.iter_mut() {
            if *v <= T::zero() {
                *v = floor;
            }
        }
        &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose()
    } else {
        c
    };
    // borderline spectra can still defeat the factorization; escalate a
    // relative jitter a few times
    let scale = T::one() + repaired.diagonal().amax();
    let mut jitter = T::zero();
    for _ in 0..8 {
        let mut m = repaired.clone();
        for j in 0..p {
            m[(j, j)] += jitter * scale;
        }
        if let Some(chol) = m.cholesky() {
            return CholeskyPoint::new(chol.l()).map_err(|_| CovFitError::InitNotPositive);
        }
        jitter = if jitter == T::zero() {
            T::of_f64(1e-12)
        } else {
            jitter * T::of_f64(10.0)
        };
    }
    Err(CovFitError::InitNotPositive)
}

/// Checks membership in the constraint family on a 101×101 grid:
/// sup |γ_C| ≤ M₁ and sup ‖∇γ_C‖₂ ≤ M₂, both from analytic derivatives.
pub fn family_check<T: Real>(c: &DMatrix<T>, spec: &BasisSpec<T>, m1: T, m2: T) -> bool {
    let p = c.nrows();
    let grid: Vec<T> = (0..101).map(|i| T::of_usize(i) / T::of_f64(100.0)).collect();
    let phi0 = spec.eval_matrix(&grid, p, 0).expect("grid points in domain");
    let phi1 = spec.eval_matrix(&grid, p, 1).expect("grid points in domain");
    let values = &phi0 * c * phi0.transpose();
    let ds = &phi1 * c * phi0.transpose();
    // ∂γ/∂t at (s, t) equals ∂γ/∂s at (t, s) for symmetric C, so reuse ds
    for j in 0..101 {
        for l in 0..101 {
            if values[(j, l)].abs() > m1 {
                return false;
            }
            let grad_sq = ds[(j, l)] * ds[(j, l)] + ds[(l, j)] * ds[(l, j)];
            if grad_sq.sqrt() > m2 {
                return false;
            }
        }
    }
    true
}

/// Runs the damped geometric Newton iteration from the eigen-clipped
/// initializer.
pub fn newton_fit<T: Real>(
    design: &CovDesign<T>,
    lambda: T,
    opts: &NewtonOptions<T>,
) -> Result<CovFit<T>, CovFitError> {
    assert!(opts.max_iter >= 1 && opts.tol > T::zero());
    let coords = LowerTriCoords::new(design.p);
    let mut point = init_point(design, lambda)?;
    if !family_check(&point.covariance(), &design.spec, opts.m1, opts.m2) {
        // shrink toward zero until the initializer is feasible
        let mut shrink = T::of_f64(0.5);
        let mut feasible = None;
        for _ in 0..60 {
            let scaled = CholeskyPoint::new(point.matrix() * shrink)
                .expect("scaling preserves the manifold");
            if family_check(&scaled.covariance(), &design.spec, opts.m1, opts.m2) {
                feasible = Some(scaled);
                break;
            }
            shrink *= T::of_f64(0.5);
        }
        point = feasible.ok_or(CovFitError::InfeasibleInit)?;
    }
    let mut q = objective(&point, design, lambda);
    let f0 = gradient(&point, design, lambda);
    let tol = opts.tol * T::one().max(f0.norm());

    let mut iterations = 0;
    let mut grad_norm = f0.norm();
    let mut reason = TerminationReason::MaxIterations;

    for k in 0..opts.max_iter {
        iterations = k;
        let f = gradient(&point, design, lambda);
        grad_norm = f.norm();
        if grad_norm <= tol {
            reason = TerminationReason::Converged;
            break;
        }
        let h = hessian(&point, design, lambda);
        let f_vec = coords.to_vector(&f);

        match take_step(&point, design, lambda, q, &h, &f_vec, &coords, opts) {
            StepOutcome::Accepted(next, q_next) => {
                point = next;
                q = q_next;
            }
            StepOutcome::FamilyBoundary(best) => {
                if let Some((next, q_next)) = best {
                    point = next;
                    q = q_next;
                }
                reason = TerminationReason::FamilyViolation;
                break;
            }
            StepOutcome::Stalled => {
                reason = TerminationReason::Stalled;
                break;
            }
        }
    }
    if reason == TerminationReason::MaxIterations {
        iterations = opts.max_iter;
        grad_norm = gradient(&point, design, lambda).norm();
        if grad_norm <= tol {
            reason = TerminationReason::Converged;
        }
    }

    let c = point.covariance();
    let half = T::of_f64(0.5);
    let c = (&c + c.transpose()) * half;
    Ok(CovFit {
        spec: design.spec,
        c,
        p: design.p,
        lambda,
        diagnostics: Diagnostics {
            iterations,
            final_gradient_norm: grad_norm.as_f64(),
            final_objective: q.as_f64(),
            termination: reason,
        },
    })
}

enum StepOutcome<T: Real> {
    Accepted(CholeskyPoint<T>, T),
    /// The candidate left the constraint family; carries the last feasible
    /// descent iterate found by halving, if any.
    FamilyBoundary(Option<(CholeskyPoint<T>, T)>),
    Stalled,
}

/// Candidate acceptance: a step must decrease Q; a family violation first
/// triggers halving, and only then boundary termination.
#[allow(clippy::too_many_arguments)]
fn take_step<T: Real>(
    point: &CholeskyPoint<T>,
    design: &CovDesign<T>,
    lambda: T,
    q: T,
    h: &DMatrix<T>,
    f_vec: &DVector<T>,
    coords: &LowerTriCoords,
    opts: &NewtonOptions<T>,
) -> StepOutcome<T> {
    let d = coords.dim();
    let rhs = -f_vec;
    let h_scale = h.norm();

    let evaluate = |eta: &DMatrix<T>| -> (CholeskyPoint<T>, T, bool) {
        let candidate = point.exp_map(eta);
        let feasible = family_check(&candidate.covariance(), &design.spec, opts.m1, opts.m2);
        let q_next = objective(&candidate, design, lambda);
        (candidate, q_next, feasible)
    };

    let try_direction = |eta: DMatrix<T>| -> Option<StepOutcome<T>> {
        let (candidate, q_next, feasible) = evaluate(&eta);
        if feasible && q_next <= q && q_next.is_finite() {
            return Some(StepOutcome::Accepted(candidate, q_next));
        }
        if !feasible {
            // halve toward the current iterate to recover feasible progress
            let mut scale = T::of_f64(0.5);
            for _ in 0..opts.max_halvings {
                let (cand, qn, ok) = evaluate(&(&eta * scale));
                if ok {
                    if qn <= q && qn.is_finite() {
                        return Some(StepOutcome::Accepted(cand, qn));
                    }
                    // feasible but not descending: give damping a chance
                    return None;
                }
                scale *= T::of_f64(0.5);
            }
            return Some(StepOutcome::FamilyBoundary(None));
        }
        None
    };

    // undamped Newton, then escalating Tikhonov damping
    let mut tau = T::zero();
    for attempt in 0..=opts.max_damping {
        let mut system = h.clone();
        for i in 0..d {
            system[(i, i)] += tau;
        }
        if let Some(chol) = system.cholesky() {
            let eta_vec = chol.solve(&rhs);
            let eta = coords.to_matrix(&eta_vec);
            if let Some(outcome) = try_direction(eta) {
                return outcome;
            }
        }
        tau = if attempt == 0 {
            T::of_f64(1e-8) * h_scale.max(T::one())
        } else {
            tau * T::of_f64(10.0)
        };
    }

    // gradient fallback with backtracking
    let mut step = T::one() / h_scale.max(T::one());
    for _ in 0..opts.max_halvings {
        let eta = coords.to_matrix(&(-f_vec * step));
        let (candidate, q_next, feasible) = evaluate(&eta);
        if feasible && q_next < q && q_next.is_finite() {
            return StepOutcome::Accepted(candidate, q_next);
        }
        step *= T::of_f64(0.5);
    }
    StepOutcome::Stalled
}

/// Result of the (p, λ) search against the pilot surface.
#[derive(Debug, Clone)]
pub struct CovTuningSelection<T: Real> {
    pub p: usize,
    pub lambda: T,
    /// Band error per grid point, in grid order; failed fits carry +∞.
    pub table: Vec<(usize, T, T)>,
    pub fit: CovFit<T>,
}

/// Default p grid under automatic selection.
pub fn default_p_grid() -> Vec<usize> {
    vec![3, 5, 7, 9, 11]
}

/// Default λ grid: 10⁻⁵ … 10⁻¹.
pub fn default_lambda_grid<T: Real>() -> Vec<T> {
    (-5..=-1).map(|e| T::of_f64(10f64.powi(e))).collect()
}

/// Selects (p, λ) by minimizing the squared deviation from the pilot
/// surface over the band grid pairs |t_j − t_l| ≤ δ̂. Ties break toward the
/// smaller p, then the smaller λ.
pub fn select_cov_tuning<T: Real>(
    dataset: &SnippetDataset<T>,
    mean_fn: impl Fn(T) -> T + Sync,
    spec: &BasisSpec<T>,
    p_grid: &[usize],
    lambda_grid: &[T],
    pilot: &PilotEstimate<T>,
    scheme: WeightScheme,
    opts: &NewtonOptions<T>,
) -> Result<CovTuningSelection<T>, CovFitError> {
    if p_grid.is_empty() || lambda_grid.is_empty() {
        return Err(CovFitError::EmptyGrid);
    }
    let mut sorted_p = p_grid.to_vec();
    sorted_p.sort_unstable();
    let mut sorted_lambda = lambda_grid.to_vec();
    sorted_lambda.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let mut table: Vec<(usize, T, T)> = Vec::new();
    let mut best: Option<(usize, T, T, CovFit<T>)> = None;
    let mut last_error: Option<CovFitError> = None;

    for &p in &sorted_p {
        let design = match precompute_design(dataset, &mean_fn, spec, p, scheme) {
            Ok(design) => design,
            Err(err) => {
                for &lambda in &sorted_lambda {
                    table.push((p, lambda, T::of_f64(f64::INFINITY)));
                }
                last_error = Some(err);
                continue;
            }
        };
        let results: Vec<(T, Result<(CovFit<T>, T), CovFitError>)> = sorted_lambda
            .par_iter()
            .map(|&lambda| {
                let outcome = newton_fit(&design, lambda, opts).map(|fit| {
                    let err = band_error(&fit, pilot);
                    (fit, err)
                });
                (lambda, outcome)
            })
            .collect();
        for (lambda, outcome) in results {
            match outcome {
                Ok((fit, err)) => {
                    table.push((p, lambda, err));
                    let better = match &best {
                        None => true,
                        Some((_, _, best_err, _)) => err < *best_err,
                    };
                    if better {
                        best = Some((p, lambda, err, fit));
                    }
                }
                Err(err) => {
                    table.push((p, lambda, T::of_f64(f64::INFINITY)));
                    last_error = Some(err);
                }
            }
        }
    }

    match best {
        Some((p, lambda, _, fit)) => Ok(CovTuningSelection {
            p,
            lambda,
            table,
            fit,
        }),
        None => Err(last_error.unwrap_or(CovFitError::EmptyGrid)),
    }
}

/// Σ over defined band pairs of (γ̌ − γ̂)².
pub fn band_error<T: Real>(fit: &CovFit<T>, pilot: &PilotEstimate<T>) -> T {
    let mut total = T::zero();
    for (s, t, pilot_value) in pilot.band_entries() {
        let fitted = fit.eval(s, t).expect("pilot grid lies in the domain");
        let r = pilot_value - fitted;
        total += r * r;
    }
    total
}
