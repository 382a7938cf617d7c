//! The covariance objective over Cholesky factors, its analytic gradient,
//! and the Hessian of Q ∘ Exp_L in lower-triangular coordinates.
//!
//! Q(L) = Σᵢ wᵢ { ‖Rᵢ − BᵢLLᵀBᵢᵀ‖²_F − Σⱼ (Γ_ijj − b_ij LLᵀ b_ijᵀ)² }
//!        + λ { tr(CUCW) + tr(CVCV) },   C = LLᵀ,
//!
//! where the subtracted sum implements the j ≠ l restriction of the
//! pairwise loss. The Hessian is the Euclidean second derivative of Q in
//! the lower-triangular entries plus the curvature of the exponential map,
//! which at S = 0 contributes F_ττ / L_ττ on each diagonal coordinate.

use nalgebra::DMatrix;

use super::design::CovDesign;
use super::manifold::{project_lower, CholeskyPoint, LowerTriCoords};
use crate::scalar::Real;

/// Q(L): weighted data fidelity plus λ times the roughness penalty.
pub fn objective<T: Real>(point: &CholeskyPoint<T>, design: &CovDesign<T>, lambda: T) -> T {
    let c = point.covariance();
    let mut data = T::zero();
    for subject in &design.subjects {
        let fitted = &subject.b * &c * subject.b.transpose();
        let diff = &subject.r - &fitted;
        let mut sq = T::zero();
        for v in diff.iter() {
            sq += *v * *v;
        }
        let mut diag_sq = T::zero();
        for j in 0..subject.diag.len() {
            let d = subject.diag[j] - fitted[(j, j)];
            diag_sq += d * d;
        }
        data += subject.weight * (sq - diag_sq);
    }
    data + lambda * penalty(&c, design)
}

/// tr(CUCW) + tr(CVCV), the matrix form of the integrated second-derivative
/// penalty J(γ_C).
pub fn penalty<T: Real>(c: &DMatrix<T>, design: &CovDesign<T>) -> T {
    let g = &design.grams;
    (c * &g.u * c * &g.w).trace() + (c * &g.v * c * &g.v).trace()
}

/// Riemannian gradient F(L): the Euclidean gradient of Q in the
/// lower-triangular entries (tangent representation at S = 0).
pub fn gradient<T: Real>(point: &CholeskyPoint<T>, design: &CovDesign<T>, lambda: T) -> DMatrix<T> {
    let l = point.matrix();
    let p = design.p;
    let four = T::of_f64(4.0);
    let mut grad = &design.weighted_rb * l * (-four);
    for subject in &design.subjects {
        let bl = &subject.b * l; // mᵢ×p
        let m = bl.nrows();
        // trace term: +4 w Bᵀ (BL LᵀBᵀ) BL
        let mm = &bl * bl.transpose();
        grad += subject.b.transpose() * (&mm * &bl) * (four * subject.weight);
        // diagonal-exclusion term: +4 w Σⱼ (Γ_ijj − ‖p_j‖²) b_jᵀ p_j
        for j in 0..m {
            let pj = bl.row(j);
            let coef = four * subject.weight * (subject.diag[j] - pj.dot(&pj));
            grad += subject.b.row(j).transpose() * pj * coef;
        }
    }
    // penalty: 2λ(UCW + WCU)L + 4λ VCVL
    let c = point.covariance();
    let g = &design.grams;
    let two = T::of_f64(2.0);
    grad += (&g.u * &c * &g.w + &g.w * &c * &g.u) * l * (two * lambda);
    grad += &g.v * &c * &g.v * l * (four * lambda);
    let mut grad = grad;
    project_lower(&mut grad);
    debug_assert_eq!(grad.nrows(), p);
    grad
}

/// Hessian of Ψ(S) = Q(Exp_L S) at S = 0 over lower-triangular coordinates.
pub fn hessian<T: Real>(
    point: &CholeskyPoint<T>,
    design: &CovDesign<T>,
    lambda: T,
) -> DMatrix<T> {
    let coords = LowerTriCoords::new(design.p);
    let d = coords.dim();
    let l = point.matrix();
    let grad = gradient(point, design, lambda);
    let mut h = DMatrix::<T>::zeros(d, d);
    for (beta, &(tau, nu)) in coords.entries.iter().enumerate() {
        let mut direction = DMatrix::<T>::zeros(design.p, design.p);
        direction[(tau, nu)] = T::one();
        let mut df = gradient_directional(l, design, lambda, &direction);
        project_lower(&mut df);
        let col = coords.to_vector(&df);
        h.column_mut(beta).copy_from(&col);
    }
    // curvature of the diagonal exponential update: at S = 0 the second
    // derivative of X_ττ in s_ττ is 1/L_ττ, multiplying the gradient entry
    for (alpha, &(tau, nu)) in coords.entries.iter().enumerate() {
        if tau == nu {
            h[(alpha, alpha)] += grad[(tau, tau)] / l[(tau, tau)];
        }
    }
    let half = T::of_f64(0.5);
    (&h + h.transpose()) * half
}

/// Directional derivative of the Euclidean gradient of Q at L along E.
fn gradient_directional<T: Real>(
    l: &DMatrix<T>,
    design: &CovDesign<T>,
    lambda: T,
    e: &DMatrix<T>,
) -> DMatrix<T> {
    let four = T::of_f64(4.0);
    let two = T::of_f64(2.0);
    let mut df = &design.weighted_rb * e * (-four);
    for subject in &design.subjects {
        let bl = &subject.b * l;
        let be = &subject.b * e;
        let m = bl.nrows();
        // d[Bᵀ(BL LᵀBᵀ)BL] = Bᵀ(BE LᵀBᵀ + BL EᵀBᵀ)BL + Bᵀ(BL LᵀBᵀ)BE
        let mm = &bl * bl.transpose();
        let dmm = &be * bl.transpose() + &bl * be.transpose();
        df += subject.b.transpose() * (&dmm * &bl + &mm * &be) * (four * subject.weight);
        for j in 0..m {
            let pj = bl.row(j);
            let ej = be.row(j);
            let coef = subject.diag[j] - pj.dot(&pj);
            let dcoef = -two * pj.dot(&ej);
            df += subject.b.row(j).transpose()
                * (ej * coef + pj * dcoef)
                * (four * subject.weight);
        }
    }
    let g = &design.grams;
    let c = l * l.transpose();
    let dc = e * l.transpose() + l * e.transpose();
    df += (&g.u * &dc * &g.w + &g.w * &dc * &g.u) * l * (two * lambda);
    df += (&g.u * &c * &g.w + &g.w * &c * &g.u) * e * (two * lambda);
    df += &g.v * &dc * &g.v * l * (four * lambda);
    df += &g.v * &c * &g.v * e * (four * lambda);
    df
}

#[cfg(test)]
mod tests {
    use super::super::design::precompute_design;
    use super::*;
    use crate::basis::{BasisKind, BasisSpec};
    use crate::quad;
    use crate::snippets::{SnippetDataset, Subject, WeightScheme};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn fourier() -> BasisSpec<f64> {
        BasisSpec::new(BasisKind::Fourier, 0.0).unwrap()
    }

    pub(crate) fn random_dataset(
        n: usize,
        m: usize,
        rng: &mut impl Rng,
    ) -> SnippetDataset<f64> {
        let subjects = (0..n)
            .map(|i| {
                let mut times: Vec<f64> = (0..m).map(|_| rng.gen()).collect();
                times.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let values = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
                Subject {
                    id: format!("s{i}"),
                    times,
                    values,
                }
            })
            .collect();
        SnippetDataset { subjects }
    }

    pub(crate) fn random_point(p: usize, rng: &mut impl Rng) -> CholeskyPoint<f64> {
        let mut l = DMatrix::zeros(p, p);
        for j in 0..p {
            for k in 0..j {
                l[(j, k)] = rng.gen_range(-1.0..1.0);
            }
            l[(j, j)] = rng.gen_range(0.3..2.0);
        }
        CholeskyPoint::new(l).unwrap()
    }

    /// Brute-force pairwise objective:
    /// Σᵢ wᵢ Σ_{j≠l} (Γ_ijl − γ_C(T_ij, T_il))² + λ J(γ_C) by quadrature.
    fn pairwise_objective(
        data: &SnippetDataset<f64>,
        point: &CholeskyPoint<f64>,
        spec: &BasisSpec<f64>,
        p: usize,
        lambda: f64,
    ) -> f64 {
        let c = point.covariance();
        let gamma = |s: f64, t: f64| {
            let ps = spec.eval_vector(s, p, 0).unwrap();
            let pt = spec.eval_vector(t, p, 0).unwrap();
            (ps.transpose() * &c * pt)[(0, 0)]
        };
        let weights = data.cov_weights(WeightScheme::Obs);
        let mut total = 0.0;
        for (subject, &w) in data.subjects.iter().zip(&weights) {
            for j in 0..subject.len() {
                for l in 0..subject.len() {
                    if j == l {
                        continue;
                    }
                    let g = subject.values[j] * subject.values[l];
                    let r = g - gamma(subject.times[j], subject.times[l]);
                    total += w * r * r;
                }
            }
        }
        // J by iterated quadrature on the analytic second partials
        let second = |s: f64, t: f64, ds: u32, dt: u32| {
            let ps = spec.eval_vector(s, p, ds).unwrap();
            let pt = spec.eval_vector(t, p, dt).unwrap();
            (ps.transpose() * &c * pt)[(0, 0)]
        };
        let j_pen = quad::integrate_01(|s| {
            quad::integrate_01(|t| {
                let dss = second(s, t, 2, 0);
                let dst = second(s, t, 1, 1);
                let dtt = second(s, t, 0, 2);
                0.5 * (dss * dss + 2.0 * dst * dst + dtt * dtt)
            })
        });
        total + lambda * j_pen
    }

    #[test]
    fn objective_matches_pairwise_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..5 {
            let p = rng.gen_range(1..=3);
            let data = random_dataset(3, 3, &mut rng);
            let spec = fourier();
            let design =
                precompute_design(&data, |_| 0.0, &spec, p, WeightScheme::Obs).unwrap();
            let point = random_point(p, &mut rng);
            let lambda = 0.01;
            let fast = objective(&point, &design, lambda);
            let slow = pairwise_objective(&data, &point, &spec, p, lambda);
            assert_abs_diff_eq!(fast, slow, epsilon = 1e-10 * (1.0 + slow.abs()));
        }
    }

    #[test]
    fn penalty_matches_integral_form() {
        // tr(CUCW) + tr(CVCV) equals the quadrature value of J(γ_C)
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for p in [2usize, 4, 6] {
            let spec = fourier();
            let data = random_dataset(2, 2, &mut rng);
            let design =
                precompute_design(&data, |_| 0.0, &spec, p, WeightScheme::Obs).unwrap();
            let point = random_point(p, &mut rng);
            let c = point.covariance();
            let trace_form = penalty(&c, &design);
            let integral = pairwise_objective(&data, &point, &spec, p, 1.0)
                - pairwise_objective(&data, &point, &spec, p, 0.0);
            assert!(
                (trace_form - integral).abs() <= 1e-6 * (1.0 + integral.abs()),
                "p={p}: trace {trace_form} vs integral {integral}"
            );
        }
    }

    #[test]
    fn zero_data_zero_objective() {
        let data = SnippetDataset::<f64> {
            subjects: vec![Subject {
                id: "a".into(),
                times: vec![0.2, 0.7],
                values: vec![0.0, 0.0],
            }],
        };
        let design =
            precompute_design(&data, |_| 0.0, &fourier(), 2, WeightScheme::Obs).unwrap();
        let tiny = CholeskyPoint::new(DMatrix::from_diagonal_element(2, 2, 1e-9)).unwrap();
        assert!(objective(&tiny, &design, 0.0).abs() < 1e-30);
    }

    #[test]
    fn exact_model_attains_zero() {
        // noise-free data from γ = ΦᵀCΦ gives Q = 0 at the true factor
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = 3;
        let point = random_point(p, &mut rng);
        let c = point.covariance();
        let spec = fourier();
        // one subject per time pair, values chosen so Γ_jl = γ(T_j, T_l):
        // use rank-1 realizations X(t) = z·g(t) with g from the first
        // eigenvector, E z² = eigenvalue... simpler: set responses so the
        // product matches via a deterministic square root at two points.
        // Directly verify the trace form instead on residual zero:
        let times = vec![0.15, 0.6];
        let phi: Vec<_> = times
            .iter()
            .map(|&t| spec.eval_vector(t, p, 0).unwrap())
            .collect();
        let gamma01 = (phi[0].transpose() * &c * &phi[1])[(0, 0)];
        let gamma00 = (phi[0].transpose() * &c * &phi[0])[(0, 0)];
        let gamma11 = (phi[1].transpose() * &c * &phi[1])[(0, 0)];
        // construct residual pair (a, b) with a² = γ00, b = γ01/a ⇒ ab = γ01
        let a = gamma00.sqrt();
        let b = gamma01 / a;
        let data = SnippetDataset::<f64> {
            subjects: vec![Subject {
                id: "x".into(),
                times,
                values: vec![a, b],
            }],
        };
        let design = precompute_design(&data, |_| 0.0, &spec, p, WeightScheme::Obs).unwrap();
        // off-diagonal residuals vanish; diagonal mismatch (b² vs γ11) is
        // excluded by the diagonal-subtraction term except the (1,1) entry
        // enters the trace term and is subtracted again. Q must equal 0 at
        // the exact off-diagonal fit when b² = γ11 as well; here we only
        // check Q ≥ 0 shape and the off-diagonal zero case:
        let q = objective(&point, &design, 0.0);
        let expected = 0.0; // both off-diagonal residuals are exactly zero
        let _ = (gamma11, b);
        assert_abs_diff_eq!(q, expected, epsilon = 1e-18);
    }

    #[test]
    fn gradient_matches_finite_differences_through_exp() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let eps = 1e-6;
        for _ in 0..8 {
            let p = rng.gen_range(1..=3);
            let n = if rng.gen_bool(0.5) { 2 } else { 5 };
            let m = rng.gen_range(2..=3);
            let data = random_dataset(n, m, &mut rng);
            let design =
                precompute_design(&data, |_| 0.0, &fourier(), p, WeightScheme::Obs).unwrap();
            let point = random_point(p, &mut rng);
            let lambda = 0.05;
            let grad = gradient(&point, &design, lambda);
            let coords = LowerTriCoords::new(p);
            let mut scale: f64 = 1.0;
            for &(t, n_) in &coords.entries {
                scale = scale.max(grad[(t, n_)].abs());
            }
            for &(tau, nu) in &coords.entries {
                let mut dir = DMatrix::<f64>::zeros(p, p);
                dir[(tau, nu)] = eps;
                let plus = objective(&point.exp_map(&dir), &design, lambda);
                dir[(tau, nu)] = -eps;
                let minus = objective(&point.exp_map(&dir), &design, lambda);
                let fd = (plus - minus) / (2.0 * eps);
                assert!(
                    (fd - grad[(tau, nu)]).abs() <= 1e-6 * scale.max(1.0),
                    "p={p} ({tau},{nu}): fd={fd} grad={}",
                    grad[(tau, nu)]
                );
            }
        }
    }

    #[test]
    fn penalty_only_gradient_matches_finite_differences() {
        // λ-only check: a design with zero responses removes the data terms
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = 3;
        let data = SnippetDataset::<f64> {
            subjects: vec![Subject {
                id: "a".into(),
                times: vec![0.2, 0.5, 0.8],
                values: vec![0.0, 0.0, 0.0],
            }],
        };
        let design =
            precompute_design(&data, |_| 0.0, &fourier(), p, WeightScheme::Obs).unwrap();
        let point = random_point(p, &mut rng);
        // zero-response data still contributes quadratic terms in C through
        // the fitted values; isolate the penalty by differencing λ
        let g1 = gradient(&point, &design, 1.0);
        let g0 = gradient(&point, &design, 0.0);
        let pen_grad = g1 - g0;
        let eps = 1e-6;
        let coords = LowerTriCoords::new(p);
        for &(tau, nu) in &coords.entries {
            let mut dir = DMatrix::<f64>::zeros(p, p);
            dir[(tau, nu)] = eps;
            let cp = point.exp_map(&dir).covariance();
            dir[(tau, nu)] = -eps;
            let cm = point.exp_map(&dir).covariance();
            let fd = (penalty(&cp, &design) - penalty(&cm, &design)) / (2.0 * eps);
            assert!(
                (fd - pen_grad[(tau, nu)]).abs() <= 1e-5 * (1.0 + fd.abs()),
                "({tau},{nu}): fd={fd} grad={}",
                pen_grad[(tau, nu)]
            );
        }
    }

    #[test]
    fn hessian_matches_finite_differences_of_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let eps = 1e-5;
        for _ in 0..6 {
            let p = rng.gen_range(1..=3);
            let data = random_dataset(3, 3, &mut rng);
            let design =
                precompute_design(&data, |_| 0.0, &fourier(), p, WeightScheme::Obs).unwrap();
            let point = random_point(p, &mut rng);
            let lambda = 0.02;
            let coords = LowerTriCoords::new(p);
            let hess = hessian(&point, &design, lambda);
            assert_eq!(hess, hess.transpose());
            // FD of the gradient of Ψ(S) = Q(Exp_L S) at 0
            let psi_grad = |s: &DMatrix<f64>| -> DMatrix<f64> {
                // gradient of Ψ at S: by the chain rule through Exp; compute
                // by central differences of Ψ itself for full independence
                let mut g = DMatrix::<f64>::zeros(p, p);
                for &(tau, nu) in &coords.entries {
                    let mut sp = s.clone();
                    sp[(tau, nu)] += eps;
                    let mut sm = s.clone();
                    sm[(tau, nu)] -= eps;
                    let qp = objective(&point.exp_map(&sp), &design, lambda);
                    let qm = objective(&point.exp_map(&sm), &design, lambda);
                    g[(tau, nu)] = (qp - qm) / (2.0 * eps);
                }
                g
            };
            let mut scale: f64 = 1.0;
            for v in hess.iter() {
                scale = scale.max(v.abs());
            }
            for (beta, &(tau, nu)) in coords.entries.iter().enumerate() {
                let mut sp = DMatrix::<f64>::zeros(p, p);
                sp[(tau, nu)] = eps;
                let mut sm = DMatrix::<f64>::zeros(p, p);
                sm[(tau, nu)] = -eps;
                let gp = psi_grad(&sp);
                let gm = psi_grad(&sm);
                for (alpha, &(t2, n2)) in coords.entries.iter().enumerate() {
                    let fd = (gp[(t2, n2)] - gm[(t2, n2)]) / (2.0 * eps);
                    assert!(
                        (fd - hess[(alpha, beta)]).abs() <= 1e-4 * scale,
                        "p={p} H[{alpha},{beta}]: fd={fd} hess={}",
                        hess[(alpha, beta)]
                    );
                }
            }
        }
    }

    #[test]
    fn scalar_penalty_hessian_matches_scalar_oracle() {
        // p = 1, pure penalty: Hessian equals d²/ds² penalty(ℓ e^{s/ℓ}) at 0
        let data = SnippetDataset::<f64> {
            subjects: vec![Subject {
                id: "a".into(),
                times: vec![0.3, 0.6],
                values: vec![0.0, 0.0],
            }],
        };
        let design =
            precompute_design(&data, |_| 0.0, &fourier(), 1, WeightScheme::Obs).unwrap();
        let l0 = 1.3;
        let point = CholeskyPoint::new(DMatrix::from_element(1, 1, l0)).unwrap();
        // isolate penalty: subtract the λ=0 Hessian
        let h1 = hessian(&point, &design, 1.0)[(0, 0)];
        let h0 = hessian(&point, &design, 0.0)[(0, 0)];
        let pen_scalar = |l: f64| {
            let c = DMatrix::from_element(1, 1, l * l);
            penalty(&c, &design)
        };
        let eps = 1e-5;
        let f = |s: f64| pen_scalar(l0 * (s / l0).exp());
        let oracle = (f(eps) - 2.0 * f(0.0) + f(-eps)) / (eps * eps);
        assert!(
            ((h1 - h0) - oracle).abs() <= 1e-4 * (1.0 + oracle.abs()),
            "hessian {} oracle {oracle}",
            h1 - h0
        );
    }
}
