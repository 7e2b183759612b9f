//! Slow, independent reference computations used to validate the fast
//! paths: adaptive quadrature for the spike-and-slab posterior moments and
//! the state-evolution expectation, a grid-search minimizer for the
//! scalar-ambiguity metric, direct linear-MMSE solves, and a plain-loop
//! state-evolution step.
//!
//! Nothing in this module shares code with the implementations it checks.

use nalgebra::{DMatrix, DVector};

fn normal_pdf(x: f64, mean: f64, variance: f64) -> f64 {
    let d = x - mean;
    (-0.5 * d * d / variance).exp() / (core::f64::consts::TAU * variance).sqrt()
}

/// Adaptive Simpson quadrature on [a, b] to absolute tolerance `tol`.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(f: &dyn Fn(f64) -> f64, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
        let m = 0.5 * (a + b);
        let fm = f(m);
        (m, fm, (b - a) / 6.0 * (fa + 4.0 * fm + fb))
    }
    fn recurse(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        m: f64,
        fm: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let (lm, flm, left) = simpson(f, a, fa, m, fm);
        let (rm, frm, right) = simpson(f, m, fm, b, fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            recurse(f, a, fa, m, fm, lm, flm, left, 0.5 * tol, depth - 1)
                + recurse(f, m, fm, b, fb, rm, frm, right, 0.5 * tol, depth - 1)
        }
    }
    let fa = f(a);
    let fb = f(b);
    let (m, fm, whole) = simpson(f, a, fa, b, fb);
    recurse(f, a, fa, b, fb, m, fm, whole, tol, 48)
}

/// Posterior mean and variance of `x` under the prior
/// `(1 − rate)·δ(x) + rate·N(active_mean, active_variance)` and the
/// observation `q = x + N(0, tau_q)`, by adaptive quadrature of the slab
/// integrals. The spike contributes a point mass at 0 handled exactly.
pub fn bg_posterior_quadrature(
    rate: f64,
    active_mean: f64,
    active_variance: f64,
    q: f64,
    tau_q: f64,
) -> (f64, f64) {
    // Integration window: the slab integrand is the product of two
    // Gaussians, i.e. an (unnormalized) Gaussian centered between them.
    let prod_var = 1.0 / (1.0 / active_variance + 1.0 / tau_q);
    let prod_mean = prod_var * (active_mean / active_variance + q / tau_q);
    let half_width = 12.0 * prod_var.sqrt();
    let (a, b) = (prod_mean - half_width, prod_mean + half_width);
    let tol = 1e-13;

    let weight = |x: f64| normal_pdf(x, active_mean, active_variance) * normal_pdf(q, x, tau_q);
    let z_slab = adaptive_simpson(&|x| weight(x), a, b, tol);
    let m1_slab = adaptive_simpson(&|x| x * weight(x), a, b, tol);
    let m2_slab = adaptive_simpson(&|x| x * x * weight(x), a, b, tol);

    let z_spike = normal_pdf(q, 0.0, tau_q);
    let z = (1.0 - rate) * z_spike + rate * z_slab;
    let m1 = rate * m1_slab / z;
    let m2 = rate * m2_slab / z;
    (m1, m2 - m1 * m1)
}

/// State-evolution expectation `E[(g(x + √τ z, τ) − x)²]` for the
/// spike-and-slab prior, by nested quadrature over the activity branches.
/// `g` is the scalar MMSE denoiser, evaluated through
/// [`crate::denoisers::denoise_scalar`], which is itself validated against
/// [`bg_posterior_quadrature`].
pub fn bg_se_mse_quadrature(rate: f64, active_mean: f64, active_variance: f64, tau: f64) -> f64 {
    use crate::denoisers::{denoise_scalar, Prior};
    let prior = Prior::BernoulliGaussian {
        rate,
        active_mean,
        active_variance,
    };
    let sqrt_tau = tau.sqrt();
    let tol = 1e-11;
    // Inactive branch: x = 0, q = √τ·z.
    let inactive = adaptive_simpson(
        &|z: f64| {
            let (g, _) = denoise_scalar(&prior, sqrt_tau * z, tau);
            g * g * normal_pdf(z, 0.0, 1.0)
        },
        -10.0,
        10.0,
        tol,
    );
    // Active branch: x ~ N(active_mean, active_variance).
    let sd = active_variance.sqrt();
    let active = adaptive_simpson(
        &|x: f64| {
            let inner = adaptive_simpson(
                &|z: f64| {
                    let (g, _) = denoise_scalar(&prior, x + sqrt_tau * z, tau);
                    (g - x) * (g - x) * normal_pdf(z, 0.0, 1.0)
                },
                -10.0,
                10.0,
                tol,
            );
            inner * normal_pdf(x, active_mean, active_variance)
        },
        active_mean - 10.0 * sd,
        active_mean + 10.0 * sd,
        1e-9,
    );
    (1.0 - rate) * inactive + rate * active
}

/// Grid search for `min_d ‖truth − d·est‖² / ‖truth‖²` over
/// `d ∈ [lo, hi]` with the given step.
pub fn grid_search_ambiguity(est: &[f64], truth: &[f64], lo: f64, hi: f64, step: f64) -> (f64, f64) {
    assert_eq!(est.len(), truth.len());
    let truth_sq: f64 = truth.iter().map(|t| t * t).sum();
    let mut best = (f64::INFINITY, lo);
    let mut d = lo;
    while d <= hi {
        let err: f64 = est
            .iter()
            .zip(truth)
            .map(|(&e, &t)| (t - d * e) * (t - d * e))
            .sum();
        if err < best.0 {
            best = (err, d);
        }
        d += step;
    }
    (best.0 / truth_sq, best.1)
}

/// Direct linear-MMSE solve for `y = A x + w`, `x ~ N(0, prior_variance·I)`,
/// `w ~ N(0, β⁻¹·I)`: solves `(β AᵀA + I/v₀) x = β Aᵀ y`.
pub fn lmmse_solve(a: &DMatrix<f64>, y: &DVector<f64>, beta: f64, prior_variance: f64) -> DVector<f64> {
    let n = a.ncols();
    let mut normal = a.transpose() * a * beta;
    for i in 0..n {
        normal[(i, i)] += 1.0 / prior_variance;
    }
    let rhs = a.transpose() * y * beta;
    normal
        .cholesky()
        .expect("normal matrix is positive definite")
        .solve(&rhs)
}

/// Plain-loop evaluation of the state-evolution step
/// `τ = N / Σ_m λ_m / (v_x λ_m + β⁻¹)`.
pub fn se_step_direct(v_x: f64, lambda: &[f64], beta_inv: f64, n: usize) -> f64 {
    let mut sum = 0.0;
    for &l in lambda {
        if l > 0.0 {
            sum += l / (v_x * l + beta_inv);
        }
    }
    n as f64 / sum
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn simpson_integrates_gaussian_to_one() {
        let v = adaptive_simpson(&|x| normal_pdf(x, 0.3, 2.0), -20.0, 20.0, 1e-13);
        assert_abs_diff_eq!(v, 1.0, epsilon = 1e-11);
    }

    #[test]
    fn quadrature_recovers_pure_gaussian_posterior() {
        // rate = 1 reduces to the conjugate Gaussian update.
        let (m, v) = bg_posterior_quadrature(1.0, 0.0, 1.0, 2.0, 1.0);
        assert_abs_diff_eq!(m, 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(v, 0.5, epsilon = 1e-10);
    }
}
