//! Scalar MMSE denoisers under the pseudo-observation model `q = x + ϖ`,
//! ϖ ~ N(0, τ_q).
//!
//! Each prior yields a closed-form posterior mean and variance per element.
//! The derivative of the posterior mean with respect to `q` satisfies
//! `τ_q · g'(q, τ_q) = Var[x | q]`, which is how [`denoise_derivative`] is
//! computed.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::seeding;

/// Prior on a scalar signal entry.
#[derive(Clone, Debug, PartialEq)]
pub enum Prior {
    /// N(mean, variance), variance > 0.
    Gaussian { mean: f64, variance: f64 },
    /// (1 − rate)·δ(x) + rate·N(active_mean, active_variance).
    BernoulliGaussian {
        rate: f64,
        active_mean: f64,
        active_variance: f64,
    },
    /// Flat prior: the posterior is the pseudo-observation itself.
    NonInformative,
    /// A known value; posterior mean = value, variance = 0, for any input.
    Pinned(f64),
}

impl Prior {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Prior::Gaussian { variance, .. } => {
                if !(variance > 0.0) || !variance.is_finite() {
                    return Err(Error::Domain(format!(
                        "Gaussian prior variance must be positive and finite, got {variance}"
                    )));
                }
            }
            Prior::BernoulliGaussian {
                rate,
                active_variance,
                ..
            } => {
                if !(0.0..=1.0).contains(&rate) {
                    return Err(Error::Domain(format!(
                        "Bernoulli-Gaussian rate must lie in [0, 1], got {rate}"
                    )));
                }
                if !(active_variance > 0.0) || !active_variance.is_finite() {
                    return Err(Error::Domain(format!(
                        "Bernoulli-Gaussian active variance must be positive and finite, got {active_variance}"
                    )));
                }
            }
            Prior::NonInformative | Prior::Pinned(_) => {}
        }
        Ok(())
    }

    /// Prior mean. Errors for the non-informative prior.
    pub fn mean(&self) -> Result<f64> {
        match *self {
            Prior::Gaussian { mean, .. } => Ok(mean),
            Prior::BernoulliGaussian {
                rate, active_mean, ..
            } => Ok(rate * active_mean),
            Prior::Pinned(v) => Ok(v),
            Prior::NonInformative => Err(Error::Domain(
                "non-informative prior has no mean".into(),
            )),
        }
    }

    /// Prior second moment E[x²]. Errors for the non-informative prior.
    pub fn second_moment(&self) -> Result<f64> {
        match *self {
            Prior::Gaussian { mean, variance } => Ok(variance + mean * mean),
            Prior::BernoulliGaussian {
                rate,
                active_mean,
                active_variance,
            } => Ok(rate * (active_variance + active_mean * active_mean)),
            Prior::Pinned(v) => Ok(v * v),
            Prior::NonInformative => Err(Error::Domain(
                "non-informative prior has no second moment".into(),
            )),
        }
    }

    /// Prior variance. Errors for the non-informative prior.
    pub fn variance(&self) -> Result<f64> {
        let m = self.mean()?;
        Ok(self.second_moment()? - m * m)
    }

    /// Draws one sample. Errors for the non-informative prior.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<f64> {
        match *self {
            Prior::Gaussian { mean, variance } => {
                let z: f64 = StandardNormal.sample(rng);
                Ok(mean + variance.sqrt() * z)
            }
            Prior::BernoulliGaussian {
                rate,
                active_mean,
                active_variance,
            } => {
                if rng.random::<f64>() < rate {
                    let z: f64 = StandardNormal.sample(rng);
                    Ok(active_mean + active_variance.sqrt() * z)
                } else {
                    Ok(0.0)
                }
            }
            Prior::Pinned(v) => Ok(v),
            Prior::NonInformative => Err(Error::Domain(
                "cannot sample the non-informative prior".into(),
            )),
        }
    }
}

/// Pseudo-noise variance: one value for all elements, or one per element.
#[derive(Clone, Copy, Debug)]
pub enum TauQ<'a> {
    Scalar(f64),
    PerElement(&'a DVector<f64>),
}

impl TauQ<'_> {
    fn get(&self, i: usize) -> f64 {
        match self {
            TauQ::Scalar(t) => *t,
            TauQ::PerElement(v) => v[i],
        }
    }

    fn validate(&self, len: usize, pinned: bool) -> Result<()> {
        // The pinned posterior ignores the pseudo-observation entirely.
        if pinned {
            return Ok(());
        }
        let check = |t: f64| -> Result<()> {
            if !(t > 0.0) || !t.is_finite() {
                Err(Error::Domain(format!(
                    "pseudo-noise variance must be positive and finite, got {t}"
                )))
            } else {
                Ok(())
            }
        };
        match self {
            TauQ::Scalar(t) => check(*t),
            TauQ::PerElement(v) => {
                if v.len() != len {
                    return Err(Error::Dimension(format!(
                        "tau_q has length {}, expected {}",
                        v.len(),
                        len
                    )));
                }
                v.iter().try_for_each(|&t| check(t))
            }
        }
    }
}

/// Per-element posterior mean and variance.
#[derive(Clone, Debug)]
pub struct PosteriorMoments {
    pub mean: DVector<f64>,
    pub variance: DVector<f64>,
}

fn logistic(l: f64) -> f64 {
    if l >= 0.0 {
        1.0 / (1.0 + (-l).exp())
    } else {
        let e = l.exp();
        e / (1.0 + e)
    }
}

fn ln_normal_pdf(x: f64, mean: f64, variance: f64) -> f64 {
    let d = x - mean;
    -0.5 * (d * d / variance + variance.ln() + core::f64::consts::TAU.ln())
}

/// Posterior mean and variance of one element.
///
/// The prior must already be validated and `tau_q > 0` (except for
/// `Pinned`, which ignores it).
pub fn denoise_scalar(prior: &Prior, q: f64, tau_q: f64) -> (f64, f64) {
    match *prior {
        Prior::Gaussian { mean, variance } => {
            let denom = variance + tau_q;
            ((variance * q + tau_q * mean) / denom, variance * tau_q / denom)
        }
        Prior::NonInformative => (q, tau_q),
        Prior::Pinned(v) => (v, 0.0),
        Prior::BernoulliGaussian {
            rate,
            active_mean,
            active_variance,
        } => {
            if rate == 0.0 {
                return (0.0, 0.0);
            }
            // Slab posterior given activity.
            let denom = active_variance + tau_q;
            let slab_mean = (active_variance * q + tau_q * active_mean) / denom;
            let slab_var = active_variance * tau_q / denom;
            if rate == 1.0 {
                return (slab_mean, slab_var);
            }
            // Activation log-odds in the log domain; the naive likelihood
            // ratio overflows for |q|²/τ_q large.
            let log_odds = rate.ln() - (-rate).ln_1p()
                + ln_normal_pdf(q, active_mean, denom)
                - ln_normal_pdf(q, 0.0, tau_q);
            let pi = logistic(log_odds);
            let mean = pi * slab_mean;
            let variance = pi * (slab_var + slab_mean * slab_mean) - mean * mean;
            (mean, variance.max(0.0))
        }
    }
}

/// Per-element posterior moments of `x` given `q = x + N(0, tau_q)`.
pub fn denoise(prior: &Prior, q: &DVector<f64>, tau_q: TauQ) -> Result<PosteriorMoments> {
    prior.validate()?;
    tau_q.validate(q.len(), matches!(prior, Prior::Pinned(_)))?;
    let mut mean = DVector::zeros(q.len());
    let mut variance = DVector::zeros(q.len());
    for i in 0..q.len() {
        let (m, v) = denoise_scalar(prior, q[i], tau_q.get(i));
        mean[i] = m;
        variance[i] = v;
    }
    Ok(PosteriorMoments { mean, variance })
}

/// Derivative of the posterior mean with respect to `q`, elementwise.
///
/// Computed through the identity `τ_q · g'(q, τ_q) = Var[x | q]`.
pub fn denoise_derivative(prior: &Prior, q: &DVector<f64>, tau_q: TauQ) -> Result<DVector<f64>> {
    let moments = denoise(prior, q, tau_q)?;
    let mut out = moments.variance;
    for i in 0..out.len() {
        out[i] /= tau_q.get(i).max(f64::MIN_POSITIVE);
    }
    Ok(out)
}

/// Monte-Carlo estimate of the state-evolution expectation
/// `E[|g(x + √τ·z, τ) − x|²]` with `x ~ prior` and `z ~ N(0, 1)`.
///
/// Deterministic for a fixed `seed`.
pub fn denoiser_mse(prior: &Prior, tau: f64, n_samples: usize, seed: u64) -> Result<f64> {
    prior.validate()?;
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::Domain(format!(
            "state-evolution variance must be positive and finite, got {tau}"
        )));
    }
    if n_samples == 0 {
        return Err(Error::Domain("n_samples must be at least 1".into()));
    }
    let mut rng = seeding::rng(seed, &[0x5e]);
    let sqrt_tau = tau.sqrt();
    let mut acc = 0.0;
    for _ in 0..n_samples {
        let x = prior.sample(&mut rng)?;
        let z: f64 = StandardNormal.sample(&mut rng);
        let (m, _) = denoise_scalar(prior, x + sqrt_tau * z, tau);
        acc += (m - x) * (m - x);
    }
    Ok(acc / n_samples as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracles;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn bg(rate: f64) -> Prior {
        Prior::BernoulliGaussian {
            rate,
            active_mean: 0.0,
            active_variance: 1.0,
        }
    }

    #[test]
    fn gaussian_closed_form() {
        let q = DVector::from_vec(vec![2.0]);
        let m = denoise(
            &Prior::Gaussian { mean: 0.0, variance: 1.0 },
            &q,
            TauQ::Scalar(1.0),
        )
        .unwrap();
        assert_eq!(m.mean[0], 1.0);
        assert_eq!(m.variance[0], 0.5);
    }

    #[test]
    fn gaussian_with_nonzero_mean() {
        // (v·q + τ·m0)/(v+τ) against direct arithmetic.
        let q = DVector::from_vec(vec![-0.3, 4.0]);
        let m = denoise(
            &Prior::Gaussian { mean: 2.0, variance: 0.5 },
            &q,
            TauQ::Scalar(0.25),
        )
        .unwrap();
        for i in 0..2 {
            assert_abs_diff_eq!(m.mean[i], (0.5 * q[i] + 0.25 * 2.0) / 0.75, epsilon = 1e-15);
            assert_abs_diff_eq!(m.variance[i], 0.5 * 0.25 / 0.75, epsilon = 1e-15);
        }
    }

    #[test]
    fn bg_symmetric_about_zero() {
        let q = DVector::from_vec(vec![0.0]);
        for rate in [0.05, 0.3, 0.9] {
            let m = denoise(&bg(rate), &q, TauQ::Scalar(0.7)).unwrap();
            assert_eq!(m.mean[0], 0.0);
        }
    }

    #[test]
    fn bg_matches_quadrature_oracle() {
        // Frozen from the quadrature oracle (adaptive Simpson, tol 1e-13):
        // prior BG(0.1, 0, 1), q = 1.5, tau_q = 0.2.
        let (om, ov) = oracles::bg_posterior_quadrature(0.1, 0.0, 1.0, 1.5, 0.2);
        assert_abs_diff_eq!(om, 1.039042058886656, epsilon = 1e-9);
        assert_abs_diff_eq!(ov, 0.357733114657843, epsilon = 1e-9);
        let m = denoise(&bg(0.1), &DVector::from_vec(vec![1.5]), TauQ::Scalar(0.2)).unwrap();
        assert_abs_diff_eq!(m.mean[0], om, epsilon = 1e-8);
        assert_abs_diff_eq!(m.variance[0], ov, epsilon = 1e-8);
    }

    #[test]
    fn bg_limits() {
        let q = DVector::from_vec(vec![1.3, -0.4]);
        let tau = TauQ::Scalar(0.5);
        // rate 1 equals the Gaussian denoiser.
        let a = denoise(&bg(1.0), &q, tau).unwrap();
        let b = denoise(&Prior::Gaussian { mean: 0.0, variance: 1.0 }, &q, tau).unwrap();
        assert_eq!(a.mean, b.mean);
        assert_eq!(a.variance, b.variance);
        // rate 0 returns (0, 0).
        let z = denoise(&bg(0.0), &q, tau).unwrap();
        assert!(z.mean.iter().all(|&m| m == 0.0));
        assert!(z.variance.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bg_log_domain_is_stable_for_large_q() {
        let q = DVector::from_vec(vec![1e6, -1e6]);
        let m = denoise(&bg(0.1), &q, TauQ::Scalar(1e-6)).unwrap();
        assert!(m.mean.iter().all(|v| v.is_finite()));
        assert!(m.variance.iter().all(|v| v.is_finite() && *v >= 0.0));
    }

    #[test]
    fn noninformative_is_identity() {
        let q = DVector::from_vec(vec![3.0, -1.0]);
        let tau = DVector::from_vec(vec![0.5, 2.0]);
        let m = denoise(&Prior::NonInformative, &q, TauQ::PerElement(&tau)).unwrap();
        assert_eq!(m.mean, q);
        assert_eq!(m.variance, tau);
        let d = denoise_derivative(&Prior::NonInformative, &q, TauQ::PerElement(&tau)).unwrap();
        assert!(d.iter().all(|&g| g == 1.0));
    }

    #[test]
    fn pinned_ignores_input() {
        let q = DVector::from_vec(vec![3.0]);
        let m = denoise(&Prior::Pinned(1.0), &q, TauQ::Scalar(-1.0)).unwrap();
        assert_eq!(m.mean[0], 1.0);
        assert_eq!(m.variance[0], 0.0);
    }

    #[test]
    fn derivative_constant_for_gaussian() {
        let q = DVector::from_vec(vec![-5.0, 0.0, 17.0]);
        let d = denoise_derivative(
            &Prior::Gaussian { mean: 0.0, variance: 1.0 },
            &q,
            TauQ::Scalar(1.0),
        )
        .unwrap();
        assert!(d.iter().all(|&g| (g - 0.5).abs() < 1e-15));
    }

    #[test]
    fn derivative_matches_finite_difference() {
        let prior = bg(0.1);
        let h = 1e-5;
        for &q in &[1.5, -0.7, 0.05, 3.2] {
            let g = denoise_derivative(&prior, &DVector::from_vec(vec![q]), TauQ::Scalar(0.2))
                .unwrap()[0];
            let (mp, _) = denoise_scalar(&prior, q + h, 0.2);
            let (mm, _) = denoise_scalar(&prior, q - h, 0.2);
            let fd = (mp - mm) / (2.0 * h);
            assert_abs_diff_eq!(g, fd, epsilon = 1e-4);
        }
    }

    #[test]
    fn tau_derivative_identity() {
        // τ_q · g' equals the posterior variance.
        let prior = bg(0.25);
        let q = DVector::from_vec(vec![0.3, 1.9, -2.4]);
        let tau = DVector::from_vec(vec![0.1, 0.9, 3.0]);
        let m = denoise(&prior, &q, TauQ::PerElement(&tau)).unwrap();
        let d = denoise_derivative(&prior, &q, TauQ::PerElement(&tau)).unwrap();
        for i in 0..3 {
            assert_abs_diff_eq!(d[i] * tau[i], m.variance[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn domain_errors() {
        let q = DVector::from_vec(vec![1.0]);
        assert!(denoise(&bg(0.1), &q, TauQ::Scalar(0.0)).is_err());
        assert!(denoise(&bg(0.1), &q, TauQ::Scalar(-1.0)).is_err());
        assert!(denoise(&bg(1.5), &q, TauQ::Scalar(1.0)).is_err());
        assert!(denoise(
            &Prior::Gaussian { mean: 0.0, variance: 0.0 },
            &q,
            TauQ::Scalar(1.0)
        )
        .is_err());
        assert!(denoiser_mse(&Prior::NonInformative, 1.0, 10, 0).is_err());
    }

    #[test]
    fn mse_gaussian_closed_form() {
        // E[(g − x)²] = v₀τ/(v₀+τ) = 0.5 for v₀ = τ = 1.
        let n = 200_000;
        let est = denoiser_mse(&Prior::Gaussian { mean: 0.0, variance: 1.0 }, 1.0, n, 3).unwrap();
        // Chi-square-ish spread; 3 standard errors of the MC mean.
        let se = 3.0 * (2.0f64).sqrt() * 0.5 / (n as f64).sqrt();
        assert!((est - 0.5).abs() < se, "est {est} vs 0.5 ± {se}");
    }

    #[test]
    fn mse_noiseless_limit() {
        for prior in [&Prior::Gaussian { mean: 0.0, variance: 1.0 }, &bg(0.1)] {
            let est = denoiser_mse(prior, 1e-8, 20_000, 5).unwrap();
            assert!(est < 1e-6, "mse {est} at tau→0");
        }
    }

    #[test]
    fn mse_matches_two_dimensional_quadrature() {
        // Frozen from the 2-D quadrature oracle: BG(0.1, 0, 1) at τ = 0.135.
        let exact = oracles::bg_se_mse_quadrature(0.1, 0.0, 1.0, 0.135);
        assert_abs_diff_eq!(exact, 0.027336086041522, epsilon = 1e-9);
        let est = denoiser_mse(&bg(0.1), 0.135, 1_000_000, 11).unwrap();
        // 3 significant digits.
        assert!((est - exact).abs() / exact < 5e-3, "mc {est} vs quad {exact}");
    }

    #[test]
    fn mse_nondecreasing_in_tau() {
        let prior = bg(0.1);
        let taus = [1e-3, 1e-2, 1e-1, 1.0, 10.0];
        let mut last = 0.0;
        for (i, &t) in taus.iter().enumerate() {
            let v = denoiser_mse(&prior, t, 150_000, 17).unwrap();
            assert!(
                v >= last * 0.97,
                "mse not monotone at tau={t}: {v} < {last}"
            );
            let _ = i;
            last = v;
        }
    }

    #[test]
    fn mse_bounded_by_tau_and_prior_variance() {
        // Data-processing holds in expectation for the spike-and-slab prior
        // even though the pointwise posterior variance can exceed τ.
        let prior = bg(0.1);
        let var = prior.variance().unwrap();
        for &t in &[0.05, 0.2, 1.0, 5.0] {
            let v = denoiser_mse(&prior, t, 150_000, 23).unwrap();
            assert!(v <= 1.03 * t && v <= 1.03 * var);
        }
    }

    proptest! {
        #[test]
        fn posterior_variance_nonnegative_finite(
            q in -50.0f64..50.0,
            tau in 1e-6f64..1e3,
            rate in 0.0f64..=1.0,
            av in 1e-3f64..10.0,
            am in -3.0f64..3.0,
        ) {
            let prior = Prior::BernoulliGaussian { rate, active_mean: am, active_variance: av };
            let (m, v) = denoise_scalar(&prior, q, tau);
            prop_assert!(m.is_finite());
            prop_assert!(v.is_finite() && v >= 0.0);
        }

        #[test]
        fn gaussian_variance_bounded_by_tau(
            q in -50.0f64..50.0,
            tau in 1e-6f64..1e3,
            v0 in 1e-3f64..1e3,
        ) {
            let (_, v) = denoise_scalar(&Prior::Gaussian { mean: 0.0, variance: v0 }, q, tau);
            prop_assert!(v <= tau && v <= v0);
        }
    }
}
