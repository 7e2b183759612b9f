//! Vector-stepsize AMP and the two UTAMP variants.
//!
//! [`run_amp`] iterates the vector-stepsize recursion directly on `(A, y)`.
//! [`run_utamp_v1`] runs the same recursion on the transformed pair
//! `(r, Φ)`, and [`run_utamp_v2`] replaces the two per-element variance
//! vectors with their averages, which removes two of the four
//! matrix-vector products per iteration and further stabilizes the
//! iteration. All three support either a known noise precision or the
//! posterior-mean estimate `β̂ = M / (‖r − ẑ‖² + 1ᵀν_z)` folded into the
//! loop.

use nalgebra::{DMatrix, DVector};

use crate::denoisers::{denoise, Prior, TauQ};
use crate::error::{Error, Result};
use crate::transform::TransformedModel;

pub const BETA_MIN: f64 = 1e-12;
pub const BETA_MAX: f64 = 1e12;
/// Iterate-magnitude factor beyond which a run is declared divergent.
pub const DIVERGENCE_FACTOR: f64 = 1e12;

/// Noise-precision handling.
#[derive(Clone, Copy, Debug)]
pub enum BetaMode {
    Known(f64),
    /// Re-estimate the precision every iteration.
    Estimate,
}

#[derive(Clone, Debug)]
pub struct AmpConfig {
    pub max_iterations: usize,
    pub beta: BetaMode,
    pub prior: Prior,
    /// Early stop once `‖x^{t+1} − x^t‖² / ‖x^t‖²` drops below this.
    pub tolerance: f64,
    /// Keep every iterate in the trace (for trajectory comparisons).
    pub record_iterates: bool,
    /// Diagnostic mode for [`run_utamp_v1`]: average the two variance
    /// vectors each iteration, which reproduces version 2 exactly.
    pub scalar_averaging: bool,
}

impl AmpConfig {
    pub fn new(prior: Prior, beta: BetaMode) -> Self {
        AmpConfig {
            max_iterations: 200,
            beta,
            prior,
            tolerance: 1e-8,
            record_iterates: false,
            scalar_averaging: false,
        }
    }
}

/// Final per-element variance: one per element (AMP, UTAMP v1) or a single
/// scalar (UTAMP v2).
#[derive(Clone, Debug)]
pub enum TauX {
    PerElement(DVector<f64>),
    Uniform(f64),
}

impl TauX {
    pub fn mean(&self) -> f64 {
        match self {
            TauX::PerElement(v) => v.mean(),
            TauX::Uniform(t) => *t,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AmpIteration {
    pub tau_mean: f64,
    pub beta_hat: f64,
    /// `‖x − truth‖² / len` when the truth was supplied.
    pub mse_x: Option<f64>,
    /// The iterate itself when `record_iterates` is set.
    pub x: Option<DVector<f64>>,
}

#[derive(Clone, Debug)]
pub struct AmpRun {
    pub x_hat: DVector<f64>,
    pub tau_x: TauX,
    pub beta_hat: f64,
    pub iterations: usize,
    pub trace: Vec<AmpIteration>,
}

fn clamp_beta(beta: f64) -> f64 {
    if beta.is_finite() {
        beta.clamp(BETA_MIN, BETA_MAX)
    } else {
        BETA_MAX
    }
}

/// `β̂ = M / (‖r − ẑ‖² + 1ᵀν_z)`.
pub fn estimate_beta(r: &DVector<f64>, z_hat: &DVector<f64>, nu_z: &DVector<f64>) -> Result<f64> {
    if r.len() != z_hat.len() || r.len() != nu_z.len() {
        return Err(Error::Dimension(format!(
            "estimate_beta lengths: r {}, z_hat {}, nu_z {}",
            r.len(),
            z_hat.len(),
            nu_z.len()
        )));
    }
    let den = (r - z_hat).norm_squared() + nu_z.sum();
    if !(den > 0.0) {
        return Err(Error::DegenerateFit);
    }
    Ok(r.len() as f64 / den)
}

/// MMV variant: `β̂ = M·L / Σ_l (‖r_l − ẑ_l‖² + 1ᵀν_{z_l})`.
pub fn estimate_beta_mmv(r: &DMatrix<f64>, z_hat: &DMatrix<f64>, nu_z: &DMatrix<f64>) -> Result<f64> {
    if r.shape() != z_hat.shape() || r.shape() != nu_z.shape() {
        return Err(Error::Dimension("estimate_beta_mmv shape mismatch".into()));
    }
    let den = (r - z_hat).norm_squared() + nu_z.sum();
    if !(den > 0.0) {
        return Err(Error::DegenerateFit);
    }
    Ok((r.len()) as f64 / den)
}

struct LoopState {
    x: DVector<f64>,
    tau_x: DVector<f64>,
    s: DVector<f64>,
    beta_hat: f64,
    trace: Vec<AmpIteration>,
}

impl LoopState {
    fn new(n: usize, m: usize, beta: &BetaMode) -> Self {
        LoopState {
            x: DVector::zeros(n),
            tau_x: DVector::from_element(n, 1.0),
            s: DVector::zeros(m),
            beta_hat: match beta {
                BetaMode::Known(b) => *b,
                BetaMode::Estimate => 1.0,
            },
            trace: Vec::new(),
        }
    }

    fn record(&mut self, config: &AmpConfig, truth: Option<&DVector<f64>>, tau_mean: f64) {
        self.trace.push(AmpIteration {
            tau_mean,
            beta_hat: self.beta_hat,
            mse_x: truth.map(|t| (&self.x - t).norm_squared() / t.len() as f64),
            x: config.record_iterates.then(|| self.x.clone()),
        });
    }

    fn finish(self, iterations: usize, uniform_tau: Option<f64>) -> AmpRun {
        AmpRun {
            x_hat: self.x,
            tau_x: match uniform_tau {
                Some(t) => TauX::Uniform(t),
                None => TauX::PerElement(self.tau_x),
            },
            beta_hat: self.beta_hat,
            iterations,
            trace: self.trace,
        }
    }
}

fn check_divergence(
    state: &LoopState,
    x_new: &DVector<f64>,
    obs_norm: f64,
    iteration: usize,
    uniform_tau: Option<f64>,
) -> Result<()> {
    let bad = !x_new.iter().all(|v| v.is_finite())
        || !state.s.iter().all(|v| v.is_finite())
        || x_new.norm() > DIVERGENCE_FACTOR * obs_norm.max(1.0);
    if bad {
        let last = state.clone_run(iteration, uniform_tau);
        return Err(Error::AmpDiverged {
            iteration,
            last: Box::new(last),
        });
    }
    Ok(())
}

impl LoopState {
    fn clone_run(&self, iterations: usize, uniform_tau: Option<f64>) -> AmpRun {
        AmpRun {
            x_hat: self.x.clone(),
            tau_x: match uniform_tau {
                Some(t) => TauX::Uniform(t),
                None => TauX::PerElement(self.tau_x.clone()),
            },
            beta_hat: self.beta_hat,
            iterations,
            trace: self.trace.clone(),
        }
    }
}

/// Vector-stepsize AMP on `y = A x + w`.
///
/// Diverges readily on non-zero-mean, strongly correlated or
/// ill-conditioned `A`; the divergence error carries the last finite
/// iterate.
pub fn run_amp(
    a: &DMatrix<f64>,
    y: &DVector<f64>,
    config: &AmpConfig,
    truth: Option<&DVector<f64>>,
) -> Result<AmpRun> {
    if y.len() != a.nrows() {
        return Err(Error::Dimension(format!(
            "y has length {}, A has {} rows",
            y.len(),
            a.nrows()
        )));
    }
    config.prior.validate()?;
    let (m, n) = a.shape();
    let mag2 = a.map(|v| v * v);
    let mag2_t = mag2.transpose();
    let a_t = a.transpose();
    let obs_norm = y.norm();

    let mut st = LoopState::new(n, m, &config.beta);
    let mut iterations = 0;
    for t in 0..config.max_iterations {
        let tau_p = &mag2 * &st.tau_x;
        let p = a * &st.x - tau_p.component_mul(&st.s);
        if matches!(config.beta, BetaMode::Estimate) {
            let denom = tau_p.map(|v| 1.0 + st.beta_hat * v);
            let nu_z = tau_p.component_div(&denom);
            let z_hat = (tau_p.component_mul(y) * st.beta_hat + &p).component_div(&denom);
            st.beta_hat = clamp_beta(m as f64 / ((y - &z_hat).norm_squared() + nu_z.sum()));
        }
        let beta_inv = 1.0 / st.beta_hat;
        let tau_s = tau_p.map(|v| 1.0 / (v + beta_inv));
        st.s = tau_s.component_mul(&(y - &p));
        let inv_tau_q = &mag2_t * &tau_s;
        let tau_q = inv_tau_q.map(|v| 1.0 / v);
        let q = &st.x + tau_q.component_mul(&(&a_t * &st.s));
        let moments = denoise(&config.prior, &q, TauQ::PerElement(&tau_q))?;

        check_divergence(&st, &moments.mean, obs_norm, t, None)?;
        let diff = (&moments.mean - &st.x).norm_squared();
        let prev_sq = st.x.norm_squared();
        st.x = moments.mean;
        st.tau_x = moments.variance;
        iterations = t + 1;
        let tau_mean = st.tau_x.mean();
        st.record(config, truth, tau_mean);
        if prev_sq > 0.0 && diff / prev_sq < config.tolerance {
            break;
        }
    }
    Ok(st.finish(iterations, None))
}

/// UTAMP version 1: the vector-stepsize recursion on the transformed model
/// `(r, Φ)`, with per-element variances.
pub fn run_utamp_v1(
    tm: &TransformedModel<f64>,
    config: &AmpConfig,
    truth: Option<&DVector<f64>>,
) -> Result<AmpRun> {
    config.prior.validate()?;
    let r = tm.r_vec();
    let phi = &tm.phi;
    let (m, width) = phi.shape();
    let mag2 = phi.map(|v| v * v);
    let mag2_t = mag2.transpose();
    let phi_t = phi.transpose();
    let obs_norm = r.norm();

    let mut st = LoopState::new(width, m, &config.beta);
    let mut iterations = 0;
    for t in 0..config.max_iterations {
        let tau_p = &mag2 * &st.tau_x;
        let p = phi * &st.x - tau_p.component_mul(&st.s);
        if matches!(config.beta, BetaMode::Estimate) {
            let denom = tau_p.map(|v| 1.0 + st.beta_hat * v);
            let nu_z = tau_p.component_div(&denom);
            let z_hat = (tau_p.component_mul(&r) * st.beta_hat + &p).component_div(&denom);
            st.beta_hat = clamp_beta(m as f64 / ((&r - &z_hat).norm_squared() + nu_z.sum()));
        }
        let beta_inv = 1.0 / st.beta_hat;
        let tau_s = tau_p.map(|v| 1.0 / (v + beta_inv));
        st.s = tau_s.component_mul(&(&r - &p));
        let mut inv_tau_q = &mag2_t * &tau_s;
        if config.scalar_averaging {
            inv_tau_q.fill(inv_tau_q.mean());
        }
        let tau_q = inv_tau_q.map(|v| 1.0 / v);
        let q = &st.x + tau_q.component_mul(&(&phi_t * &st.s));
        let moments = denoise(&config.prior, &q, TauQ::PerElement(&tau_q))?;

        check_divergence(&st, &moments.mean, obs_norm, t, None)?;
        let diff = (&moments.mean - &st.x).norm_squared();
        let prev_sq = st.x.norm_squared();
        st.x = moments.mean;
        st.tau_x = moments.variance;
        if config.scalar_averaging {
            st.tau_x.fill(st.tau_x.mean());
        }
        iterations = t + 1;
        let tau_mean = st.tau_x.mean();
        st.record(config, truth, tau_mean);
        if prev_sq > 0.0 && diff / prev_sq < config.tolerance {
            break;
        }
    }
    Ok(st.finish(iterations, None))
}

/// UTAMP version 2: scalar signal variance through the two average
/// operations `τ_p = τ_x λ` and `1/τ_q = (1/N) λᵀ τ_s`.
pub fn run_utamp_v2(
    tm: &TransformedModel<f64>,
    config: &AmpConfig,
    truth: Option<&DVector<f64>>,
) -> Result<AmpRun> {
    config.prior.validate()?;
    let r = tm.r_vec();
    let phi = &tm.phi;
    let lambda = &tm.lambda;
    let (m, width) = phi.shape();
    let phi_t = phi.transpose();
    let obs_norm = r.norm();

    let mut st = LoopState::new(width, m, &config.beta);
    let mut tau_x = 1.0f64;
    let mut iterations = 0;
    for t in 0..config.max_iterations {
        let tau_p = lambda * tau_x;
        let p = phi * &st.x - tau_p.component_mul(&st.s);
        if matches!(config.beta, BetaMode::Estimate) {
            let denom = tau_p.map(|v| 1.0 + st.beta_hat * v);
            let nu_z = tau_p.component_div(&denom);
            let z_hat = (tau_p.component_mul(&r) * st.beta_hat + &p).component_div(&denom);
            st.beta_hat = clamp_beta(m as f64 / ((&r - &z_hat).norm_squared() + nu_z.sum()));
        }
        let beta_inv = 1.0 / st.beta_hat;
        let tau_s = tau_p.map(|v| 1.0 / (v + beta_inv));
        st.s = tau_s.component_mul(&(&r - &p));
        let inv_tau_q = lambda.dot(&tau_s) / width as f64;
        let tau_q = 1.0 / inv_tau_q;
        let q = &st.x + (&phi_t * &st.s) * tau_q;
        let moments = denoise(&config.prior, &q, TauQ::Scalar(tau_q))?;

        check_divergence(&st, &moments.mean, obs_norm, t, Some(tau_x))?;
        let diff = (&moments.mean - &st.x).norm_squared();
        let prev_sq = st.x.norm_squared();
        st.x = moments.mean;
        tau_x = moments.variance.mean();
        iterations = t + 1;
        st.record(config, truth, tau_x);
        if prev_sq > 0.0 && diff / prev_sq < config.tolerance {
            break;
        }
    }
    Ok(st.finish(iterations, Some(tau_x)))
}
