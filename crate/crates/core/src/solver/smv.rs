//! Bi-UTAMP for the single-measurement-vector problem
//! `y = Σ_k b_k A_k c + w`.

use nalgebra::{DMatrix, DVector};

use super::{
    apply_pin, clamp_beta, damp_into, draw_b_init, ep_block_pass, trace_nmse, BiUtampConfig,
    BiUtampResult, EpBlockState, IterTrace, RestartReport, Truth,
};
use crate::error::{Error, Result};
use crate::seeding;
use crate::transform::TransformedModel;

/// Full per-restart iteration state.
#[derive(Clone, Debug)]
pub struct SmvState {
    /// Lifted estimate `x̂ = [x̂_1; ...; x̂_K]`, length NK.
    pub x_hat: DVector<f64>,
    /// Per-block averaged variance `ν_{x_k}`, length K.
    pub nu_x: DVector<f64>,
    pub s: DVector<f64>,
    pub beta_hat: f64,
    pub ep: EpBlockState,
    /// Pseudo-observations `q_k` (length NK) and their variances (length K).
    pub q: DVector<f64>,
    pub nu_q: DVector<f64>,
    pub clamp_count: u64,
    pub iteration: usize,
}

impl SmvState {
    /// Initialization: `ν_{b_k} = 1`, `ν_{x_k} = 1`, `x̂_k = 0`, `s = 0`,
    /// `β̂ = 1`, with `b̂` supplied by the caller.
    pub fn init(tm: &TransformedModel<f64>, config: &BiUtampConfig, b0: DVector<f64>) -> SmvState {
        let nk = tm.n * tm.k;
        SmvState {
            x_hat: DVector::zeros(nk),
            nu_x: DVector::from_element(tm.k, 1.0),
            s: DVector::zeros(tm.m),
            beta_hat: 1.0,
            ep: EpBlockState::init(b0, &config.pinned_b, tm.n),
            q: DVector::zeros(nk),
            nu_q: DVector::from_element(tm.k, 1.0),
            clamp_count: 0,
            iteration: 0,
        }
    }

    fn is_finite(&self) -> bool {
        self.x_hat.iter().all(|v| v.is_finite())
            && self.s.iter().all(|v| v.is_finite())
            && self.ep.b_hat.iter().all(|v| v.is_finite())
            && self.ep.c_hat.iter().all(|v| v.is_finite())
            && self.beta_hat.is_finite()
    }
}

/// One full Bi-UTAMP iteration: UTAMP forward recursion on the lifted
/// signal, the EP denoiser block, and the recombination into the next
/// `x̂`. The `b`-posterior update runs only when `update_b` is set
/// (thinning); the forward and backward `b` messages always run.
pub fn smv_iteration(
    state: &mut SmvState,
    tm: &TransformedModel<f64>,
    config: &BiUtampConfig,
    update_b: bool,
) -> Result<()> {
    let (m, n, k) = (tm.m, tm.n, tm.k);
    let r = tm.r.column(0);

    // ν_p = Σ_k φ_k ν_{x_k} and p = Φ x̂ − ν_p · s.
    let mut nu_p = DVector::zeros(m);
    for kk in 0..k {
        nu_p.axpy(state.nu_x[kk], &tm.phi_k[kk], 1.0);
    }
    let mut p = &tm.phi * &state.x_hat;
    for i in 0..m {
        p[i] -= nu_p[i] * state.s[i];
    }

    // Zero-safe posterior of z and the noise-precision update.
    let mut res_sq = 0.0;
    let mut nu_z_sum = 0.0;
    for i in 0..m {
        let denom = 1.0 + state.beta_hat * nu_p[i];
        let nu_z = nu_p[i] / denom;
        let z = (state.beta_hat * nu_p[i] * r[i] + p[i]) / denom;
        let d = r[i] - z;
        res_sq += d * d;
        nu_z_sum += nu_z;
    }
    state.beta_hat = clamp_beta(m as f64 / (res_sq + nu_z_sum));

    // ν_s = 1 / (ν_p + β̂⁻¹) and the damped s update.
    let beta_inv = 1.0 / state.beta_hat;
    let mut s_new = DVector::zeros(m);
    for i in 0..m {
        s_new[i] = (r[i] - p[i]) / (nu_p[i] + beta_inv);
    }
    damp_into(&mut state.s, &s_new, config.damping);

    // Pseudo-observations: ν_{q_k} = N / (φ_kᵀ ν_s), q_k = x̂_k + ν_{q_k} Φ_kᴴ s.
    let mut nu_s = DVector::zeros(m);
    for i in 0..m {
        nu_s[i] = 1.0 / (nu_p[i] + beta_inv);
    }
    let corr = tm.phi.transpose() * &state.s;
    for kk in 0..k {
        let dot = tm.phi_k[kk].dot(&nu_s);
        state.nu_q[kk] = if dot > 0.0 { n as f64 / dot } else { super::NU_MAX };
        let nu_qk = state.nu_q[kk];
        for i in 0..n {
            let idx = kk * n + i;
            state.q[idx] = state.x_hat[idx] + nu_qk * corr[idx];
        }
    }

    // EP block and recombination.
    let mut nu_x_elem = DVector::zeros(n * k);
    ep_block_pass(
        &state.q,
        &state.nu_q,
        &mut state.ep,
        &config.prior_b,
        &config.pinned_b,
        &config.prior_c,
        update_b,
        n,
        k,
        &mut state.clamp_count,
        &mut state.x_hat,
        &mut nu_x_elem,
    )?;
    for kk in 0..k {
        state.nu_x[kk] = nu_x_elem.rows(kk * n, n).mean();
    }
    state.iteration += 1;
    Ok(())
}

struct RestartOutcome {
    report: RestartReport,
    b_hat: DVector<f64>,
    c_hat: DVector<f64>,
    beta_hat: f64,
    trace: Vec<IterTrace>,
}

fn run_one_restart(
    tm: &TransformedModel<f64>,
    config: &BiUtampConfig,
    truth: Option<&Truth>,
    restart: usize,
    b0: DVector<f64>,
) -> RestartOutcome {
    let r = tm.r.column(0).clone_owned();
    let mut state = SmvState::init(tm, config, b0);
    let mut trace = Vec::new();
    let mut diverged_at = None;
    let mut last_residual = f64::INFINITY;
    let mut last_good = (state.ep.b_hat.clone(), state.ep.c_hat.clone(), 1.0);
    let mut prev_b = state.ep.b_hat.clone();
    let mut iterations = 0;

    for t in 0..config.max_iterations {
        let update_b = t % config.thinning == 0;
        let step = smv_iteration(&mut state, tm, config, update_b);
        let finite = step.is_ok() && state.is_finite();
        let blown = state.x_hat.norm() > 1e12 * r.norm().max(1.0);
        if !finite || blown {
            diverged_at = Some(t);
            break;
        }
        iterations = t + 1;
        let residual = (&r - &tm.phi * &state.x_hat).norm_squared();
        last_residual = residual;
        last_good = (state.ep.b_hat.clone(), state.ep.c_hat.clone(), state.beta_hat);
        trace.push(IterTrace {
            residual,
            beta_hat: state.beta_hat,
            clamp_events: state.clamp_count,
            nmse_b: truth.map(|t| trace_nmse(state.ep.b_hat.as_slice(), t.b.as_slice(), &config.pinned_b)),
            nmse_c: truth
                .map(|t| trace_nmse(state.ep.c_hat.as_slice(), t.c.as_slice(), &config.pinned_b)),
        });
        if update_b {
            let bn = state.ep.b_hat.norm_squared();
            if bn > 0.0 {
                let diff = (&state.ep.b_hat - &prev_b).norm_squared();
                if diff / bn < config.tolerance && t > 0 {
                    break;
                }
            }
            prev_b = state.ep.b_hat.clone();
        }
    }

    RestartOutcome {
        report: RestartReport {
            restart,
            iterations,
            final_residual: last_residual,
            diverged_at,
            clamp_count: state.clamp_count,
        },
        b_hat: last_good.0,
        c_hat: last_good.1,
        beta_hat: last_good.2,
        trace,
    }
}

/// Runs Bi-UTAMP with restarts and selects the restart with the smallest
/// final transformed-domain residual `‖r − Φ x̂‖²`.
///
/// Every restart re-draws `b̂` (the first honors `config.b_init`) and fully
/// re-initializes the state. If every restart diverges the error carries
/// the best last-finite result with per-restart status.
pub fn run_biutamp_smv(
    tm: &TransformedModel<f64>,
    config: &BiUtampConfig,
    truth: Option<Truth>,
) -> Result<BiUtampResult> {
    config.validate(tm.k)?;
    if tm.l != 1 {
        return Err(Error::Dimension(format!(
            "SMV solver expects a single observation column, got {}",
            tm.l
        )));
    }

    let mut outcomes = Vec::with_capacity(config.n_restarts);
    for restart in 0..config.n_restarts {
        let mut rng = seeding::rng(config.seed, &[0xb1, restart as u64]);
        let b0 = match (&config.b_init, restart) {
            (Some(b0), 0) => {
                let mut b = b0.clone();
                apply_pin(&mut b, None, &config.pinned_b);
                b
            }
            _ => draw_b_init(tm.k, &config.pinned_b, &mut rng),
        };
        outcomes.push(run_one_restart(tm, config, truth.as_ref(), restart, b0));
    }

    let selected = outcomes
        .iter()
        .enumerate()
        .filter(|(_, o)| o.report.diverged_at.is_none())
        .min_by(|a, b| {
            a.1.report
                .final_residual
                .partial_cmp(&b.1.report.final_residual)
                .unwrap()
        })
        .map(|(i, _)| i);
    let all_diverged = selected.is_none();
    let selected = selected.unwrap_or_else(|| {
        outcomes
            .iter()
            .enumerate()
            .min_by(|a, b| {
                a.1.report
                    .final_residual
                    .partial_cmp(&b.1.report.final_residual)
                    .unwrap_or(core::cmp::Ordering::Equal)
            })
            .map(|(i, _)| i)
            .unwrap_or(0)
    });

    let reports: Vec<RestartReport> = outcomes.iter().map(|o| o.report.clone()).collect();
    let chosen = &outcomes[selected];
    let result = BiUtampResult {
        b_hat: chosen.b_hat.clone(),
        c_hat: DMatrix::from_column_slice(tm.n, 1, chosen.c_hat.as_slice()),
        beta_hat: chosen.beta_hat,
        iterations_used: chosen.report.iterations,
        restart_index_selected: selected,
        restarts: reports,
        clamp_count: chosen.report.clamp_count,
        trace: chosen.trace.clone(),
        final_residual: chosen.report.final_residual,
        diverged: all_diverged,
    };
    if all_diverged {
        return Err(Error::BiUtampDiverged {
            restarts: config.n_restarts,
            result: Box::new(result),
        });
    }
    Ok(result)
}
