//! Bi-UTAMP for the multiple-measurement-vector problem
//! `Y = Σ_k b_k A_k C + W`.
//!
//! The per-column recursions mirror the single-vector solver and could run
//! in parallel; the shared noise-precision update and the pooled `b`
//! posterior are the synchronization points.

use nalgebra::{DMatrix, DVector};

use super::{
    apply_pin, b_posterior, cavity, clamp_beta, clamp_var, damp_into, draw_b_init, trace_nmse,
    BiUtampConfig, BiUtampResult, IterTrace, RestartReport, Truth, NU_MAX,
};
use crate::denoisers::{denoise, TauQ};
use crate::error::{Error, Result};
use crate::seeding;
use crate::transform::TransformedModel;

/// Full per-restart iteration state for L measurement vectors.
#[derive(Clone, Debug)]
pub struct MmvState {
    /// Lifted estimates, one NK column per measurement vector.
    pub x_hat: DMatrix<f64>,
    /// Per-block averaged variances `ν_{x_{k,l}}`, K×L.
    pub nu_x: DMatrix<f64>,
    pub s: DMatrix<f64>,
    pub beta_hat: f64,
    pub b_hat: DVector<f64>,
    pub nu_b: DVector<f64>,
    pub c_hat: DMatrix<f64>,
    /// Averaged posterior variance of each column of `C`.
    pub nu_c: DVector<f64>,
    pub q: DMatrix<f64>,
    pub nu_q: DMatrix<f64>,
    pub clamp_count: u64,
    pub iteration: usize,
}

impl MmvState {
    pub fn init(tm: &TransformedModel<f64>, config: &BiUtampConfig, b0: DVector<f64>) -> MmvState {
        let (n, k, l) = (tm.n, tm.k, tm.l);
        let mut nu_b = DVector::from_element(k, 1.0);
        let mut b_hat = b0;
        apply_pin(&mut b_hat, Some(&mut nu_b), &config.pinned_b);
        MmvState {
            x_hat: DMatrix::zeros(n * k, l),
            nu_x: DMatrix::from_element(k, l, 1.0),
            s: DMatrix::zeros(tm.m, l),
            beta_hat: 1.0,
            b_hat,
            nu_b,
            c_hat: DMatrix::zeros(n, l),
            nu_c: DVector::from_element(l, 1.0),
            q: DMatrix::zeros(n * k, l),
            nu_q: DMatrix::from_element(k, l, 1.0),
            clamp_count: 0,
            iteration: 0,
        }
    }

    fn is_finite(&self) -> bool {
        self.x_hat.iter().all(|v| v.is_finite())
            && self.s.iter().all(|v| v.is_finite())
            && self.b_hat.iter().all(|v| v.is_finite())
            && self.c_hat.iter().all(|v| v.is_finite())
            && self.beta_hat.is_finite()
    }
}

/// One full Bi-UTAMP MMV iteration.
pub fn mmv_iteration(
    state: &mut MmvState,
    tm: &TransformedModel<f64>,
    config: &BiUtampConfig,
    update_b: bool,
) -> Result<()> {
    let (m, n, k, l) = (tm.m, tm.n, tm.k, tm.l);

    // Per-column UTAMP forward block with a shared noise precision.
    let mut nu_p = DMatrix::zeros(m, l);
    for ll in 0..l {
        let mut col = nu_p.column_mut(ll);
        for kk in 0..k {
            col.axpy(state.nu_x[(kk, ll)], &tm.phi_k[kk], 1.0);
        }
    }
    let mut p = &tm.phi * &state.x_hat;
    for ll in 0..l {
        for i in 0..m {
            p[(i, ll)] -= nu_p[(i, ll)] * state.s[(i, ll)];
        }
    }

    let mut denom_total = 0.0;
    for ll in 0..l {
        for i in 0..m {
            let denom = 1.0 + state.beta_hat * nu_p[(i, ll)];
            let nu_z = nu_p[(i, ll)] / denom;
            let z = (state.beta_hat * nu_p[(i, ll)] * tm.r[(i, ll)] + p[(i, ll)]) / denom;
            let d = tm.r[(i, ll)] - z;
            denom_total += d * d + nu_z;
        }
    }
    state.beta_hat = clamp_beta((m * l) as f64 / denom_total);

    let beta_inv = 1.0 / state.beta_hat;
    let mut nu_s = DMatrix::zeros(m, l);
    for ll in 0..l {
        let mut s_new = DVector::zeros(m);
        for i in 0..m {
            nu_s[(i, ll)] = 1.0 / (nu_p[(i, ll)] + beta_inv);
            s_new[i] = (tm.r[(i, ll)] - p[(i, ll)]) * nu_s[(i, ll)];
        }
        let mut s_col = state.s.column_mut(ll).clone_owned();
        damp_into(&mut s_col, &s_new, config.damping);
        state.s.set_column(ll, &s_col);
    }

    let corr = tm.phi.transpose() * &state.s;
    for ll in 0..l {
        for kk in 0..k {
            let dot = tm.phi_k[kk].dot(&nu_s.column(ll).clone_owned());
            state.nu_q[(kk, ll)] = if dot > 0.0 { n as f64 / dot } else { NU_MAX };
            let nu_qk = state.nu_q[(kk, ll)];
            for i in 0..n {
                let idx = kk * n + i;
                state.q[(idx, ll)] = state.x_hat[(idx, ll)] + nu_qk * corr[(idx, ll)];
            }
        }
    }

    // Forward messages into each column of C and its posterior.
    let mut denom_b = DVector::zeros(k);
    let mut c_coeff = DVector::zeros(k);
    for kk in 0..k {
        let d = state.b_hat[kk] * state.b_hat[kk] + state.nu_b[kk];
        denom_b[kk] = d;
        c_coeff[kk] = if d > 0.0 { state.b_hat[kk] / d } else { 0.0 };
    }
    // ν⃗_{c_{k,l}} shares the per-(k,l) scalar structure of the SMV case.
    let mut c_fwd_var = DMatrix::zeros(k, l);
    let mut c_fwd_var_comb = DVector::zeros(l);
    let mut c_fwd = DMatrix::zeros(n, l);
    for ll in 0..l {
        let mut inv_sum = 0.0;
        for kk in 0..k {
            let v = if denom_b[kk] > 0.0 {
                state.nu_q[(kk, ll)] / denom_b[kk]
            } else {
                f64::INFINITY
            };
            c_fwd_var[(kk, ll)] = v;
            inv_sum += 1.0 / v;
        }
        c_fwd_var_comb[ll] = 1.0 / inv_sum;
        for kk in 0..k {
            if c_fwd_var[(kk, ll)].is_finite() {
                let w = c_coeff[kk] / c_fwd_var[(kk, ll)];
                for i in 0..n {
                    c_fwd[(i, ll)] += w * state.q[(kk * n + i, ll)];
                }
            }
        }
        for i in 0..n {
            c_fwd[(i, ll)] *= c_fwd_var_comb[ll];
        }
        let col = c_fwd.column(ll).clone_owned();
        let moments = denoise(&config.prior_c, &col, TauQ::Scalar(c_fwd_var_comb[ll]))?;
        state.c_hat.set_column(ll, &moments.mean);
        state.nu_c[ll] = moments.variance.mean();
    }

    // Forward messages into b, pooled over columns and elements.
    let mut den_c = DMatrix::zeros(n, l);
    for ll in 0..l {
        for i in 0..n {
            den_c[(i, ll)] = state.c_hat[(i, ll)] * state.c_hat[(i, ll)] + state.nu_c[ll];
        }
    }
    if update_b {
        for kk in 0..k {
            let mut inv_acc = 0.0;
            let mut mean_acc = 0.0;
            for ll in 0..l {
                let nu_qk = state.nu_q[(kk, ll)];
                for i in 0..n {
                    inv_acc += den_c[(i, ll)] / nu_qk;
                    mean_acc += state.q[(kk * n + i, ll)] * state.c_hat[(i, ll)] / nu_qk;
                }
            }
            let fwd_var = 1.0 / inv_acc;
            let fwd_mean = mean_acc / inv_acc;
            let (bm, bv) = b_posterior(&config.prior_b, &config.pinned_b, kk, fwd_mean, fwd_var);
            state.b_hat[kk] = bm;
            state.nu_b[kk] = bv;
        }
    }

    // Backward messages and recombination, per column and block.
    for ll in 0..l {
        for kk in 0..k {
            let (_, nu_c_bwd) = cavity(
                0.0,
                state.nu_c[ll],
                0.0,
                c_fwd_var[(kk, ll)],
                &mut state.clamp_count,
            );
            let nu_qk = state.nu_q[(kk, ll)];
            let mut nu_x_acc = 0.0;
            for i in 0..n {
                let q_i = state.q[(kk * n + i, ll)];
                let c_fwd_ki = c_coeff[kk] * q_i;
                let c_bwd_mean = if state.nu_c[ll] == 0.0 {
                    state.c_hat[(i, ll)]
                } else {
                    nu_c_bwd
                        * (state.c_hat[(i, ll)] / state.nu_c[ll] - c_fwd_ki / c_fwd_var[(kk, ll)])
                };
                let b_fwd_var = nu_qk / den_c[(i, ll)];
                let b_fwd_mean = q_i * state.c_hat[(i, ll)] / den_c[(i, ll)];
                let (b_bwd_mean, b_bwd_var) = cavity(
                    state.b_hat[kk],
                    state.nu_b[kk],
                    b_fwd_mean,
                    b_fwd_var,
                    &mut state.clamp_count,
                );
                let x_bwd = b_bwd_mean * c_bwd_mean;
                let nu_x_bwd = clamp_var(
                    b_bwd_mean * b_bwd_mean * nu_c_bwd
                        + b_bwd_var * (c_bwd_mean * c_bwd_mean + nu_c_bwd),
                    &mut state.clamp_count,
                );
                let nu = 1.0 / (1.0 / nu_qk + 1.0 / nu_x_bwd);
                state.x_hat[(kk * n + i, ll)] = nu * (q_i / nu_qk + x_bwd / nu_x_bwd);
                nu_x_acc += nu;
            }
            state.nu_x[(kk, ll)] = nu_x_acc / n as f64;
        }
    }
    state.iteration += 1;
    Ok(())
}

struct RestartOutcome {
    report: RestartReport,
    b_hat: DVector<f64>,
    c_hat: DMatrix<f64>,
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
    let mut state = MmvState::init(tm, config, b0);
    let r_norm = tm.r.norm();
    let mut trace = Vec::new();
    let mut diverged_at = None;
    let mut last_residual = f64::INFINITY;
    let mut last_good = (state.b_hat.clone(), state.c_hat.clone(), 1.0);
    let mut prev_b = state.b_hat.clone();
    let mut iterations = 0;

    for t in 0..config.max_iterations {
        let update_b = t % config.thinning == 0;
        let step = mmv_iteration(&mut state, tm, config, update_b);
        let finite = step.is_ok() && state.is_finite();
        let blown = state.x_hat.norm() > 1e12 * r_norm.max(1.0);
        if !finite || blown {
            diverged_at = Some(t);
            break;
        }
        iterations = t + 1;
        let residual = (&tm.r - &tm.phi * &state.x_hat).norm_squared();
        last_residual = residual;
        last_good = (state.b_hat.clone(), state.c_hat.clone(), state.beta_hat);
        trace.push(IterTrace {
            residual,
            beta_hat: state.beta_hat,
            clamp_events: state.clamp_count,
            nmse_b: truth.map(|tr| trace_nmse(state.b_hat.as_slice(), tr.b.as_slice(), &config.pinned_b)),
            nmse_c: truth
                .map(|tr| trace_nmse(state.c_hat.as_slice(), tr.c.as_slice(), &config.pinned_b)),
        });
        if update_b {
            let bn = state.b_hat.norm_squared();
            if bn > 0.0 {
                let diff = (&state.b_hat - &prev_b).norm_squared();
                if diff / bn < config.tolerance && t > 0 {
                    break;
                }
            }
            prev_b = state.b_hat.clone();
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

/// MMV driver: restarts with fresh `b` draws, selection by the summed
/// final residual `Σ_l ‖r_l − Φ x̂_l‖²`.
pub fn run_biutamp_mmv(
    tm: &TransformedModel<f64>,
    config: &BiUtampConfig,
    truth: Option<Truth>,
) -> Result<BiUtampResult> {
    config.validate(tm.k)?;

    let mut outcomes = Vec::with_capacity(config.n_restarts);
    for restart in 0..config.n_restarts {
        let mut rng = seeding::rng(config.seed, &[0xb2, restart as u64]);
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
        c_hat: chosen.c_hat.clone(),
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
