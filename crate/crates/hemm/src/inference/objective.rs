//! Training objectives and their exact gradients.
//!
//! Two objectives share one gradient engine: the ELBO (posterior-weighted
//! outcome log-likelihood, with gradients flowing through both the posterior
//! and the outcome factors) and the EM auxiliary Q (responsibility-weighted
//! joint of membership and outcome, responsibilities held fixed). Both are
//! penalized by `lambda * Omega(pi)`.

use crate::data::Dataset;
use crate::error::{HemmError, Result};
use crate::model::{
    log_component_density, log_sum_exp, sigmoid, softmax_checked, softplus, sparsity_penalty,
    ModelParams, OutcomeKind, PriorKind,
};
use super::pack::{GradBuf, TrainState};
use super::TrainConfig;

const LN_2PI: f64 = 1.8378770664093453;

/// Log-likelihood of outcome `y` under arm `t` and component `k`.
pub fn outcome_log_lik(p: &ModelParams, data: &Dataset, i: usize, k: usize) -> Result<f64> {
    let eta = crate::model::outcome_linear(p, data.covariates(i), data.t[i], k)?;
    let y = data.y[i];
    Ok(match p.outcome.outcome_kind {
        OutcomeKind::Binary => -(y * softplus(-eta) + (1.0 - y) * softplus(eta)),
        OutcomeKind::Continuous => {
            let s2 = p.outcome.sigma_y * p.outcome.sigma_y;
            let d = y - eta;
            -0.5 * (LN_2PI + s2.ln() + d * d / s2)
        }
    })
}

/// ELBO over the rows `idx`: sum_i sum_k p(z=k|x_i) ln p(y_i|x_i,t_i,z=k).
pub fn elbo(p: &ModelParams, data: &Dataset, idx: &[usize]) -> Result<f64> {
    let mut total = 0.0;
    for &i in idx {
        let post = crate::model::membership_posterior(&p.mixture, data.covariates(i))?;
        for (k, w) in post.iter().enumerate() {
            if *w > 0.0 {
                total += w * outcome_log_lik(p, data, i, k)?;
            }
        }
    }
    Ok(total)
}

/// Exact conditional log-likelihood sum_i ln sum_k p(z=k|x_i) p(y_i|...).
pub fn conditional_log_likelihood(p: &ModelParams, data: &Dataset, idx: &[usize]) -> Result<f64> {
    let mut total = 0.0;
    for &i in idx {
        let post = crate::model::membership_posterior(&p.mixture, data.covariates(i))?;
        let logs: Vec<f64> = (0..p.k())
            .map(|k| Ok(post[k].ln() + outcome_log_lik(p, data, i, k)?))
            .collect::<Result<_>>()?;
        total += log_sum_exp(&logs);
    }
    Ok(total)
}

/// ELBO minus the sparsity penalty.
pub fn penalized_objective(
    p: &ModelParams,
    data: &Dataset,
    idx: &[usize],
    lambda: f64,
    prior: PriorKind,
) -> Result<f64> {
    Ok(elbo(p, data, idx)? - lambda * sparsity_penalty(&p.mixture.pi, prior))
}

/// Posterior responsibilities h[i][k] = p(z=k | y_i, x_i, t_i), proportional
/// to the component density of x times the outcome likelihood of y.
pub fn em_e_step(p: &ModelParams, data: &Dataset, idx: &[usize]) -> Result<Vec<Vec<f64>>> {
    idx.iter()
        .map(|&i| {
            let logs: Vec<f64> = (0..p.k())
                .map(|k| {
                    Ok(log_component_density(&p.mixture, data.covariates(i), k)?
                        + outcome_log_lik(p, data, i, k)?)
                })
                .collect::<Result<_>>()?;
            softmax_checked(&logs).ok_or(HemmError::DegenerateResponsibility(i))
        })
        .collect()
}

/// Which objective the gradient engine evaluates.
pub enum GradMode<'a> {
    Elbo,
    /// EM auxiliary with responsibilities fixed; rows align with the batch.
    EmQ(&'a [Vec<f64>]),
}

/// Penalized objective value over the batch plus its gradient in the
/// unconstrained parameterization (ascent direction).
pub fn value_and_grad(
    state: &TrainState,
    cfg: &TrainConfig,
    data: &Dataset,
    idx: &[usize],
    mode: &GradMode,
) -> Result<(f64, GradBuf)> {
    let k_comp = state.k();
    let model = state.to_model();
    let mut grad = GradBuf::zeros(state);
    let mut value = 0.0;
    let sigma_y2 = state.sigma_y() * state.sigma_y();

    for (row, &i) in idx.iter().enumerate() {
        let x = data.covariates(i);
        let t = data.t[i] as usize;
        let y = data.y[i];

        // component log densities and posterior
        let logs: Vec<f64> = (0..k_comp)
            .map(|k| log_component_density(&model.mixture, x, k))
            .collect::<Result<_>>()?;
        let post = softmax_checked(&logs).ok_or(HemmError::DegeneratePosterior(k_comp))?;

        // outcome terms; one forward pass shared across components
        let features = crate::model::feature_vec(x);
        let f = state.net.forward(&features, t)?;
        let mut log_lik = vec![0.0; k_comp];
        let mut dl_deta = vec![0.0; k_comp];
        for k in 0..k_comp {
            let eta = f + if t == 1 { state.gamma[k] } else { 0.0 };
            match state.outcome_kind {
                OutcomeKind::Binary => {
                    log_lik[k] = -(y * softplus(-eta) + (1.0 - y) * softplus(eta));
                    dl_deta[k] = y - sigmoid(eta);
                }
                OutcomeKind::Continuous => {
                    let d = y - eta;
                    log_lik[k] = -0.5 * (LN_2PI + sigma_y2.ln() + d * d / sigma_y2);
                    dl_deta[k] = d / sigma_y2;
                }
            }
        }

        // per-component adjoints on the log density (coef_a) and on the
        // outcome log-likelihood (coef_l)
        let (sample_value, coef_a, coef_l): (f64, Vec<f64>, Vec<f64>) = match mode {
            GradMode::Elbo => {
                let expected: f64 = post.iter().zip(&log_lik).map(|(p, l)| p * l).sum();
                let coef_a = (0..k_comp)
                    .map(|k| post[k] * (log_lik[k] - expected))
                    .collect();
                (expected, coef_a, post.clone())
            }
            GradMode::EmQ(h) => {
                let h = &h[row];
                let lse = log_sum_exp(&logs);
                let mut v = 0.0;
                for k in 0..k_comp {
                    if h[k] > 0.0 {
                        v += h[k] * ((logs[k] - lse) + log_lik[k]);
                    }
                }
                let coef_a = (0..k_comp).map(|k| h[k] - post[k]).collect();
                (v, coef_a, h.clone())
            }
        };
        value += sample_value;

        // density gradients in unconstrained coordinates
        for k in 0..k_comp {
            let ca = coef_a[k];
            if ca == 0.0 {
                continue;
            }
            for (j, v) in x.x_cont.iter().enumerate() {
                let s2 = state.sigma2(k, j);
                let d = v - state.mu[k][j];
                grad.mu[k][j] += ca * d / s2;
                // d(log density)/d(sigma2) * d(sigma2)/d(log_sigma2)
                grad.log_sigma2[k][j] +=
                    ca * (d * d / s2 - 1.0) / (2.0 * s2) * state.log_sigma2[k][j].exp();
            }
            for (j, v) in x.x_disc.iter().enumerate() {
                grad.logit_pi[k][j] += ca * (*v as f64 - state.pi(k, j));
            }
        }

        // outcome gradients
        let mut f_adjoint = 0.0;
        for k in 0..k_comp {
            let cl = coef_l[k];
            if cl == 0.0 {
                continue;
            }
            f_adjoint += cl * dl_deta[k];
            if t == 1 {
                grad.gamma[k] += cl * dl_deta[k];
            }
            if cfg.learn_sigma_y && state.outcome_kind == OutcomeKind::Continuous {
                let eta = f + if t == 1 { state.gamma[k] } else { 0.0 };
                let d = y - eta;
                grad.log_sigma_y += cl * (d * d / sigma_y2 - 1.0);
            }
        }
        if f_adjoint != 0.0 {
            state.net.gradient_into(f_adjoint, &features, t, &mut grad.net);
        }
    }

    // sparsity penalty on the constrained pi values
    if state.d_disc() > 0 && cfg.lambda > 0.0 {
        let pi = state.pi_matrix();
        value -= cfg.lambda * sparsity_penalty(&pi, cfg.prior_kind);
        match cfg.prior_kind {
            PriorKind::LaplaceL1 => {
                for k in 0..k_comp {
                    for j in 0..state.d_disc() {
                        let p = pi[k][j];
                        grad.logit_pi[k][j] -= cfg.lambda * p * (1.0 - p);
                    }
                }
            }
            PriorKind::GroupL12 => {
                for j in 0..state.d_disc() {
                    let norm: f64 = pi.iter().map(|row| row[j] * row[j]).sum::<f64>().sqrt();
                    if norm == 0.0 {
                        continue;
                    }
                    for k in 0..k_comp {
                        let p = pi[k][j];
                        grad.logit_pi[k][j] -= cfg.lambda * (p / norm) * p * (1.0 - p);
                    }
                }
            }
        }
    }

    Ok((value, grad))
}
