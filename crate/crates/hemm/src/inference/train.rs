//! Initialization and minibatch ELBO training.

use super::objective::{self, GradMode};
use super::pack::{GradBuf, TrainState, SIGMA2_FLOOR};
use super::{Trace, TraceRow, TrainConfig};
use crate::data::Dataset;
use crate::error::{HemmError, Result};
use crate::model::{sigmoid, ModelParams, OutcomeKind};
use crate::nn::{AdamConfig, AdamState, Network};
use crate::rng::substream;
use rand::seq::SliceRandom;
use rand::Rng;

/// Initialize parameters: every component mean at the sample mean, component
/// variances at the sample variances, outcome heads pre-trained on factual
/// outcomes without the treatment term, and treatment coefficients drawn
/// uniformly in (0, 0.1].
pub fn init_state(data: &Dataset, cfg: &TrainConfig) -> Result<TrainState> {
    if data.n() == 0 {
        return Err(HemmError::InvalidInput("empty dataset".into()));
    }
    let n = data.n() as f64;
    let d_cont = data.d_cont();
    let d_disc = data.d_disc();

    let mut mean = vec![0.0; d_cont];
    for row in &data.x_cont {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    let mut var = vec![0.0; d_cont];
    for row in &data.x_cont {
        for (s, (v, m)) in var.iter_mut().zip(row.iter().zip(&mean)) {
            *s += (v - m) * (v - m);
        }
    }
    let log_sigma2: Vec<f64> = var
        .iter()
        .enumerate()
        .map(|(j, s)| {
            let v = s / n;
            if v < SIGMA2_FLOOR {
                log::warn!("continuous covariate {j} has near-zero variance; floored at 1e-6");
            }
            (v.max(2.0 * SIGMA2_FLOOR) - SIGMA2_FLOOR).ln()
        })
        .collect();

    let mut disc_mean = vec![0.0; d_disc];
    for row in &data.x_disc {
        for (m, v) in disc_mean.iter_mut().zip(row) {
            *m += *v as f64;
        }
    }
    let logit_pi: Vec<f64> = disc_mean
        .iter()
        .map(|m| {
            let p = (m / n).clamp(1e-6, 1.0 - 1e-6);
            (p / (1.0 - p)).ln()
        })
        .collect();

    let mut init_rng = substream(cfg.seed, "init");
    let input_dim = d_cont + d_disc;
    let net = Network::random(input_dim, cfg.head_kind.hidden_widths(), cfg.head_mode, &mut init_rng);

    let mut gamma_rng = substream(cfg.seed, "init-gamma");
    let gamma: Vec<f64> = (0..cfg.k).map(|_| 0.1 - gamma_rng.gen_range(0.0..0.1)).collect();

    let mut state = TrainState {
        mu: vec![mean; cfg.k],
        log_sigma2: vec![log_sigma2; cfg.k],
        logit_pi: vec![logit_pi; cfg.k],
        gamma,
        log_sigma_y: cfg.sigma_y.ln(),
        net,
        outcome_kind: cfg.outcome_kind,
    };
    pretrain_heads(&mut state, data, cfg)?;
    Ok(state)
}

/// Spec-facing initialization returning constrained parameters.
pub fn init_params(data: &Dataset, cfg: &TrainConfig) -> Result<ModelParams> {
    Ok(init_state(data, cfg)?.to_model())
}

/// Pre-train f(x; w_t) on factual outcomes by gradient descent on
/// cross-entropy (binary) or squared error (continuous), no gamma term.
fn pretrain_heads(state: &mut TrainState, data: &Dataset, cfg: &TrainConfig) -> Result<()> {
    if cfg.pretrain_epochs == 0 {
        return Ok(());
    }
    let layout = state.layout();
    let mut adam = AdamState::new(layout.total, AdamConfig::with_step(cfg.pretrain_step, 0.0));
    let decay = vec![false; layout.total];
    let mut rng = substream(cfg.seed, "pretrain");
    let mut idx: Vec<usize> = (0..data.n()).collect();
    let batch = cfg.batch_size.min(data.n());
    for _ in 0..cfg.pretrain_epochs {
        idx.shuffle(&mut rng);
        for chunk in idx.chunks(batch) {
            let mut grad = GradBuf::zeros(state);
            for &i in chunk {
                let features = data.features(i);
                let t = data.t[i] as usize;
                let f = state.net.forward(&features, t)?;
                // descent gradient of the per-sample loss w.r.t. f
                let adj = match cfg.outcome_kind {
                    OutcomeKind::Binary => sigmoid(f) - data.y[i],
                    OutcomeKind::Continuous => f - data.y[i],
                };
                state.net.gradient_into(adj, &features, t, &mut grad.net);
            }
            let mut flat = state.flatten();
            adam.step(&mut flat, &grad.flatten(), &decay);
            state.read_flat(&flat);
        }
    }
    Ok(())
}

/// Objective used in the trace's `train_objective` column and the dev-based
/// stopping quantity.
#[derive(Clone, Copy)]
pub(super) enum Method {
    Elbo,
    Em,
}

pub(super) fn run_epochs(
    mut state: TrainState,
    train: &Dataset,
    dev: Option<&Dataset>,
    cfg: &TrainConfig,
    method: Method,
    mut step: impl FnMut(&mut TrainState, &[usize]) -> Result<()>,
) -> Result<(ModelParams, Trace)> {
    if cfg.early_stop && dev.is_none() {
        return Err(HemmError::InvalidInput(
            "early stopping requires a dev split".into(),
        ));
    }
    let all_train: Vec<usize> = (0..train.n()).collect();
    let all_dev: Vec<usize> = dev.map_or_else(Vec::new, |d| (0..d.n()).collect());
    let mut shuffle_rng = substream(cfg.seed, "shuffle");
    let mut idx = all_train.clone();
    let mut trace = Trace::default();
    let mut best: Option<(f64, ModelParams)> = None;
    let mut since_best = 0usize;

    for epoch in 1..=cfg.max_epochs {
        idx.shuffle(&mut shuffle_rng);
        for chunk in idx.chunks(cfg.batch_size) {
            step(&mut state, chunk)?;
        }
        let model = state.to_model();
        let train_objective = match method {
            Method::Elbo => objective::penalized_objective(
                &model,
                train,
                &all_train,
                cfg.lambda,
                cfg.prior_kind,
            )?,
            Method::Em => {
                objective::conditional_log_likelihood(&model, train, &all_train)?
                    - cfg.lambda
                        * crate::model::sparsity_penalty(&model.mixture.pi, cfg.prior_kind)
            }
        };
        if !train_objective.is_finite() {
            let flat = state.flatten();
            let block = state
                .layout()
                .find_non_finite(&flat)
                .unwrap_or("objective")
                .to_string();
            return Err(HemmError::NonFinite {
                block,
                detail: format!("train objective {train_objective} at epoch {epoch}"),
            });
        }
        let (dev_objective, dev_metric, stop_quantity) = match dev {
            Some(d) => {
                let ll = objective::conditional_log_likelihood(&model, d, &all_dev)?;
                let metric = factual_metric(&model, d)?;
                let stop = match method {
                    Method::Elbo => objective::elbo(&model, d, &all_dev)?,
                    Method::Em => ll,
                };
                (ll, metric, stop)
            }
            None => (f64::NAN, f64::NAN, train_objective),
        };
        trace.rows.push(TraceRow {
            epoch,
            train_objective,
            dev_objective,
            dev_metric,
        });
        let improved = best.as_ref().map_or(true, |(b, _)| stop_quantity > *b);
        if improved {
            best = Some((stop_quantity, model));
            since_best = 0;
        } else {
            since_best += 1;
            if cfg.early_stop && since_best >= cfg.patience {
                break;
            }
        }
    }
    let final_model = match (dev, best) {
        (Some(_), Some((_, m))) => m,
        _ => state.to_model(),
    };
    Ok((final_model, trace))
}

pub(super) fn factual_metric(model: &ModelParams, data: &Dataset) -> Result<f64> {
    let preds: Vec<f64> = (0..data.n())
        .map(|i| {
            let post = crate::model::membership_posterior(&model.mixture, data.covariates(i))?;
            let mut p = 0.0;
            for (k, w) in post.iter().enumerate() {
                p += w * crate::model::outcome_mean(model, data.covariates(i), data.t[i], k)?;
            }
            Ok(p)
        })
        .collect::<Result<_>>()?;
    match model.outcome.outcome_kind {
        OutcomeKind::Binary => {
            let labels: Vec<u8> = data.y.iter().map(|y| *y as u8).collect();
            Ok(crate::eval::roc_auc(&preds, &labels)?.1)
        }
        OutcomeKind::Continuous => {
            let mse: f64 = preds
                .iter()
                .zip(&data.y)
                .map(|(p, y)| (p - y) * (p - y))
                .sum::<f64>()
                / data.n() as f64;
            Ok(mse.sqrt())
        }
    }
}

/// Fit by minibatch gradient ascent on the penalized ELBO, with gradients
/// flowing through both the membership posterior and the outcome terms.
/// Stops when the dev ELBO fails to improve (patience epochs) and returns
/// the parameters from the best dev epoch.
pub fn train_elbo(
    train: &Dataset,
    dev: Option<&Dataset>,
    cfg: &TrainConfig,
) -> Result<(ModelParams, Trace)> {
    cfg.validate(train.n())?;
    let state = init_state(train, cfg)?;
    let layout = state.layout();
    let decay_mask = layout.decay_mask();
    let mut adam = AdamState::new(
        layout.total,
        AdamConfig::with_step(cfg.step_size, cfg.weight_decay),
    );
    run_epochs(state, train, dev, cfg, Method::Elbo, move |state, chunk| {
        let (value, grad) = objective::value_and_grad(state, cfg, train, chunk, &GradMode::Elbo)?;
        let grad_flat = grad.flatten();
        if !value.is_finite() || grad_flat.iter().any(|g| !g.is_finite()) {
            let block = layout
                .find_non_finite(&grad_flat)
                .unwrap_or("objective")
                .to_string();
            return Err(HemmError::NonFinite {
                block,
                detail: format!("minibatch objective {value}"),
            });
        }
        // ascend: Adam descends, so negate
        let neg: Vec<f64> = grad_flat.iter().map(|g| -g).collect();
        let mut flat = state.flatten();
        adam.step(&mut flat, &neg, &decay_mask);
        state.read_flat(&flat);
        Ok(())
    })
}
