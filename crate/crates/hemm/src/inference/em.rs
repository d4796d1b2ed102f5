//! Generalized EM: exact responsibilities in the E-step, a few Adam steps on
//! the auxiliary objective Q in the M-step. Because the M-step never returns
//! parameters with a lower Q (it reverts if the steps hurt), the penalized
//! conditional log-likelihood is non-decreasing when batches cover the full
//! dataset.

use super::objective::{self, GradMode};
use super::pack::TrainState;
use super::train::{init_state, run_epochs, Method};
use super::{Trace, TrainConfig};
use crate::data::Dataset;
use crate::error::{HemmError, Result};
use crate::model::ModelParams;
use crate::nn::{AdamConfig, AdamState};

/// Partial M-step: `cfg.m_step_iters` Adam steps on Q with responsibilities
/// `h` fixed, starting a fresh optimizer each call. Returns the final Q and
/// reverts to the incoming parameters if the steps decreased Q.
pub fn em_m_step(
    state: &mut TrainState,
    data: &Dataset,
    idx: &[usize],
    h: &[Vec<f64>],
    cfg: &TrainConfig,
) -> Result<f64> {
    if h.len() != idx.len() {
        return Err(HemmError::DimensionMismatch(format!(
            "{} responsibility rows for a batch of {}",
            h.len(),
            idx.len()
        )));
    }
    let layout = state.layout();
    let decay_mask = layout.decay_mask();
    let mut adam = AdamState::new(
        layout.total,
        AdamConfig::with_step(cfg.step_size, cfg.weight_decay),
    );
    let mode = GradMode::EmQ(h);
    let start = state.clone();
    let (q_start, _) = objective::value_and_grad(state, cfg, data, idx, &mode)?;
    let mut q = q_start;
    for _ in 0..cfg.m_step_iters {
        let (value, grad) = objective::value_and_grad(state, cfg, data, idx, &mode)?;
        let grad_flat = grad.flatten();
        if !value.is_finite() || grad_flat.iter().any(|g| !g.is_finite()) {
            let block = layout
                .find_non_finite(&grad_flat)
                .unwrap_or("objective")
                .to_string();
            return Err(HemmError::NonFinite {
                block,
                detail: format!("m-step objective {value}"),
            });
        }
        let neg: Vec<f64> = grad_flat.iter().map(|g| -g).collect();
        let mut flat = state.flatten();
        adam.step(&mut flat, &neg, &decay_mask);
        state.read_flat(&flat);
        q = objective::value_and_grad(state, cfg, data, idx, &mode)?.0;
    }
    if q < q_start {
        *state = start;
        return Ok(q_start);
    }
    Ok(q)
}

/// Fit by EM: per minibatch, one exact E-step then a partial M-step. Shares
/// initialization, tracing, and stopping with [`super::train_elbo`]; the
/// train objective column is the penalized conditional log-likelihood.
pub fn train_em(
    train: &Dataset,
    dev: Option<&Dataset>,
    cfg: &TrainConfig,
) -> Result<(ModelParams, Trace)> {
    cfg.validate(train.n())?;
    let state = init_state(train, cfg)?;
    run_epochs(state, train, dev, cfg, Method::Em, move |state, chunk| {
        let h = objective::em_e_step(&state.to_model(), train, chunk)?;
        em_m_step(state, train, chunk, &h, cfg)?;
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::HeadKind;
    use crate::model::{sparsity_penalty, OutcomeKind};
    use crate::nn::HeadMode;
    use crate::rng::substream;
    use rand::Rng;

    fn gaussian_mix_data(n: usize, seed: u64) -> Dataset {
        let mut rng = substream(seed, "em-data");
        let mut x_cont = Vec::new();
        let mut t = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            let shift = if i % 2 == 0 { -1.0 } else { 1.0 };
            x_cont.push(vec![shift + rng.gen_range(-0.3..0.3)]);
            let ti = u8::from(rng.gen_bool(0.5));
            t.push(ti);
            let p = if shift > 0.0 && ti == 1 { 0.9 } else { 0.3 };
            y.push(f64::from(rng.gen_bool(p)));
        }
        Dataset {
            x_cont,
            x_disc: vec![vec![]; n],
            t,
            y,
            y0: None,
            y1: None,
            true_group: None,
            true_effect: None,
            cont_names: vec!["c0".into()],
            disc_names: vec![],
            standardized: false,
        }
    }

    fn cfg() -> TrainConfig {
        TrainConfig {
            k: 2,
            outcome_kind: OutcomeKind::Binary,
            head_kind: HeadKind::Linear,
            head_mode: HeadMode::Separate,
            pretrain_epochs: 5,
            step_size: 1e-3,
            weight_decay: 0.0,
            early_stop: false,
            seed: 11,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn m_step_never_decreases_q() {
        let data = gaussian_mix_data(40, 1);
        let cfg = cfg();
        let mut state = init_state(&data, &cfg).unwrap();
        let idx: Vec<usize> = (0..data.n()).collect();
        let h = objective::em_e_step(&state.to_model(), &data, &idx).unwrap();
        let mode = GradMode::EmQ(&h);
        let q0 = objective::value_and_grad(&state, &cfg, &data, &idx, &mode).unwrap().0;
        let q1 = em_m_step(&mut state, &data, &idx, &h, &cfg).unwrap();
        assert!(q1 >= q0 - 1e-12, "q dropped: {q0} -> {q1}");
        let q_check = objective::value_and_grad(&state, &cfg, &data, &idx, &mode).unwrap().0;
        assert!((q_check - q1).abs() < 1e-12);
    }

    #[test]
    fn full_batch_em_is_monotone() {
        let data = gaussian_mix_data(60, 2);
        let mut cfg = cfg();
        cfg.batch_size = data.n();
        cfg.lambda = 1e-2;
        let mut state = init_state(&data, &cfg).unwrap();
        let idx: Vec<usize> = (0..data.n()).collect();
        let objective_of = |state: &TrainState| {
            let model = state.to_model();
            objective::conditional_log_likelihood(&model, &data, &idx).unwrap()
                - cfg.lambda * sparsity_penalty(&model.mixture.pi, cfg.prior_kind)
        };
        let mut prev = objective_of(&state);
        for iter in 0..30 {
            let h = objective::em_e_step(&state.to_model(), &data, &idx).unwrap();
            em_m_step(&mut state, &data, &idx, &h, &cfg).unwrap();
            let cur = objective_of(&state);
            assert!(
                cur >= prev - 1e-8,
                "iteration {iter}: objective dropped {prev} -> {cur}"
            );
            prev = cur;
        }
    }

    #[test]
    fn mismatched_responsibilities_rejected() {
        let data = gaussian_mix_data(10, 3);
        let cfg = cfg();
        let mut state = init_state(&data, &cfg).unwrap();
        let idx: Vec<usize> = (0..data.n()).collect();
        let h = vec![vec![0.5, 0.5]; 3];
        assert!(em_m_step(&mut state, &data, &idx, &h, &cfg).is_err());
    }

    #[test]
    fn train_em_runs_and_traces() {
        let data = gaussian_mix_data(50, 4);
        let dev = gaussian_mix_data(30, 5);
        let mut cfg = cfg();
        cfg.max_epochs = 5;
        cfg.batch_size = 10;
        let (model, trace) = train_em(&data, Some(&dev), &cfg).unwrap();
        assert_eq!(model.k(), 2);
        assert_eq!(trace.rows.len(), 5);
        assert!(trace.rows.iter().all(|r| r.train_objective.is_finite()));
        assert!(trace.rows.iter().all(|r| r.dev_objective.is_finite()));
    }
}
