//! Model fitting: penalized conditional likelihood via minibatch ELBO ascent
//! (primary) or EM (alternative), plus initialization and grid search.

mod em;
mod grid;
pub mod objective;
pub mod pack;
mod train;

pub use em::{em_m_step, train_em};
pub use grid::{grid_search, leaderboard_csv, pi_zero_fraction, GridSpec, LeaderboardRow};
pub use objective::{
    conditional_log_likelihood, elbo, em_e_step, penalized_objective, GradMode,
};
pub use pack::TrainState;
pub use train::{init_params, init_state, train_elbo};

use crate::model::{OutcomeKind, PriorKind};
use crate::nn::HeadMode;
use serde::{Deserialize, Serialize};

/// Outcome-function family for f(x; w_t).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    Linear,
    Mlp1,
    Mlp2,
}

impl HeadKind {
    pub fn hidden_widths(self) -> &'static [usize] {
        match self {
            HeadKind::Linear => &[],
            HeadKind::Mlp1 => &[16],
            HeadKind::Mlp2 => &[16, 8],
        }
    }
}

/// Everything a training run needs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub k: usize,
    /// Sparsity prior strength, >= 0.
    pub lambda: f64,
    pub prior_kind: PriorKind,
    pub outcome_kind: OutcomeKind,
    pub head_mode: HeadMode,
    pub head_kind: HeadKind,
    pub step_size: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub early_stop: bool,
    /// Epochs without dev improvement before stopping.
    pub patience: usize,
    pub weight_decay: f64,
    pub seed: u64,
    pub restarts: usize,
    pub sigma_y: f64,
    pub learn_sigma_y: bool,
    pub pretrain_epochs: usize,
    pub pretrain_step: f64,
    /// Gradient steps per minibatch in the EM M-step.
    pub m_step_iters: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            k: 2,
            lambda: 0.0,
            prior_kind: PriorKind::LaplaceL1,
            outcome_kind: OutcomeKind::Binary,
            head_mode: HeadMode::Separate,
            head_kind: HeadKind::Linear,
            step_size: 1e-4,
            batch_size: 10,
            max_epochs: 500,
            early_stop: true,
            patience: 1,
            weight_decay: 1e-4,
            seed: 0,
            restarts: 5,
            sigma_y: 1.0,
            learn_sigma_y: false,
            pretrain_epochs: 20,
            pretrain_step: 1e-3,
            m_step_iters: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, n: usize) -> crate::error::Result<()> {
        use crate::error::HemmError;
        if self.k < 1 {
            return Err(HemmError::InvalidInput("K must be at least 1".into()));
        }
        if self.step_size <= 0.0 {
            return Err(HemmError::InvalidInput("step size must be positive".into()));
        }
        if self.lambda < 0.0 {
            return Err(HemmError::InvalidInput("lambda must be >= 0".into()));
        }
        if self.batch_size == 0 || self.batch_size > n {
            return Err(HemmError::InvalidInput(format!(
                "batch size {} must be in 1..={n}",
                self.batch_size
            )));
        }
        Ok(())
    }
}

/// One per-epoch record of a training run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceRow {
    pub epoch: usize,
    /// The method's own penalized training objective.
    pub train_objective: f64,
    /// Unpenalized conditional log-likelihood on dev (NaN without a dev set);
    /// the same quantity for ELBO and EM runs, so curves compare directly.
    pub dev_objective: f64,
    /// Dev AU-ROC for binary outcomes, dev RMSE for continuous.
    pub dev_metric: f64,
}

#[derive(Debug, Clone, Default)]
pub struct Trace {
    pub rows: Vec<TraceRow>,
}

impl Trace {
    /// Delimited text: columns epoch, train_objective, dev_objective,
    /// dev_metric.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_objective,dev_objective,dev_metric\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{}\n",
                r.epoch, r.train_objective, r.dev_objective, r.dev_metric
            ));
        }
        s
    }
}
