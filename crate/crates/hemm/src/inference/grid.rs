//! Grid search over K, lambda, head mode, and random restarts, selecting by
//! dev metric (AU-ROC for binary outcomes, RMSE for continuous).

use super::train::{factual_metric, train_elbo};
use super::TrainConfig;
use crate::data::Dataset;
use crate::error::{HemmError, Result};
use crate::model::{ModelParams, OutcomeKind};
use crate::nn::HeadMode;
use crate::rng::derive_seed;
use std::path::Path;

#[derive(Debug, Clone)]
pub struct GridSpec {
    pub ks: Vec<usize>,
    pub lambdas: Vec<f64>,
    pub restarts: usize,
    pub head_modes: Vec<HeadMode>,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            ks: vec![2, 3, 4],
            lambdas: vec![0.0, 1e-3, 1e-2, 1e-1],
            restarts: 5,
            head_modes: vec![HeadMode::Separate, HeadMode::SharedTrunk],
        }
    }
}

impl GridSpec {
    pub fn runs(&self) -> usize {
        self.ks.len() * self.lambdas.len() * self.restarts * self.head_modes.len()
    }
}

/// One completed grid cell.
#[derive(Debug, Clone)]
pub struct LeaderboardRow {
    pub k: usize,
    pub lambda: f64,
    pub restart: usize,
    pub head_mode: HeadMode,
    /// Dev AU-ROC (binary) or dev RMSE (continuous).
    pub dev_metric: f64,
    /// Fraction of pi entries below 1e-3; 0 when there are no binary covariates.
    pub pi_zero_fraction: f64,
    /// Where the cell's checkpoint was written, if an output dir was given.
    pub checkpoint: Option<String>,
}

pub fn pi_zero_fraction(p: &ModelParams) -> f64 {
    let total: usize = p.mixture.pi.iter().map(|row| row.len()).sum();
    if total == 0 {
        return 0.0;
    }
    let zeros = p
        .mixture
        .pi
        .iter()
        .flatten()
        .filter(|v| v.abs() < 1e-3)
        .count();
    zeros as f64 / total as f64
}

fn goodness(metric: f64, kind: OutcomeKind) -> f64 {
    match kind {
        OutcomeKind::Binary => metric,
        OutcomeKind::Continuous => -metric,
    }
}

/// Train every grid cell and return the best model (by dev metric) with the
/// full leaderboard, sorted best-first; ties break toward smaller K, then
/// smaller lambda. Each cell gets an isolated seed substream, so cells are
/// independent of evaluation order. If `out_dir` is given, every cell's
/// checkpoint is written there.
pub fn grid_search(
    train: &Dataset,
    dev: &Dataset,
    base: &TrainConfig,
    grid: &GridSpec,
    out_dir: Option<&Path>,
) -> Result<(ModelParams, Vec<LeaderboardRow>)> {
    if grid.runs() == 0 {
        return Err(HemmError::InvalidInput("empty grid".into()));
    }
    let mut rows = Vec::with_capacity(grid.runs());
    let mut best: Option<(f64, usize, f64, ModelParams)> = None;
    for &k in &grid.ks {
        for &lambda in &grid.lambdas {
            for &head_mode in &grid.head_modes {
                for restart in 0..grid.restarts {
                    let mut cfg = base.clone();
                    cfg.k = k;
                    cfg.lambda = lambda;
                    cfg.head_mode = head_mode;
                    cfg.seed = derive_seed(
                        base.seed,
                        &format!("grid-k{k}-lambda{lambda}-{head_mode}-restart{restart}"),
                    );
                    let (model, _) = train_elbo(train, Some(dev), &cfg)?;
                    let dev_metric = factual_metric(&model, dev)?;
                    let checkpoint = match out_dir {
                        Some(dir) => {
                            let name =
                                format!("k{k}_lambda{lambda}_{head_mode}_restart{restart}.ckpt");
                            let path = dir.join(name);
                            crate::checkpoint::save(&model, &path)?;
                            Some(path.to_string_lossy().into_owned())
                        }
                        None => None,
                    };
                    rows.push(LeaderboardRow {
                        k,
                        lambda,
                        restart,
                        head_mode,
                        dev_metric,
                        pi_zero_fraction: pi_zero_fraction(&model),
                        checkpoint,
                    });
                    let g = goodness(dev_metric, base.outcome_kind);
                    let better = match &best {
                        None => true,
                        Some((bg, bk, bl, _)) => {
                            g > *bg || (g == *bg && (k < *bk || (k == *bk && lambda < *bl)))
                        }
                    };
                    if better {
                        best = Some((g, k, lambda, model));
                    }
                }
            }
        }
    }
    rows.sort_by(|a, b| {
        let ga = goodness(a.dev_metric, base.outcome_kind);
        let gb = goodness(b.dev_metric, base.outcome_kind);
        gb.partial_cmp(&ga)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.k.cmp(&b.k))
            .then(a.lambda.partial_cmp(&b.lambda).unwrap_or(std::cmp::Ordering::Equal))
    });
    let (_, _, _, model) = best.expect("non-empty grid produced no rows");
    Ok((model, rows))
}

/// One record per cell: K, lambda, restart, head_mode, dev_metric,
/// pi_zero_fraction, checkpoint path.
pub fn leaderboard_csv(rows: &[LeaderboardRow]) -> String {
    let mut s =
        String::from("k,lambda,restart,head_mode,dev_metric,pi_zero_fraction,checkpoint\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.k,
            r.lambda,
            r.restart,
            r.head_mode,
            r.dev_metric,
            r.pi_zero_fraction,
            r.checkpoint.as_deref().unwrap_or("")
        ));
    }
    s
}
