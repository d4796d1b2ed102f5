//! Virtual twins (regressor variant): stage 1 fits per-arm bagged trees to
//! the observed outcomes; stage 2 fits one interpretable CART regressor to
//! the per-row predicted effect m1(x) - m0(x).

use super::cart::{BaggedTrees, CartConfig, CartTree, SplitCriterion};
use crate::data::Dataset;
use crate::error::{HemmError, Result};
use crate::model::OutcomeKind;
use crate::rng::substream;

#[derive(Debug, Clone)]
pub struct VtConfig {
    pub stage1_trees: usize,
    pub stage1_depth: usize,
    pub stage2_depth: usize,
    pub min_leaf: usize,
    pub seed: u64,
}

impl Default for VtConfig {
    fn default() -> Self {
        VtConfig {
            stage1_trees: 20,
            stage1_depth: 6,
            stage2_depth: 3,
            min_leaf: 5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct VirtualTwins {
    pub arm0: BaggedTrees,
    pub arm1: BaggedTrees,
    /// The interpretable effect tree; its prediction is the subgroup score.
    pub effect_tree: CartTree,
}

impl VirtualTwins {
    /// Stage-2 tree prediction of the treatment effect at `features`.
    pub fn cate(&self, features: &[f64]) -> f64 {
        self.effect_tree.predict(features)
    }

    /// Stage-1 predicted potential outcomes (m0, m1).
    pub fn potential_outcomes(&self, features: &[f64]) -> (f64, f64) {
        (self.arm0.predict(features), self.arm1.predict(features))
    }

    pub fn export_rules(&self, feature_names: &[String]) -> String {
        self.effect_tree.export_rules(feature_names)
    }
}

pub fn fit_virtual_twins(data: &Dataset, kind: OutcomeKind, cfg: &VtConfig) -> Result<VirtualTwins> {
    let mut arms: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for i in 0..data.n() {
        arms[data.t[i] as usize].push(i);
    }
    if arms[0].is_empty() || arms[1].is_empty() {
        return Err(HemmError::InvalidInput(
            "virtual twins needs rows in both arms".into(),
        ));
    }
    let criterion = match kind {
        OutcomeKind::Binary => SplitCriterion::Gini,
        OutcomeKind::Continuous => SplitCriterion::Mse,
    };
    let stage1_cfg = CartConfig {
        max_depth: cfg.stage1_depth,
        min_leaf: cfg.min_leaf,
        criterion,
    };
    let fit_arm = |idx: &[usize], name: &str| -> Result<BaggedTrees> {
        let x: Vec<Vec<f64>> = idx.iter().map(|&i| data.features(i)).collect();
        let y: Vec<f64> = idx.iter().map(|&i| data.y[i]).collect();
        let mut rng = substream(cfg.seed, name);
        BaggedTrees::fit(&x, &y, cfg.stage1_trees, &stage1_cfg, &mut rng)
    };
    let arm0 = fit_arm(&arms[0], "vt-arm0")?;
    let arm1 = fit_arm(&arms[1], "vt-arm1")?;

    let x_all: Vec<Vec<f64>> = (0..data.n()).map(|i| data.features(i)).collect();
    let diffs: Vec<f64> = x_all
        .iter()
        .map(|row| arm1.predict(row) - arm0.predict(row))
        .collect();
    let stage2_cfg = CartConfig {
        max_depth: cfg.stage2_depth,
        min_leaf: cfg.min_leaf,
        criterion: SplitCriterion::Mse,
    };
    let effect_tree = CartTree::fit(&x_all, &diffs, &stage2_cfg)?;
    Ok(VirtualTwins { arm0, arm1, effect_tree })
}
