//! CART trees (regression and classification) and bagged ensembles. Splits
//! are exhaustive over sorted-value midpoints; leaves predict the target mean
//! (which is the positive-class probability for 0/1 targets).

use crate::error::{HemmError, Result};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitCriterion {
    /// Squared-error reduction (regression).
    Mse,
    /// Gini reduction (classification on 0/1 targets).
    Gini,
}

#[derive(Debug, Clone)]
pub struct CartConfig {
    pub max_depth: usize,
    pub min_leaf: usize,
    pub criterion: SplitCriterion,
}

impl Default for CartConfig {
    fn default() -> Self {
        CartConfig {
            max_depth: 3,
            min_leaf: 5,
            criterion: SplitCriterion::Mse,
        }
    }
}

#[derive(Debug, Clone)]
pub enum CartNode {
    Leaf {
        prediction: f64,
        n: usize,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: Box<CartNode>,
        right: Box<CartNode>,
    },
}

#[derive(Debug, Clone)]
pub struct CartTree {
    pub root: CartNode,
    pub config: CartConfig,
}

fn impurity(targets: &[f64], idx: &[usize], criterion: SplitCriterion) -> f64 {
    let n = idx.len() as f64;
    if idx.is_empty() {
        return 0.0;
    }
    let mean = idx.iter().map(|&i| targets[i]).sum::<f64>() / n;
    match criterion {
        // total squared error; for 0/1 targets n*gini/2 has the same argmax,
        // but keep the criteria distinct for clarity
        SplitCriterion::Mse => idx.iter().map(|&i| (targets[i] - mean).powi(2)).sum(),
        SplitCriterion::Gini => n * 2.0 * mean * (1.0 - mean),
    }
}

/// Best (feature, threshold, gain) over all midpoints, requiring both sides
/// to hold at least `min_leaf` rows. Ties break toward the lower feature
/// index, then the smaller threshold.
fn best_split(
    x: &[Vec<f64>],
    targets: &[f64],
    idx: &[usize],
    cfg: &CartConfig,
) -> Option<(usize, f64, f64)> {
    let d = x.first().map_or(0, |r| r.len());
    let parent = impurity(targets, idx, cfg.criterion);
    let mut best: Option<(usize, f64, f64)> = None;
    for feature in 0..d {
        let mut order: Vec<usize> = idx.to_vec();
        order.sort_by(|&a, &b| x[a][feature].partial_cmp(&x[b][feature]).unwrap());
        // prefix sums over the sorted order
        let n = order.len();
        let vals: Vec<f64> = order.iter().map(|&i| targets[i]).collect();
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        let total: f64 = vals.iter().sum();
        let total_sq: f64 = vals.iter().map(|v| v * v).sum();
        for cut in 1..n {
            sum += vals[cut - 1];
            sumsq += vals[cut - 1] * vals[cut - 1];
            let lo = x[order[cut - 1]][feature];
            let hi = x[order[cut]][feature];
            if lo == hi {
                continue;
            }
            if cut < cfg.min_leaf || n - cut < cfg.min_leaf {
                continue;
            }
            let threshold = 0.5 * (lo + hi);
            let nl = cut as f64;
            let nr = (n - cut) as f64;
            let child = match cfg.criterion {
                SplitCriterion::Mse => {
                    let left = sumsq - sum * sum / nl;
                    let rs = total - sum;
                    let right = (total_sq - sumsq) - rs * rs / nr;
                    left + right
                }
                SplitCriterion::Gini => {
                    let ml = sum / nl;
                    let mr = (total - sum) / nr;
                    nl * 2.0 * ml * (1.0 - ml) + nr * 2.0 * mr * (1.0 - mr)
                }
            };
            let gain = parent - child;
            let better = match best {
                None => gain > 1e-12,
                Some((bf, bt, bg)) => {
                    gain > bg + 1e-12
                        || ((gain - bg).abs() <= 1e-12
                            && (feature < bf || (feature == bf && threshold < bt)))
                }
            };
            if better {
                best = Some((feature, threshold, gain));
            }
        }
    }
    best
}

fn grow(x: &[Vec<f64>], targets: &[f64], idx: &[usize], depth: usize, cfg: &CartConfig) -> CartNode {
    let mean = idx.iter().map(|&i| targets[i]).sum::<f64>() / idx.len() as f64;
    if depth >= cfg.max_depth || idx.len() < 2 * cfg.min_leaf {
        return CartNode::Leaf {
            prediction: mean,
            n: idx.len(),
        };
    }
    match best_split(x, targets, idx, cfg) {
        None => CartNode::Leaf {
            prediction: mean,
            n: idx.len(),
        },
        Some((feature, threshold, _)) => {
            let (l, r): (Vec<usize>, Vec<usize>) =
                idx.iter().partition(|&&i| x[i][feature] <= threshold);
            CartNode::Split {
                feature,
                threshold,
                left: Box::new(grow(x, targets, &l, depth + 1, cfg)),
                right: Box::new(grow(x, targets, &r, depth + 1, cfg)),
            }
        }
    }
}

impl CartTree {
    pub fn fit(x: &[Vec<f64>], targets: &[f64], cfg: &CartConfig) -> Result<CartTree> {
        if x.is_empty() || x.len() != targets.len() {
            return Err(HemmError::InvalidInput(
                "tree fitting needs matching nonempty rows and targets".into(),
            ));
        }
        let idx: Vec<usize> = (0..x.len()).collect();
        Ok(CartTree {
            root: grow(x, targets, &idx, 0, cfg),
            config: cfg.clone(),
        })
    }

    pub fn predict(&self, row: &[f64]) -> f64 {
        let mut node = &self.root;
        loop {
            match node {
                CartNode::Leaf { prediction, .. } => return *prediction,
                CartNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    node = if row[*feature] <= *threshold { left } else { right };
                }
            }
        }
    }

    /// Indented text rules, one line per node.
    pub fn export_rules(&self, feature_names: &[String]) -> String {
        let mut out = String::new();
        fn walk(node: &CartNode, names: &[String], depth: usize, out: &mut String) {
            let pad = "  ".repeat(depth);
            match node {
                CartNode::Leaf { prediction, n } => {
                    out.push_str(&format!("{pad}predict {prediction:.6} (n={n})\n"));
                }
                CartNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    let name = names
                        .get(*feature)
                        .cloned()
                        .unwrap_or_else(|| format!("x{feature}"));
                    out.push_str(&format!("{pad}if {name} <= {threshold:.6}:\n"));
                    walk(left, names, depth + 1, out);
                    out.push_str(&format!("{pad}else:\n"));
                    walk(right, names, depth + 1, out);
                }
            }
        }
        walk(&self.root, feature_names, 0, &mut out);
        out
    }
}

/// Bootstrap-aggregated CART trees; the prediction is the tree average.
#[derive(Debug, Clone)]
pub struct BaggedTrees {
    pub trees: Vec<CartTree>,
}

impl BaggedTrees {
    pub fn fit(
        x: &[Vec<f64>],
        targets: &[f64],
        n_trees: usize,
        cfg: &CartConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<BaggedTrees> {
        if n_trees == 0 {
            return Err(HemmError::InvalidInput("need at least one tree".into()));
        }
        let n = x.len();
        let mut trees = Vec::with_capacity(n_trees);
        for _ in 0..n_trees {
            let sample: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
            let bx: Vec<Vec<f64>> = sample.iter().map(|&i| x[i].clone()).collect();
            let by: Vec<f64> = sample.iter().map(|&i| targets[i]).collect();
            trees.push(CartTree::fit(&bx, &by, cfg)?);
        }
        Ok(BaggedTrees { trees })
    }

    pub fn predict(&self, row: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict(row)).sum::<f64>() / self.trees.len() as f64
    }
}
