//! Evaluation estimators: effect-estimation error (PEHE), propensity
//! modelling, inverse-propensity-weighted subgroup effects, ATE-vs-size
//! curves, and ROC/AUC.

use crate::baselines::{BaggedTrees, CartConfig, SplitCriterion};
use crate::data::Dataset;
use crate::error::{HemmError, Result};
use crate::model::sigmoid;
use crate::rng::substream;

pub const PROPENSITY_CLIP: (f64, f64) = (0.01, 0.99);

/// Per-row estimated potential outcomes and effects.
#[derive(Debug, Clone)]
pub struct CatePredictions {
    pub f1: Vec<f64>,
    pub f0: Vec<f64>,
    pub cate: Vec<f64>,
    /// Per-row subgroup score (membership probability or effect estimate).
    pub score: Vec<f64>,
}

impl CatePredictions {
    pub fn new(f1: Vec<f64>, f0: Vec<f64>, score: Vec<f64>) -> Result<Self> {
        if f1.len() != f0.len() || f1.len() != score.len() {
            return Err(HemmError::DimensionMismatch(format!(
                "prediction columns disagree: f1={}, f0={}, score={}",
                f1.len(),
                f0.len(),
                score.len()
            )));
        }
        let cate = f1.iter().zip(&f0).map(|(a, b)| a - b).collect();
        Ok(CatePredictions { f1, f0, cate, score })
    }

    /// Build from effect estimates alone, using them as the score too.
    pub fn from_cate(cate: Vec<f64>) -> Self {
        let f0 = vec![0.0; cate.len()];
        CatePredictions {
            f1: cate.clone(),
            f0,
            score: cate.clone(),
            cate,
        }
    }
}

/// True per-row effect: stored directly, or the difference of stored
/// potential outcomes.
pub fn true_effect(data: &Dataset) -> Result<Vec<f64>> {
    if let Some(tau) = &data.true_effect {
        return Ok(tau.clone());
    }
    match (&data.y0, &data.y1) {
        (Some(y0), Some(y1)) => Ok(y1.iter().zip(y0).map(|(a, b)| a - b).collect()),
        _ => Err(HemmError::InvalidInput(
            "PEHE needs stored potential outcomes or a known effect".into(),
        )),
    }
}

/// Mean squared error of the effect estimate and its square root.
pub fn pehe(pred: &CatePredictions, data: &Dataset) -> Result<(f64, f64)> {
    let tau = true_effect(data)?;
    if tau.len() != pred.cate.len() {
        return Err(HemmError::DimensionMismatch(format!(
            "{} predictions for {} rows",
            pred.cate.len(),
            tau.len()
        )));
    }
    let mse = pred
        .cate
        .iter()
        .zip(&tau)
        .map(|(c, t)| (c - t) * (c - t))
        .sum::<f64>()
        / tau.len() as f64;
    Ok((mse, mse.sqrt()))
}

#[derive(Debug, Clone)]
pub struct PropensityConfig {
    pub n_trees: usize,
    /// Depths tried when a dev split is available for tuning.
    pub depths: Vec<usize>,
    pub min_leaf: usize,
    pub logistic: bool,
    pub seed: u64,
}

impl Default for PropensityConfig {
    fn default() -> Self {
        PropensityConfig {
            n_trees: 50,
            depths: vec![2, 4, 6],
            min_leaf: 5,
            logistic: false,
            seed: 0,
        }
    }
}

/// Estimator of e(x) = P(T=1 | x), clipped away from 0 and 1.
#[derive(Debug, Clone)]
pub enum PropensityModel {
    Bagged(BaggedTrees),
    Logistic(Vec<f64>),
    /// Known or assumed constant propensity (e.g. randomized data).
    Constant(f64),
}

impl PropensityModel {
    pub fn predict(&self, features: &[f64]) -> f64 {
        let raw = match self {
            PropensityModel::Bagged(bag) => bag.predict(features),
            PropensityModel::Logistic(beta) => {
                let mut eta = beta[0];
                for (b, f) in beta[1..].iter().zip(features) {
                    eta += b * f;
                }
                sigmoid(eta)
            }
            PropensityModel::Constant(e) => *e,
        };
        raw.clamp(PROPENSITY_CLIP.0, PROPENSITY_CLIP.1)
    }

    pub fn predict_all(&self, data: &Dataset) -> Vec<f64> {
        (0..data.n()).map(|i| self.predict(&data.features(i))).collect()
    }

    /// Positivity diagnostics: per-arm histograms of e(x) over `bins` equal
    /// cells of [0,1]; rows are (bin lower edge, control count, treated count).
    pub fn positivity_histogram(&self, data: &Dataset, bins: usize) -> Vec<(f64, usize, usize)> {
        let mut out: Vec<(f64, usize, usize)> = (0..bins)
            .map(|b| (b as f64 / bins as f64, 0, 0))
            .collect();
        for i in 0..data.n() {
            let e = self.predict(&data.features(i));
            let b = ((e * bins as f64) as usize).min(bins - 1);
            if data.t[i] == 1 {
                out[b].2 += 1;
            } else {
                out[b].1 += 1;
            }
        }
        out
    }
}

fn dev_log_loss(model: &PropensityModel, dev: &Dataset) -> f64 {
    let mut total = 0.0;
    for i in 0..dev.n() {
        let e = model.predict(&dev.features(i));
        total -= if dev.t[i] == 1 { e.ln() } else { (1.0 - e).ln() };
    }
    total / dev.n() as f64
}

/// Fit e(x) on train; when `dev` is given, the tree depth with the lowest dev
/// log-loss wins. Set `cfg.logistic` for the logistic-regression fallback.
pub fn fit_propensity(
    train: &Dataset,
    dev: Option<&Dataset>,
    cfg: &PropensityConfig,
) -> Result<PropensityModel> {
    let treated = train.t.iter().filter(|&&t| t == 1).count();
    if treated == 0 || treated == train.n() {
        return Err(HemmError::InvalidInput(
            "propensity fitting needs rows in both arms".into(),
        ));
    }
    let labels: Vec<f64> = train.t.iter().map(|&t| t as f64).collect();
    if cfg.logistic {
        let x: Vec<Vec<f64>> = (0..train.n())
            .map(|i| {
                let mut row = vec![1.0];
                row.extend(train.features(i));
                row
            })
            .collect();
        return Ok(PropensityModel::Logistic(
            crate::baselines::linear::fit_logistic(&x, &labels, 100),
        ));
    }
    let x: Vec<Vec<f64>> = (0..train.n()).map(|i| train.features(i)).collect();
    let depths: Vec<usize> = if dev.is_some() && cfg.depths.len() > 1 {
        cfg.depths.clone()
    } else {
        vec![*cfg.depths.last().expect("at least one depth")]
    };
    let mut best: Option<(f64, PropensityModel)> = None;
    for depth in depths {
        let tree_cfg = CartConfig {
            max_depth: depth,
            min_leaf: cfg.min_leaf,
            criterion: SplitCriterion::Gini,
        };
        let mut rng = substream(cfg.seed, &format!("propensity-depth{depth}"));
        let model = PropensityModel::Bagged(BaggedTrees::fit(
            &x,
            &labels,
            cfg.n_trees,
            &tree_cfg,
            &mut rng,
        )?);
        let loss = match dev {
            Some(d) => dev_log_loss(&model, d),
            None => 0.0,
        };
        if best.as_ref().map_or(true, |(b, _)| loss < *b) {
            best = Some((loss, model));
        }
    }
    Ok(best.expect("at least one depth fitted").1)
}

/// IPTW subgroup effect over rows `s`:
/// (1/|S|) sum_{i in S} [ y_i t_i / e_i - y_i (1 - t_i) / (1 - e_i) ].
pub fn iptw_with_scores(data: &Dataset, s: &[usize], e: &[f64]) -> Result<f64> {
    if s.is_empty() {
        return Err(HemmError::InvalidInput("empty subgroup".into()));
    }
    let mut total = 0.0;
    for &i in s {
        let ei = e[i];
        total += if data.t[i] == 1 {
            data.y[i] / ei
        } else {
            -data.y[i] / (1.0 - ei)
        };
    }
    Ok(total / s.len() as f64)
}

pub fn iptw_subgroup_ate(data: &Dataset, s: &[usize], e: &PropensityModel) -> Result<f64> {
    iptw_with_scores(data, s, &e.predict_all(data))
}

#[derive(Debug, Clone, Copy)]
pub struct CurvePoint {
    pub threshold: f64,
    pub fraction: f64,
    pub tau_hat: f64,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
    }
}

/// Subgroup ATE versus subgroup size. Thresholds sweep the score quantiles
/// 0.95 down to 0.05 (subgroup = rows scoring at least the threshold); the
/// final point is the whole population, so every curve ends at the population
/// IPTW ATE. Duplicate fractions and empty subgroups are skipped.
pub fn ate_size_curve(data: &Dataset, scores: &[f64], e: &[f64]) -> Result<Vec<CurvePoint>> {
    if scores.len() != data.n() {
        return Err(HemmError::DimensionMismatch(format!(
            "{} scores for {} rows",
            scores.len(),
            data.n()
        )));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut points: Vec<CurvePoint> = Vec::new();
    let mut seen_fraction = Vec::new();
    for step in (1..=19).rev() {
        let q = step as f64 * 0.05;
        let threshold = quantile(&sorted, q);
        let s: Vec<usize> = (0..data.n()).filter(|&i| scores[i] >= threshold).collect();
        if s.is_empty() {
            continue;
        }
        let fraction = s.len() as f64 / data.n() as f64;
        if fraction >= 1.0 || seen_fraction.contains(&s.len()) {
            continue;
        }
        seen_fraction.push(s.len());
        points.push(CurvePoint {
            threshold,
            fraction,
            tau_hat: iptw_with_scores(data, &s, e)?,
        });
    }
    let all: Vec<usize> = (0..data.n()).collect();
    points.push(CurvePoint {
        threshold: f64::NEG_INFINITY,
        fraction: 1.0,
        tau_hat: iptw_with_scores(data, &all, e)?,
    });
    Ok(points)
}

pub fn curve_csv(points: &[CurvePoint]) -> String {
    let mut s = String::from("threshold,fraction,tau_hat\n");
    for p in points {
        s.push_str(&format!("{},{},{}\n", p.threshold, p.fraction, p.tau_hat));
    }
    s
}

/// ROC curve points (FPR, TPR) over the full threshold sweep and the AUC by
/// the trapezoidal rule; tied scores collapse to one sweep step, making the
/// area equal the rank-average Mann-Whitney statistic.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<(Vec<(f64, f64)>, f64)> {
    if scores.len() != labels.len() {
        return Err(HemmError::DimensionMismatch(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(HemmError::InvalidInput(
            "AUC needs both classes present".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());
    let mut curve = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if labels[order[j]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            j += 1;
        }
        curve.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
        i = j;
    }
    let mut auc = 0.0;
    for w in curve.windows(2) {
        auc += (w[1].0 - w[0].0) * 0.5 * (w[0].1 + w[1].1);
    }
    Ok((curve, auc))
}

pub fn roc_csv(curve: &[(f64, f64)]) -> String {
    let mut s = String::from("fpr,tpr\n");
    for (fpr, tpr) in curve {
        s.push_str(&format!("{fpr},{tpr}\n"));
    }
    s
}
