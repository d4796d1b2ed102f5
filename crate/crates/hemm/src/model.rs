//! HEMM probability computations: mixture densities, membership posteriors,
//! outcome means, CATE prediction, sparsity penalties, and subgroup reports.
//!
//! All operations here are pure; a [`ModelParams`] is immutable during
//! scoring and safe to share across threads.

use crate::error::{HemmError, Result};
use crate::nn::Network;
use serde::{Deserialize, Serialize};

const LN_2PI: f64 = 1.8378770664093453;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeKind {
    Binary,
    Continuous,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorKind {
    /// Laplace prior: l1 norm of the Bernoulli means.
    LaplaceL1,
    /// Group l1,2 prior: sum over features of the l2 norm across components.
    GroupL12,
}

/// Mixture-component parameters over covariates. The component prior over Z
/// is fixed uniform 1/K and not stored.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureParams {
    /// Per-component means of continuous covariates, `[K][d_c]`.
    pub mu: Vec<Vec<f64>>,
    /// Per-component diagonal variances, `[K][d_c]`, strictly positive.
    pub sigma2: Vec<Vec<f64>>,
    /// Per-component Bernoulli means of binary covariates, `[K][d_b]`, in [0,1].
    pub pi: Vec<Vec<f64>>,
}

impl MixtureParams {
    pub fn k(&self) -> usize {
        self.mu.len()
    }

    pub fn d_cont(&self) -> usize {
        self.mu.first().map_or(0, |m| m.len())
    }

    pub fn d_disc(&self) -> usize {
        self.pi.first().map_or(0, |p| p.len())
    }
}

/// Outcome-model parameters: per-component main treatment effects plus the
/// two-headed function f(x; w_t).
#[derive(Debug, Clone, PartialEq)]
pub struct OutcomeParams {
    /// Main treatment effect per component, `[K]`.
    pub gamma: Vec<f64>,
    pub net: Network,
    pub outcome_kind: OutcomeKind,
    /// Outcome noise standard deviation (continuous outcomes only).
    pub sigma_y: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub mixture: MixtureParams,
    pub outcome: OutcomeParams,
}

impl ModelParams {
    pub fn k(&self) -> usize {
        self.mixture.k()
    }
}

/// A single observation's covariates, borrowed from its dataset.
#[derive(Debug, Clone, Copy)]
pub struct Covariates<'a> {
    pub x_cont: &'a [f64],
    pub x_disc: &'a [u8],
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// ln(1 + e^v) without overflow.
pub fn softplus(v: f64) -> f64 {
    if v > 0.0 {
        v + (-v).exp().ln_1p()
    } else {
        v.exp().ln_1p()
    }
}

/// Log density of component `k` at `x`: diagonal-Gaussian log density over
/// the continuous covariates plus Bernoulli log mass over the binary ones.
/// A Bernoulli mean of exactly 0 or 1 contradicted by the observation yields
/// the negative-infinity sentinel.
pub fn log_component_density(m: &MixtureParams, x: Covariates, k: usize) -> Result<f64> {
    assert!(k < m.k(), "component index {k} out of range");
    if x.x_cont.len() != m.d_cont() || x.x_disc.len() != m.d_disc() {
        return Err(HemmError::DimensionMismatch(format!(
            "covariates ({}, {}) vs mixture ({}, {})",
            x.x_cont.len(),
            x.x_disc.len(),
            m.d_cont(),
            m.d_disc()
        )));
    }
    let mut lp = 0.0;
    for (j, v) in x.x_cont.iter().enumerate() {
        let s2 = m.sigma2[k][j];
        let d = v - m.mu[k][j];
        lp -= 0.5 * (LN_2PI + s2.ln() + d * d / s2);
    }
    for (j, v) in x.x_disc.iter().enumerate() {
        let p = m.pi[k][j];
        lp += if *v == 1 { p.ln() } else { (1.0 - p).ln() };
    }
    Ok(lp)
}

/// Posterior over component membership given covariates, under the uniform
/// component prior. Computed via log-sum-exp.
pub fn membership_posterior(m: &MixtureParams, x: Covariates) -> Result<Vec<f64>> {
    let logs: Vec<f64> = (0..m.k())
        .map(|k| log_component_density(m, x, k))
        .collect::<Result<_>>()?;
    softmax_checked(&logs).ok_or(HemmError::DegeneratePosterior(m.k()))
}

/// Softmax of finite-or-neg-infinity log weights; None when every entry is
/// negative infinity.
pub fn softmax_checked(logs: &[f64]) -> Option<Vec<f64>> {
    let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return None;
    }
    let exps: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Some(exps.iter().map(|e| e / sum).collect())
}

/// log(sum(exp(logs))); negative infinity when all entries are.
pub fn log_sum_exp(logs: &[f64]) -> f64 {
    let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return f64::NEG_INFINITY;
    }
    max + logs.iter().map(|l| (l - max).exp()).sum::<f64>().ln()
}

/// Mean outcome under treatment arm `t` and component `k`:
/// g(f(x; w_t) + gamma_k t) for binary outcomes, f(x; w_t) + gamma_k t for
/// continuous. The gamma term contributes exactly zero under t = 0.
pub fn outcome_mean(p: &ModelParams, x: Covariates, t: u8, k: usize) -> Result<f64> {
    assert!(k < p.k(), "component index {k} out of range");
    let eta = outcome_linear(p, x, t, k)?;
    Ok(match p.outcome.outcome_kind {
        OutcomeKind::Binary => sigmoid(eta),
        OutcomeKind::Continuous => eta,
    })
}

/// f(x; w_t) + gamma_k t before any link function.
pub fn outcome_linear(p: &ModelParams, x: Covariates, t: u8, k: usize) -> Result<f64> {
    let features = feature_vec(x);
    let f = p.outcome.net.forward(&features, t as usize)?;
    Ok(if t == 1 { f + p.outcome.gamma[k] } else { f })
}

pub fn feature_vec(x: Covariates) -> Vec<f64> {
    x.x_cont
        .iter()
        .copied()
        .chain(x.x_disc.iter().map(|v| *v as f64))
        .collect()
}

/// CATE estimate at `x`: the membership-posterior mixture of per-component
/// treated-minus-control outcome means.
pub fn predict_cate(p: &ModelParams, x: Covariates) -> Result<f64> {
    let post = membership_posterior(&p.mixture, x)?;
    let mut cate = 0.0;
    for (k, w) in post.iter().enumerate() {
        cate += w * (outcome_mean(p, x, 1, k)? - outcome_mean(p, x, 0, k)?);
    }
    Ok(cate)
}

/// Sparsity penalty over the Bernoulli means, `pi[k][j]`.
pub fn sparsity_penalty(pi: &[Vec<f64>], kind: PriorKind) -> f64 {
    if pi.is_empty() {
        return 0.0;
    }
    let d = pi[0].len();
    match kind {
        PriorKind::LaplaceL1 => pi.iter().flatten().map(|v| v.abs()).sum(),
        PriorKind::GroupL12 => (0..d)
            .map(|j| pi.iter().map(|row| row[j] * row[j]).sum::<f64>().sqrt())
            .sum(),
    }
}

/// Index of the component with the largest main effect; ties break to the
/// lowest index.
pub fn enhanced_group_index(p: &ModelParams) -> usize {
    let gamma = &p.outcome.gamma;
    let mut best = 0;
    for (k, g) in gamma.iter().enumerate().skip(1) {
        if *g > gamma[best] {
            best = k;
        }
    }
    best
}

/// Per-feature prevalence ratios pi[j][k] / sum_k' pi[j][k'] for component
/// `k`, sorted descending. Features whose column is zero across all
/// components carry no ratio and sort last. Stored means are clamped at
/// 1e-12 for display only.
pub fn subgroup_feature_report(m: &MixtureParams, k: usize) -> Vec<(usize, Option<f64>)> {
    assert!(k < m.k(), "component index {k} out of range");
    let mut rows: Vec<(usize, Option<f64>)> = (0..m.d_disc())
        .map(|j| {
            let col_sum: f64 = m.pi.iter().map(|row| row[j].max(1e-12)).sum();
            let all_zero = m.pi.iter().all(|row| row[j] == 0.0);
            if all_zero {
                (j, None)
            } else {
                (j, Some(m.pi[k][j].max(1e-12) / col_sum))
            }
        })
        .collect();
    rows.sort_by(|a, b| match (a.1, b.1) {
        (Some(x), Some(y)) => y.partial_cmp(&x).unwrap().then(a.0.cmp(&b.0)),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => a.0.cmp(&b.0),
    });
    rows
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{HeadMode, Network};
    use crate::rng::substream;
    use rand::Rng;

    fn mixture(mu: Vec<Vec<f64>>, sigma2: Vec<Vec<f64>>, pi: Vec<Vec<f64>>) -> MixtureParams {
        MixtureParams { mu, sigma2, pi }
    }

    fn cov<'a>(c: &'a [f64], d: &'a [u8]) -> Covariates<'a> {
        Covariates { x_cont: c, x_disc: d }
    }

    #[test]
    fn standard_normal_at_mode() {
        let m = mixture(vec![vec![0.0]], vec![vec![1.0]], vec![vec![]]);
        let lp = log_component_density(&m, cov(&[0.0], &[]), 0).unwrap();
        assert!((lp - (-0.5 * LN_2PI)).abs() < 1e-12);
        assert!((lp - (-0.918939)).abs() < 1e-6);
    }

    #[test]
    fn fair_coin_log_mass() {
        let m = mixture(vec![vec![]], vec![vec![]], vec![vec![0.5]]);
        let lp = log_component_density(&m, cov(&[], &[1]), 0).unwrap();
        assert!((lp - 0.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn mixed_density_hand_value() {
        // mu=1, sigma2=4, pi=0.8, x_cont=2, x_disc=0
        let m = mixture(vec![vec![1.0]], vec![vec![4.0]], vec![vec![0.8]]);
        let lp = log_component_density(&m, cov(&[2.0], &[0]), 0).unwrap();
        let expect = -0.5 * (8.0 * std::f64::consts::PI).ln() - 1.0 / 8.0 + 0.2f64.ln();
        assert!((lp - expect).abs() < 1e-12);
        assert!((lp - (-3.3465)).abs() < 1e-3);
    }

    #[test]
    fn degenerate_pi_sentinel() {
        let m = mixture(vec![vec![]], vec![vec![]], vec![vec![1.0]]);
        let lp = log_component_density(&m, cov(&[], &[0]), 0).unwrap();
        assert_eq!(lp, f64::NEG_INFINITY);
        let lp = log_component_density(&m, cov(&[], &[1]), 0).unwrap();
        assert_eq!(lp, 0.0);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let m = mixture(vec![vec![0.0]], vec![vec![1.0]], vec![vec![]]);
        assert!(matches!(
            log_component_density(&m, cov(&[0.0, 1.0], &[]), 0),
            Err(HemmError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn posterior_symmetry() {
        let m = mixture(
            vec![vec![0.0], vec![0.0]],
            vec![vec![1.0], vec![1.0]],
            vec![vec![], vec![]],
        );
        let p = membership_posterior(&m, cov(&[0.3], &[])).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-15 && (p[1] - 0.5).abs() < 1e-15);

        let m3 = mixture(
            vec![vec![0.0]; 3],
            vec![vec![1.0]; 3],
            vec![vec![]; 3],
        );
        let p3 = membership_posterior(&m3, cov(&[1.0], &[])).unwrap();
        for v in p3 {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn posterior_hand_bayes() {
        let m = mixture(
            vec![vec![], vec![]],
            vec![vec![], vec![]],
            vec![vec![0.8], vec![0.2]],
        );
        let p = membership_posterior(&m, cov(&[], &[1])).unwrap();
        assert!((p[0] - 0.8).abs() < 1e-12 && (p[1] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn posterior_degenerate_error() {
        let m = mixture(
            vec![vec![], vec![]],
            vec![vec![], vec![]],
            vec![vec![0.0], vec![0.0]],
        );
        assert!(matches!(
            membership_posterior(&m, cov(&[], &[1])),
            Err(HemmError::DegeneratePosterior(2))
        ));
    }

    #[test]
    fn posterior_sums_to_one_and_shift_invariant() {
        let mut rng = substream(11, "model-prop");
        for _ in 0..100 {
            let k = rng.gen_range(1..5usize);
            let logs: Vec<f64> = (0..k).map(|_| rng.gen_range(-30.0..5.0)).collect();
            let p = softmax_checked(&logs).unwrap();
            let sum: f64 = p.iter().sum();
            assert!((sum - 1.0).abs() <= 1e-12);
            assert!(p.iter().all(|v| *v >= 0.0));
            let shifted: Vec<f64> = logs.iter().map(|l| l + 123.456).collect();
            let q = softmax_checked(&shifted).unwrap();
            for (a, b) in p.iter().zip(&q) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    fn toy_model(k: usize, gamma: Vec<f64>, kind: OutcomeKind) -> ModelParams {
        ModelParams {
            mixture: mixture(vec![vec![0.0]; k], vec![vec![1.0]; k], vec![vec![]; k]),
            outcome: OutcomeParams {
                gamma,
                net: Network::zeros(1, &[], HeadMode::Separate),
                outcome_kind: kind,
                sigma_y: 1.0,
            },
        }
    }

    #[test]
    fn outcome_mean_examples() {
        let p = toy_model(1, vec![0.0], OutcomeKind::Binary);
        let x = cov(&[0.0], &[]);
        assert_eq!(outcome_mean(&p, x, 1, 0).unwrap(), 0.5);

        let mut p = toy_model(1, vec![0.5], OutcomeKind::Binary);
        p.outcome.net.arms[1][0].b[0] = 1.0;
        let m = outcome_mean(&p, x, 1, 0).unwrap();
        assert!((m - sigmoid(1.5)).abs() < 1e-12);
        assert!((m - 0.81757).abs() < 1e-5);

        let mut p = toy_model(1, vec![0.5], OutcomeKind::Continuous);
        p.outcome.net.arms[0][0].b[0] = 1.0;
        assert_eq!(outcome_mean(&p, x, 0, 0).unwrap(), 1.0);
    }

    #[test]
    fn binary_outcome_mean_strictly_in_unit_interval() {
        let mut rng = substream(12, "model-prop");
        let x = [0.5];
        for _ in 0..50 {
            let mut p = toy_model(1, vec![rng.gen_range(-5.0..5.0)], OutcomeKind::Binary);
            p.outcome.net.arms[1][0].b[0] = rng.gen_range(-20.0..20.0);
            let m = outcome_mean(&p, cov(&x, &[]), 1, 0).unwrap();
            assert!(m > 0.0 && m < 1.0);
        }
    }

    #[test]
    fn cate_single_component_is_gamma() {
        let p = toy_model(1, vec![0.7], OutcomeKind::Continuous);
        let c = predict_cate(&p, cov(&[0.2], &[])).unwrap();
        assert!((c - 0.7).abs() < 1e-15);
    }

    #[test]
    fn cate_zero_gamma_identical_heads_binary() {
        let p = toy_model(2, vec![0.0, 0.0], OutcomeKind::Binary);
        let c = predict_cate(&p, cov(&[0.2], &[])).unwrap();
        assert_eq!(c, 0.0);
    }

    #[test]
    fn cate_hand_mixture_average() {
        // posterior [0.8, 0.2] forced via Bernoulli evidence, per-component
        // effects [0.3, -0.1] via gamma on a zero net, continuous outcome
        let p = ModelParams {
            mixture: mixture(
                vec![vec![], vec![]],
                vec![vec![], vec![]],
                vec![vec![0.8], vec![0.2]],
            ),
            outcome: OutcomeParams {
                gamma: vec![0.3, -0.1],
                net: Network::zeros(1, &[], HeadMode::Separate),
                outcome_kind: OutcomeKind::Continuous,
                sigma_y: 1.0,
            },
        };
        let c = predict_cate(&p, cov(&[], &[1])).unwrap();
        assert!((c - 0.22).abs() < 1e-12);
    }

    #[test]
    fn penalty_examples() {
        let zero = vec![vec![0.0, 0.0], vec![0.0, 0.0]];
        assert_eq!(sparsity_penalty(&zero, PriorKind::LaplaceL1), 0.0);
        assert_eq!(sparsity_penalty(&zero, PriorKind::GroupL12), 0.0);

        let pi = vec![vec![0.3], vec![0.4]];
        assert!((sparsity_penalty(&pi, PriorKind::LaplaceL1) - 0.7).abs() < 1e-15);
        assert!((sparsity_penalty(&pi, PriorKind::GroupL12) - 0.5).abs() < 1e-15);

        let single = vec![vec![0.2, 0.9, 0.1]];
        assert!(
            (sparsity_penalty(&single, PriorKind::LaplaceL1)
                - sparsity_penalty(&single, PriorKind::GroupL12))
            .abs()
                < 1e-15
        );
    }

    #[test]
    fn group_penalty_never_exceeds_l1() {
        let mut rng = substream(13, "model-prop");
        for _ in 0..200 {
            let k = rng.gen_range(1..4usize);
            let d = rng.gen_range(1..5usize);
            let pi: Vec<Vec<f64>> = (0..k)
                .map(|_| (0..d).map(|_| rng.gen_range(0.0..1.0)).collect())
                .collect();
            let l1 = sparsity_penalty(&pi, PriorKind::LaplaceL1);
            let g = sparsity_penalty(&pi, PriorKind::GroupL12);
            assert!(g <= l1 + 1e-12);
        }
        // equality when each column has at most one nonzero
        let pi = vec![vec![0.4, 0.0], vec![0.0, 0.7]];
        let l1 = sparsity_penalty(&pi, PriorKind::LaplaceL1);
        let g = sparsity_penalty(&pi, PriorKind::GroupL12);
        assert!((l1 - g).abs() < 1e-15);
    }

    #[test]
    fn enhanced_group_examples() {
        assert_eq!(enhanced_group_index(&toy_model(2, vec![0.1, 0.9], OutcomeKind::Binary)), 1);
        assert_eq!(enhanced_group_index(&toy_model(2, vec![0.5, 0.5], OutcomeKind::Binary)), 0);
        assert_eq!(enhanced_group_index(&toy_model(1, vec![-0.2], OutcomeKind::Binary)), 0);
    }

    #[test]
    fn enhanced_group_monotone_transform_invariant() {
        let p = toy_model(3, vec![0.2, -0.4, 0.15], OutcomeKind::Binary);
        let base = enhanced_group_index(&p);
        let q = toy_model(
            3,
            p.outcome.gamma.iter().map(|g| (3.0 * g).exp()).collect(),
            OutcomeKind::Binary,
        );
        assert_eq!(enhanced_group_index(&q), base);
    }

    #[test]
    fn feature_report_examples() {
        let m = mixture(
            vec![vec![], vec![]],
            vec![vec![], vec![]],
            vec![vec![0.6, 0.5, 0.0], vec![0.2, 0.5, 0.0]],
        );
        let rows = subgroup_feature_report(&m, 0);
        assert_eq!(rows[0].0, 0);
        assert!((rows[0].1.unwrap() - 0.75).abs() < 1e-12);
        assert_eq!(rows[1].0, 1);
        assert!((rows[1].1.unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(rows[2], (2, None));
    }
}
