//! Linear CATE baselines: one joint model on (x, t), or two per-arm models.
//! Continuous outcomes use least squares, binary outcomes logistic regression
//! fitted by iteratively reweighted least squares.

use crate::data::Dataset;
use crate::error::{HemmError, Result};
use crate::model::{sigmoid, OutcomeKind};

const RIDGE: f64 = 1e-8;

/// Solve (X'X + ridge I) b = X'y by Gaussian elimination with partial
/// pivoting. Rows of `x` must include any intercept column.
pub(crate) fn solve_least_squares(x: &[Vec<f64>], y: &[f64], weights: Option<&[f64]>) -> Vec<f64> {
    let d = x[0].len();
    let mut a = vec![vec![0.0; d + 1]; d];
    for (row_i, row) in x.iter().enumerate() {
        let w = weights.map_or(1.0, |ws| ws[row_i]);
        for i in 0..d {
            for j in 0..d {
                a[i][j] += w * row[i] * row[j];
            }
            a[i][d] += w * row[i] * y[row_i];
        }
    }
    for i in 0..d {
        a[i][i] += RIDGE;
    }
    // forward elimination with partial pivoting
    for col in 0..d {
        let pivot = (col..d)
            .max_by(|&p, &q| a[p][col].abs().partial_cmp(&a[q][col].abs()).unwrap())
            .unwrap();
        a.swap(col, pivot);
        let diag = a[col][col];
        for row in col + 1..d {
            let factor = a[row][col] / diag;
            for j in col..=d {
                a[row][j] -= factor * a[col][j];
            }
        }
    }
    let mut beta = vec![0.0; d];
    for i in (0..d).rev() {
        let mut s = a[i][d];
        for j in i + 1..d {
            s -= a[i][j] * beta[j];
        }
        beta[i] = s / a[i][i];
    }
    beta
}

/// Logistic regression by IRLS; `x` rows include the intercept column.
pub(crate) fn fit_logistic(x: &[Vec<f64>], y: &[f64], max_iter: usize) -> Vec<f64> {
    let d = x[0].len();
    let mut beta = vec![0.0; d];
    for _ in 0..max_iter {
        // working response z = eta + (y - p)/w with weights w = p(1-p)
        let mut z = Vec::with_capacity(x.len());
        let mut w = Vec::with_capacity(x.len());
        for (row, &yi) in x.iter().zip(y) {
            let eta: f64 = row.iter().zip(&beta).map(|(a, b)| a * b).sum();
            let p = sigmoid(eta).clamp(1e-9, 1.0 - 1e-9);
            let wi = (p * (1.0 - p)).max(1e-9);
            z.push(eta + (yi - p) / wi);
            w.push(wi);
        }
        let next = solve_least_squares(x, &z, Some(&w));
        let delta: f64 = next
            .iter()
            .zip(&beta)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        beta = next;
        if delta < 1e-10 {
            break;
        }
    }
    beta
}

fn design_row(features: &[f64], extra: Option<f64>) -> Vec<f64> {
    let mut row = Vec::with_capacity(features.len() + 2);
    row.push(1.0);
    row.extend_from_slice(features);
    if let Some(e) = extra {
        row.push(e);
    }
    row
}

#[derive(Debug, Clone)]
pub enum LinearCate {
    /// One model on (1, x, t).
    Single {
        beta: Vec<f64>,
        outcome_kind: OutcomeKind,
    },
    /// Per-arm models on (1, x).
    TwoArm {
        beta0: Vec<f64>,
        beta1: Vec<f64>,
        outcome_kind: OutcomeKind,
    },
}

impl LinearCate {
    fn mean(beta: &[f64], row: &[f64], kind: OutcomeKind) -> f64 {
        let eta: f64 = row.iter().zip(beta).map(|(a, b)| a * b).sum();
        match kind {
            OutcomeKind::Binary => sigmoid(eta),
            OutcomeKind::Continuous => eta,
        }
    }

    /// Predicted outcome under arm `t`.
    pub fn predict(&self, features: &[f64], t: u8) -> f64 {
        match self {
            LinearCate::Single { beta, outcome_kind } => {
                Self::mean(beta, &design_row(features, Some(t as f64)), *outcome_kind)
            }
            LinearCate::TwoArm {
                beta0,
                beta1,
                outcome_kind,
            } => {
                let b = if t == 1 { beta1 } else { beta0 };
                Self::mean(b, &design_row(features, None), *outcome_kind)
            }
        }
    }

    pub fn cate(&self, features: &[f64]) -> f64 {
        self.predict(features, 1) - self.predict(features, 0)
    }
}

fn fit_one(x: &[Vec<f64>], y: &[f64], kind: OutcomeKind) -> Vec<f64> {
    match kind {
        OutcomeKind::Binary => fit_logistic(x, y, 100),
        OutcomeKind::Continuous => solve_least_squares(x, y, None),
    }
}

/// Linear-1: a single model on covariates plus the treatment indicator.
pub fn fit_linear_single(data: &Dataset, kind: OutcomeKind) -> Result<LinearCate> {
    if data.n() == 0 {
        return Err(HemmError::InvalidInput("empty dataset".into()));
    }
    let x: Vec<Vec<f64>> = (0..data.n())
        .map(|i| design_row(&data.features(i), Some(data.t[i] as f64)))
        .collect();
    Ok(LinearCate::Single {
        beta: fit_one(&x, &data.y, kind),
        outcome_kind: kind,
    })
}

/// Linear-2: separate models for the control and treated populations.
pub fn fit_linear_two(data: &Dataset, kind: OutcomeKind) -> Result<LinearCate> {
    let mut arms: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for i in 0..data.n() {
        arms[data.t[i] as usize].push(i);
    }
    if arms[0].is_empty() || arms[1].is_empty() {
        return Err(HemmError::InvalidInput(
            "two-arm linear model needs rows in both arms".into(),
        ));
    }
    let fit_arm = |idx: &[usize]| {
        let x: Vec<Vec<f64>> = idx.iter().map(|&i| design_row(&data.features(i), None)).collect();
        let y: Vec<f64> = idx.iter().map(|&i| data.y[i]).collect();
        fit_one(&x, &y, kind)
    };
    Ok(LinearCate::TwoArm {
        beta0: fit_arm(&arms[0]),
        beta1: fit_arm(&arms[1]),
        outcome_kind: kind,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use rand::Rng;

    fn make_data(n: usize, seed: u64, gen: impl Fn(f64, u8, &mut rand_chacha::ChaCha8Rng) -> f64) -> Dataset {
        let mut rng = substream(seed, "lin-test");
        let mut x_cont = Vec::new();
        let mut t = Vec::new();
        let mut y = Vec::new();
        for _ in 0..n {
            let xv: f64 = rng.gen_range(-1.0..1.0);
            let ti = u8::from(rng.gen_bool(0.5));
            y.push(gen(xv, ti, &mut rng));
            x_cont.push(vec![xv]);
            t.push(ti);
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
            cont_names: vec!["x0".into()],
            disc_names: vec![],
            standardized: false,
        }
    }

    #[test]
    fn pure_treatment_signal() {
        let data = make_data(200, 1, |_, t, _| 2.0 * t as f64);
        let m = fit_linear_single(&data, OutcomeKind::Continuous).unwrap();
        assert!((m.cate(&[0.3]) - 2.0).abs() < 1e-6);
    }

    #[test]
    fn single_model_coefficient_recovery() {
        let data = make_data(1000, 2, |x, t, rng| x + t as f64 + rng.gen_range(-0.05..0.05));
        let m = fit_linear_single(&data, OutcomeKind::Continuous).unwrap();
        assert!((m.cate(&[0.0]) - 1.0).abs() < 0.05);
    }

    #[test]
    fn two_arm_slopes() {
        // arm-1 slope 2, arm-0 slope 1 -> CATE(x) = x
        let data = make_data(2000, 3, |x, t, _| if t == 1 { 2.0 * x } else { x });
        let m = fit_linear_two(&data, OutcomeKind::Continuous).unwrap();
        for xv in [-0.8, -0.2, 0.4, 0.9] {
            assert!((m.cate(&[xv]) - xv).abs() < 0.02, "cate({xv}) = {}", m.cate(&[xv]));
        }
    }

    #[test]
    fn identical_arms_near_zero() {
        let data = make_data(2000, 4, |x, _, rng| x + rng.gen_range(-0.1..0.1));
        let m = fit_linear_two(&data, OutcomeKind::Continuous).unwrap();
        assert!(m.cate(&[0.5]).abs() < 0.05);
    }

    #[test]
    fn binary_cate_in_unit_interval() {
        let data = make_data(400, 5, |x, t, rng| {
            f64::from(rng.gen_bool(sigmoid(x + 1.5 * t as f64)))
        });
        let m = fit_linear_two(&data, OutcomeKind::Binary).unwrap();
        for xv in [-1.0, 0.0, 1.0] {
            let c = m.cate(&[xv]);
            assert!(c > -1.0 && c < 1.0);
        }
    }

    #[test]
    fn single_arm_rejected() {
        let mut data = make_data(50, 6, |x, _, _| x);
        data.t = vec![1; 50];
        assert!(fit_linear_two(&data, OutcomeKind::Continuous).is_err());
    }

    #[test]
    fn logistic_matches_closed_form_balance() {
        // intercept-only logistic: fitted probability equals the base rate
        let x: Vec<Vec<f64>> = vec![vec![1.0]; 10];
        let y = vec![1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let beta = fit_logistic(&x, &y, 50);
        assert!((sigmoid(beta[0]) - 0.3).abs() < 1e-8);
    }
}
