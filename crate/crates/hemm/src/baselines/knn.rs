//! k-nearest-neighbour CATE: mean outcome of the k nearest treated rows minus
//! the mean of the k nearest control rows, Euclidean distance on features.

use crate::data::Dataset;
use crate::error::{HemmError, Result};

fn arm_mean_of_nearest(data: &Dataset, query: &[f64], arm: u8, k: usize) -> Result<f64> {
    let mut rows: Vec<(f64, usize)> = (0..data.n())
        .filter(|&i| data.t[i] == arm)
        .map(|i| {
            let d2: f64 = data
                .features(i)
                .iter()
                .zip(query)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            (d2, i)
        })
        .collect();
    if rows.len() < k {
        return Err(HemmError::InvalidInput(format!(
            "arm {arm} has {} rows, need at least k={k}",
            rows.len()
        )));
    }
    // ties broken by index order
    rows.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    Ok(rows[..k].iter().map(|&(_, i)| data.y[i]).sum::<f64>() / k as f64)
}

pub fn knn_cate(data: &Dataset, query: &[f64], k: usize) -> Result<f64> {
    if k == 0 {
        return Err(HemmError::InvalidInput("k must be at least 1".into()));
    }
    Ok(arm_mean_of_nearest(data, query, 1, k)? - arm_mean_of_nearest(data, query, 0, k)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn four_rows() -> Dataset {
        Dataset {
            x_cont: vec![vec![0.0], vec![1.0], vec![0.2], vec![0.9]],
            x_disc: vec![vec![]; 4],
            t: vec![0, 0, 1, 1],
            y: vec![0.1, 0.5, 0.7, 0.2],
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
    fn k_equals_arm_size_is_mean_difference() {
        let data = four_rows();
        let c = knn_cate(&data, &[0.5], 2).unwrap();
        let expect = (0.7 + 0.2) / 2.0 - (0.1 + 0.5) / 2.0;
        assert!((c - expect).abs() < 1e-12);
    }

    #[test]
    fn k1_hand_computed() {
        let data = four_rows();
        // query 0.15: nearest control is x=0.0 (y=0.1), nearest treated x=0.2 (y=0.7)
        let c = knn_cate(&data, &[0.15], 1).unwrap();
        assert!((c - (0.7 - 0.1)).abs() < 1e-12);
        // query 0.95: nearest control x=1.0 (y=0.5), nearest treated x=0.9 (y=0.2)
        let c = knn_cate(&data, &[0.95], 1).unwrap();
        assert!((c - (0.2 - 0.5)).abs() < 1e-12);
    }

    #[test]
    fn duplicated_query_point() {
        let mut data = four_rows();
        data.x_cont = vec![vec![0.3], vec![1.0], vec![0.3], vec![0.9]];
        let c = knn_cate(&data, &[0.3], 1).unwrap();
        assert!((c - (0.7 - 0.1)).abs() < 1e-12);
    }

    #[test]
    fn distance_ties_break_by_index() {
        let mut data = four_rows();
        // controls at equal distance from 0.5; the lower index (y=0.1) wins
        data.x_cont = vec![vec![0.4], vec![0.6], vec![0.5], vec![0.9]];
        let c = knn_cate(&data, &[0.5], 1).unwrap();
        assert!((c - (0.7 - 0.1)).abs() < 1e-12);
    }

    #[test]
    fn insufficient_rows_rejected() {
        let data = four_rows();
        assert!(knn_cate(&data, &[0.5], 3).is_err());
        assert!(knn_cate(&data, &[0.5], 0).is_err());
    }
}
