//! Trainable parameter state in unconstrained coordinates.
//!
//! Variances are optimized through an exponential reparameterization with a
//! 1e-6 floor and Bernoulli means through a logistic reparameterization, so
//! positivity and the [0,1] constraint hold by construction while the
//! optimizer works on an unconstrained vector.

use crate::model::{sigmoid, MixtureParams, ModelParams, OutcomeKind, OutcomeParams};
use crate::nn::{Layer, NetGrad, Network};

pub const SIGMA2_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct TrainState {
    pub mu: Vec<Vec<f64>>,
    pub log_sigma2: Vec<Vec<f64>>,
    pub logit_pi: Vec<Vec<f64>>,
    pub gamma: Vec<f64>,
    pub log_sigma_y: f64,
    pub net: Network,
    pub outcome_kind: OutcomeKind,
}

impl TrainState {
    pub fn k(&self) -> usize {
        self.mu.len()
    }

    pub fn d_cont(&self) -> usize {
        self.mu.first().map_or(0, |m| m.len())
    }

    pub fn d_disc(&self) -> usize {
        self.logit_pi.first().map_or(0, |p| p.len())
    }

    pub fn sigma2(&self, k: usize, j: usize) -> f64 {
        SIGMA2_FLOOR + self.log_sigma2[k][j].exp()
    }

    pub fn pi(&self, k: usize, j: usize) -> f64 {
        sigmoid(self.logit_pi[k][j])
    }

    pub fn sigma_y(&self) -> f64 {
        self.log_sigma_y.exp()
    }

    pub fn pi_matrix(&self) -> Vec<Vec<f64>> {
        self.logit_pi
            .iter()
            .map(|row| row.iter().map(|l| sigmoid(*l)).collect())
            .collect()
    }

    pub fn to_model(&self) -> ModelParams {
        ModelParams {
            mixture: MixtureParams {
                mu: self.mu.clone(),
                sigma2: self
                    .log_sigma2
                    .iter()
                    .map(|row| row.iter().map(|l| SIGMA2_FLOOR + l.exp()).collect())
                    .collect(),
                pi: self.pi_matrix(),
            },
            outcome: OutcomeParams {
                gamma: self.gamma.clone(),
                net: self.net.clone(),
                outcome_kind: self.outcome_kind,
                sigma_y: self.sigma_y(),
            },
        }
    }

    /// Flat layout: one block per parameter group. Only network weight
    /// matrices receive weight decay.
    pub fn layout(&self) -> Layout {
        let mut blocks = Vec::new();
        let mut offset = 0;
        let mut push = |name: String, len: usize, decay: bool, blocks: &mut Vec<Block>| {
            blocks.push(Block {
                name,
                offset,
                len,
                decay,
            });
            offset += len;
        };
        let k = self.k();
        push("mixture.mu".into(), k * self.d_cont(), false, &mut blocks);
        push("mixture.log_sigma2".into(), k * self.d_cont(), false, &mut blocks);
        push("mixture.logit_pi".into(), k * self.d_disc(), false, &mut blocks);
        push("outcome.gamma".into(), k, false, &mut blocks);
        push("outcome.log_sigma_y".into(), 1, false, &mut blocks);
        for (i, l) in self.net.trunk.iter().enumerate() {
            push(format!("net.trunk{i}.w"), l.w.len() * l.w[0].len(), true, &mut blocks);
            push(format!("net.trunk{i}.b"), l.b.len(), false, &mut blocks);
        }
        for arm in 0..2 {
            for (i, l) in self.net.arms[arm].iter().enumerate() {
                let w_len = l.w.len() * l.w.first().map_or(0, |r| r.len());
                push(format!("net.arm{arm}.l{i}.w"), w_len, true, &mut blocks);
                push(format!("net.arm{arm}.l{i}.b"), l.b.len(), false, &mut blocks);
            }
        }
        Layout { blocks, total: offset }
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.layout().total);
        for row in &self.mu {
            out.extend(row);
        }
        for row in &self.log_sigma2 {
            out.extend(row);
        }
        for row in &self.logit_pi {
            out.extend(row);
        }
        out.extend(&self.gamma);
        out.push(self.log_sigma_y);
        flatten_layers(&self.net.trunk, &mut out);
        flatten_layers(&self.net.arms[0], &mut out);
        flatten_layers(&self.net.arms[1], &mut out);
        out
    }

    pub fn read_flat(&mut self, flat: &[f64]) {
        let mut it = flat.iter();
        let take = |n: usize, it: &mut std::slice::Iter<f64>| -> Vec<f64> {
            (0..n).map(|_| *it.next().expect("flat vector too short")).collect()
        };
        for row in &mut self.mu {
            let n = row.len();
            row.copy_from_slice(&take(n, &mut it));
        }
        for row in &mut self.log_sigma2 {
            let n = row.len();
            row.copy_from_slice(&take(n, &mut it));
        }
        for row in &mut self.logit_pi {
            let n = row.len();
            row.copy_from_slice(&take(n, &mut it));
        }
        let kk = self.gamma.len();
        self.gamma.copy_from_slice(&take(kk, &mut it));
        self.log_sigma_y = *it.next().unwrap();
        read_layers(&mut self.net.trunk, &mut it);
        let [a0, a1] = &mut self.net.arms;
        read_layers(a0, &mut it);
        read_layers(a1, &mut it);
        assert!(it.next().is_none(), "flat vector too long");
    }
}

fn flatten_layers(layers: &[Layer], out: &mut Vec<f64>) {
    for l in layers {
        for row in &l.w {
            out.extend(row);
        }
        out.extend(&l.b);
    }
}

fn read_layers(layers: &mut [Layer], it: &mut std::slice::Iter<f64>) {
    for l in layers {
        for row in &mut l.w {
            for v in row.iter_mut() {
                *v = *it.next().unwrap();
            }
        }
        for v in l.b.iter_mut() {
            *v = *it.next().unwrap();
        }
    }
}

#[derive(Debug, Clone)]
pub struct Block {
    pub name: String,
    pub offset: usize,
    pub len: usize,
    pub decay: bool,
}

#[derive(Debug, Clone)]
pub struct Layout {
    pub blocks: Vec<Block>,
    pub total: usize,
}

impl Layout {
    pub fn decay_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.total];
        for b in &self.blocks {
            if b.decay {
                mask[b.offset..b.offset + b.len].fill(true);
            }
        }
        mask
    }

    /// Name of the first block containing a non-finite entry, if any.
    pub fn find_non_finite(&self, flat: &[f64]) -> Option<&str> {
        self.blocks.iter().find_map(|b| {
            flat[b.offset..b.offset + b.len]
                .iter()
                .any(|v| !v.is_finite())
                .then_some(b.name.as_str())
        })
    }
}

/// Gradient buffer mirroring [`TrainState`] shapes.
#[derive(Debug, Clone)]
pub struct GradBuf {
    pub mu: Vec<Vec<f64>>,
    pub log_sigma2: Vec<Vec<f64>>,
    pub logit_pi: Vec<Vec<f64>>,
    pub gamma: Vec<f64>,
    pub log_sigma_y: f64,
    pub net: NetGrad,
}

impl GradBuf {
    pub fn zeros(state: &TrainState) -> Self {
        GradBuf {
            mu: vec![vec![0.0; state.d_cont()]; state.k()],
            log_sigma2: vec![vec![0.0; state.d_cont()]; state.k()],
            logit_pi: vec![vec![0.0; state.d_disc()]; state.k()],
            gamma: vec![0.0; state.k()],
            log_sigma_y: 0.0,
            net: NetGrad::zeros(&state.net),
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for row in &self.mu {
            out.extend(row);
        }
        for row in &self.log_sigma2 {
            out.extend(row);
        }
        for row in &self.logit_pi {
            out.extend(row);
        }
        out.extend(&self.gamma);
        out.push(self.log_sigma_y);
        flatten_layers(&self.net.trunk, &mut out);
        flatten_layers(&self.net.arms[0], &mut out);
        flatten_layers(&self.net.arms[1], &mut out);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::HeadMode;
    use crate::rng::substream;

    #[test]
    fn flatten_round_trip() {
        let mut rng = substream(9, "pack");
        let state = TrainState {
            mu: vec![vec![0.1, 0.2], vec![0.3, 0.4]],
            log_sigma2: vec![vec![-0.1, 0.0], vec![0.5, -0.5]],
            logit_pi: vec![vec![1.0], vec![-1.0]],
            gamma: vec![0.05, 0.02],
            log_sigma_y: 0.0,
            net: Network::random(3, &[4], HeadMode::Separate, &mut rng),
            outcome_kind: OutcomeKind::Binary,
        };
        let flat = state.flatten();
        assert_eq!(flat.len(), state.layout().total);
        let mut other = state.clone();
        other.mu[0][0] = 99.0;
        other.net.arms[1][0].w[0][0] = -99.0;
        other.read_flat(&flat);
        assert_eq!(other.flatten(), flat);
    }

    #[test]
    fn decay_mask_marks_only_weights() {
        let mut rng = substream(10, "pack");
        let state = TrainState {
            mu: vec![vec![0.0]],
            log_sigma2: vec![vec![0.0]],
            logit_pi: vec![vec![]],
            gamma: vec![0.0],
            log_sigma_y: 0.0,
            net: Network::random(1, &[], HeadMode::Separate, &mut rng),
            outcome_kind: OutcomeKind::Continuous,
        };
        let layout = state.layout();
        let mask = layout.decay_mask();
        // mu, log_sigma2, gamma, log_sigma_y never decay
        for b in &layout.blocks {
            let expect = b.name.ends_with(".w");
            assert_eq!(b.decay, expect, "{}", b.name);
            for i in b.offset..b.offset + b.len {
                assert_eq!(mask[i], expect);
            }
        }
    }
}
