//! Feedforward outcome function f(x; w_t) with two treatment heads, exact
//! reverse-mode gradients, and an Adam optimizer.
//!
//! A network is a stack of dense layers. Hidden layers use the rectifier,
//! the scalar output layer is identity. In `Separate` mode the two treatment
//! arms own disjoint stacks; in `SharedTrunk` mode the hidden layers are
//! shared and only the scalar heads differ. A linear model is the
//! zero-hidden-layer special case.

use crate::error::{HemmError, Result};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadMode {
    /// Disjoint parameter stacks per treatment arm.
    Separate,
    /// Shared hidden layers, two scalar heads.
    SharedTrunk,
}

impl std::fmt::Display for HeadMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            HeadMode::Separate => write!(f, "separate"),
            HeadMode::SharedTrunk => write!(f, "shared"),
        }
    }
}

/// Dense layer: `w[out][in]` weights plus per-unit bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub w: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

impl Layer {
    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Layer {
            w: vec![vec![0.0; in_dim]; out_dim],
            b: vec![0.0; out_dim],
        }
    }

    /// Uniform init in +-sqrt(6/(fan_in+fan_out)), biases zero.
    pub fn glorot(out_dim: usize, in_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = (6.0 / (in_dim + out_dim) as f64).sqrt();
        Layer {
            w: (0..out_dim)
                .map(|_| (0..in_dim).map(|_| rng.gen_range(-bound..bound)).collect())
                .collect(),
            b: vec![0.0; out_dim],
        }
    }

    fn out_dim(&self) -> usize {
        self.b.len()
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.w
            .iter()
            .zip(&self.b)
            .map(|(row, b)| b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
            .collect()
    }
}

/// Two-headed feedforward function. The full stack evaluated for arm `t` is
/// `trunk ++ arms[t]`; the rectifier is applied after every layer except the
/// last, which is the identity scalar output.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub mode: HeadMode,
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub trunk: Vec<Layer>,
    pub arms: [Vec<Layer>; 2],
}

impl Network {
    /// Zero-initialized network with the given hidden widths.
    pub fn zeros(input_dim: usize, hidden: &[usize], mode: HeadMode) -> Self {
        Self::build(input_dim, hidden, mode, |o, i| Layer::zeros(o, i))
    }

    /// Randomly initialized network (scaled uniform weights, zero biases).
    pub fn random(input_dim: usize, hidden: &[usize], mode: HeadMode, rng: &mut ChaCha8Rng) -> Self {
        Self::build(input_dim, hidden, mode, |o, i| Layer::glorot(o, i, rng))
    }

    fn build(
        input_dim: usize,
        hidden: &[usize],
        mode: HeadMode,
        mut make: impl FnMut(usize, usize) -> Layer,
    ) -> Self {
        let widths: Vec<usize> = std::iter::once(input_dim).chain(hidden.iter().copied()).collect();
        let hidden_layers = |make: &mut dyn FnMut(usize, usize) -> Layer| -> Vec<Layer> {
            widths.windows(2).map(|w| make(w[1], w[0])).collect()
        };
        let last = *widths.last().unwrap();
        match mode {
            HeadMode::Separate => {
                let arm = |make: &mut dyn FnMut(usize, usize) -> Layer| -> Vec<Layer> {
                    let mut layers = hidden_layers(make);
                    layers.push(make(1, last));
                    layers
                };
                Network {
                    mode,
                    input_dim,
                    hidden: hidden.to_vec(),
                    trunk: Vec::new(),
                    arms: [arm(&mut make), arm(&mut make)],
                }
            }
            HeadMode::SharedTrunk => Network {
                mode,
                input_dim,
                hidden: hidden.to_vec(),
                trunk: hidden_layers(&mut make),
                arms: [vec![make(1, last)], vec![make(1, last)]],
            },
        }
    }

    fn stack(&self, head: usize) -> impl Iterator<Item = &Layer> {
        self.trunk.iter().chain(self.arms[head].iter())
    }

    fn stack_len(&self, head: usize) -> usize {
        self.trunk.len() + self.arms[head].len()
    }

    /// Evaluate the scalar output of `head` at `x`.
    pub fn forward(&self, x: &[f64], head: usize) -> Result<f64> {
        if x.len() != self.input_dim {
            return Err(HemmError::DimensionMismatch(format!(
                "network expects {} inputs, got {}",
                self.input_dim,
                x.len()
            )));
        }
        let n = self.stack_len(head);
        let mut a = x.to_vec();
        for (i, layer) in self.stack(head).enumerate() {
            let mut z = layer.apply(&a);
            if i + 1 < n {
                for v in &mut z {
                    *v = v.max(0.0);
                }
            }
            a = z;
        }
        Ok(a[0])
    }

    /// Forward pass that keeps per-layer inputs and pre-activations for
    /// backprop. Returns (output, cache).
    fn forward_cached(&self, x: &[f64], head: usize) -> (f64, ForwardCache) {
        let n = self.stack_len(head);
        let mut inputs = Vec::with_capacity(n);
        let mut preacts = Vec::with_capacity(n);
        let mut a = x.to_vec();
        for (i, layer) in self.stack(head).enumerate() {
            let z = layer.apply(&a);
            inputs.push(a);
            preacts.push(z.clone());
            a = if i + 1 < n {
                z.iter().map(|v| v.max(0.0)).collect()
            } else {
                z
            };
        }
        (a[0], ForwardCache { inputs, preacts })
    }

    /// Exact gradients of `adjoint * output(head)` with respect to every
    /// parameter. The inactive arm's private parameters receive zero.
    pub fn gradient(&self, adjoint: f64, x: &[f64], head: usize) -> Result<NetGrad> {
        if x.len() != self.input_dim {
            return Err(HemmError::DimensionMismatch(format!(
                "network expects {} inputs, got {}",
                self.input_dim,
                x.len()
            )));
        }
        let mut grad = NetGrad::zeros(self);
        let (_, cache) = self.forward_cached(x, head);
        self.accumulate_grad(adjoint, head, &cache, &mut grad);
        Ok(grad)
    }

    fn accumulate_grad(&self, adjoint: f64, head: usize, cache: &ForwardCache, grad: &mut NetGrad) {
        let layers: Vec<&Layer> = self.stack(head).collect();
        let n = layers.len();
        // delta over the output of layer l, starting at the scalar output
        let mut delta = vec![adjoint];
        for l in (0..n).rev() {
            // rectifier gate applies to every layer except the scalar output
            let gate: Vec<f64> = if l + 1 < n {
                cache.preacts[l]
                    .iter()
                    .zip(&delta)
                    .map(|(z, d)| if *z > 0.0 { *d } else { 0.0 })
                    .collect()
            } else {
                delta.clone()
            };
            let (gw, gb) = grad.layer_mut(self, head, l);
            let input = &cache.inputs[l];
            for (u, g) in gate.iter().enumerate() {
                gb[u] += g;
                for (j, xv) in input.iter().enumerate() {
                    gw[u][j] += g * xv;
                }
            }
            if l > 0 {
                let layer = layers[l];
                let mut next = vec![0.0; input.len()];
                for (u, g) in gate.iter().enumerate() {
                    for (j, w) in layer.w[u].iter().enumerate() {
                        next[j] += g * w;
                    }
                }
                delta = next;
            }
        }
    }

    /// Same as [`Network::gradient`] but accumulating into an existing buffer.
    pub fn gradient_into(&self, adjoint: f64, x: &[f64], head: usize, grad: &mut NetGrad) {
        let (_, cache) = self.forward_cached(x, head);
        self.accumulate_grad(adjoint, head, &cache, grad);
    }

    /// Number of scalar parameters.
    pub fn param_count(&self) -> usize {
        self.layers_flat()
            .map(|l| l.w.len() * l.w.first().map_or(0, |r| r.len()) + l.b.len())
            .sum()
    }

    fn layers_flat(&self) -> impl Iterator<Item = &Layer> {
        self.trunk.iter().chain(self.arms[0].iter()).chain(self.arms[1].iter())
    }
}

struct ForwardCache {
    inputs: Vec<Vec<f64>>,
    preacts: Vec<Vec<f64>>,
}

/// Gradient buffer shaped like a [`Network`].
#[derive(Debug, Clone)]
pub struct NetGrad {
    pub trunk: Vec<Layer>,
    pub arms: [Vec<Layer>; 2],
}

impl NetGrad {
    pub fn zeros(net: &Network) -> Self {
        let z = |layers: &[Layer]| -> Vec<Layer> {
            layers
                .iter()
                .map(|l| Layer::zeros(l.out_dim(), l.w.first().map_or(0, |r| r.len())))
                .collect()
        };
        NetGrad {
            trunk: z(&net.trunk),
            arms: [z(&net.arms[0]), z(&net.arms[1])],
        }
    }

    /// Mutable (weights, biases) of stack layer `l` for `head`, resolving
    /// whether it lives in the trunk or the arm.
    fn layer_mut(&mut self, net: &Network, head: usize, l: usize) -> (&mut Vec<Vec<f64>>, &mut Vec<f64>) {
        if l < net.trunk.len() {
            let layer = &mut self.trunk[l];
            (&mut layer.w, &mut layer.b)
        } else {
            let layer = &mut self.arms[head][l - net.trunk.len()];
            (&mut layer.w, &mut layer.b)
        }
    }
}

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AdamConfig {
    pub step_size: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl AdamConfig {
    pub fn with_step(step_size: f64, weight_decay: f64) -> Self {
        AdamConfig {
            step_size,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay,
        }
    }
}

/// Adam state over a flat parameter vector. Weight decay is an additional
/// `step * wd * param` subtraction applied only where `decay_mask` is set.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub cfg: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamState {
    pub fn new(n_params: usize, cfg: AdamConfig) -> Self {
        AdamState {
            cfg,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    /// One bias-corrected descent step along `grads`.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], decay_mask: &[bool]) {
        assert_eq!(params.len(), grads.len());
        assert_eq!(params.len(), self.m.len());
        self.t += 1;
        let c = &self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = c.beta1 * self.m[i] + (1.0 - c.beta1) * g;
            self.v[i] = c.beta2 * self.v[i] + (1.0 - c.beta2) * g * g;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] -= c.step_size * mhat / (vhat.sqrt() + c.epsilon);
            if decay_mask[i] {
                params[i] -= c.step_size * c.weight_decay * params[i];
            }
        }
    }
}

/// Compare analytic gradients against central finite differences over random
/// network/input draws; returns the maximum relative discrepancy. Draws whose
/// forward pass comes within 1e-3 of a rectifier kink are re-sampled.
pub fn finite_diff_check(
    input_dim: usize,
    hidden: &[usize],
    mode: HeadMode,
    trials: usize,
    rng: &mut ChaCha8Rng,
) -> f64 {
    assert!(trials >= 1);
    let h = 1e-5;
    let mut max_rel: f64 = 0.0;
    let mut done = 0;
    'outer: while done < trials {
        let mut net = Network::random(input_dim, hidden, mode, rng);
        // random biases so kinks are not systematically at zero inputs
        let [arm0, arm1] = &mut net.arms;
        for layer in net
            .trunk
            .iter_mut()
            .chain(arm0.iter_mut())
            .chain(arm1.iter_mut())
        {
            for b in &mut layer.b {
                *b = rng.gen_range(-0.5..0.5);
            }
        }
        let x: Vec<f64> = (0..input_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let head = rng.gen_range(0..2usize);
        if !hidden.is_empty() {
            let (_, cache) = net.forward_cached(&x, head);
            let n = net.stack_len(head);
            let near_kink = cache
                .preacts
                .iter()
                .take(n - 1)
                .any(|z| z.iter().any(|v| v.abs() < 1e-3));
            if near_kink {
                continue 'outer;
            }
        }
        let grad = net.gradient(1.0, &x, head).unwrap();
        // walk every parameter with central differences
        let rel = fd_walk(&mut net, &grad, &x, head, h);
        max_rel = max_rel.max(rel);
        done += 1;
    }
    max_rel
}

fn fd_walk(net: &mut Network, grad: &NetGrad, x: &[f64], head: usize, h: f64) -> f64 {
    let mut max_rel: f64 = 0.0;
    let trunk_len = net.trunk.len();
    let arm_lens = [net.arms[0].len(), net.arms[1].len()];
    let mut check = |net: &mut Network, loc: ParamLoc, analytic: f64| {
        let orig = read_param(net, loc);
        write_param(net, loc, orig + h);
        let fp = net.forward(x, head).unwrap();
        write_param(net, loc, orig - h);
        let fm = net.forward(x, head).unwrap();
        write_param(net, loc, orig);
        let fd = (fp - fm) / (2.0 * h);
        let denom = analytic.abs().max(fd.abs()).max(1e-6);
        max_rel = max_rel.max((analytic - fd).abs() / denom);
    };
    for l in 0..trunk_len {
        for u in 0..net.trunk[l].b.len() {
            for j in 0..net.trunk[l].w[u].len() {
                check(net, ParamLoc::TrunkW(l, u, j), grad.trunk[l].w[u][j]);
            }
            check(net, ParamLoc::TrunkB(l, u), grad.trunk[l].b[u]);
        }
    }
    for arm in 0..2 {
        for l in 0..arm_lens[arm] {
            for u in 0..net.arms[arm][l].b.len() {
                for j in 0..net.arms[arm][l].w[u].len() {
                    check(net, ParamLoc::ArmW(arm, l, u, j), grad.arms[arm][l].w[u][j]);
                }
                check(net, ParamLoc::ArmB(arm, l, u), grad.arms[arm][l].b[u]);
            }
        }
    }
    max_rel
}

#[derive(Clone, Copy)]
enum ParamLoc {
    TrunkW(usize, usize, usize),
    TrunkB(usize, usize),
    ArmW(usize, usize, usize, usize),
    ArmB(usize, usize, usize),
}

fn read_param(net: &Network, loc: ParamLoc) -> f64 {
    match loc {
        ParamLoc::TrunkW(l, u, j) => net.trunk[l].w[u][j],
        ParamLoc::TrunkB(l, u) => net.trunk[l].b[u],
        ParamLoc::ArmW(a, l, u, j) => net.arms[a][l].w[u][j],
        ParamLoc::ArmB(a, l, u) => net.arms[a][l].b[u],
    }
}

fn write_param(net: &mut Network, loc: ParamLoc, v: f64) {
    match loc {
        ParamLoc::TrunkW(l, u, j) => net.trunk[l].w[u][j] = v,
        ParamLoc::TrunkB(l, u) => net.trunk[l].b[u] = v,
        ParamLoc::ArmW(a, l, u, j) => net.arms[a][l].w[u][j] = v,
        ParamLoc::ArmB(a, l, u) => net.arms[a][l].b[u] = v,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    #[test]
    fn linear_zero_map() {
        let net = Network::zeros(3, &[], HeadMode::Separate);
        assert_eq!(net.forward(&[1.0, -2.0, 0.5], 0).unwrap(), 0.0);
        assert_eq!(net.forward(&[1.0, -2.0, 0.5], 1).unwrap(), 0.0);
    }

    #[test]
    fn rectifier_kills_negatives() {
        // one hidden unit, hidden weight 1, bias 0, head weight 1
        let mut net = Network::zeros(1, &[1], HeadMode::Separate);
        net.arms[0][0].w[0][0] = 1.0;
        net.arms[0][1].w[0][0] = 1.0;
        assert_eq!(net.forward(&[-2.0], 0).unwrap(), 0.0);
        assert_eq!(net.forward(&[3.0], 0).unwrap(), 3.0);
    }

    #[test]
    fn linear_gradient_is_input() {
        let mut rng = substream(1, "nn-test");
        let net = Network::random(4, &[], HeadMode::Separate, &mut rng);
        let x = [0.3, -1.2, 2.0, 0.0];
        let g = net.gradient(1.0, &x, 1).unwrap();
        for (j, xv) in x.iter().enumerate() {
            assert!((g.arms[1][0].w[0][j] - xv).abs() < 1e-15);
        }
        assert!((g.arms[1][0].b[0] - 1.0).abs() < 1e-15);
        // inactive head untouched
        assert!(g.arms[0][0].w[0].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn dead_unit_zero_upstream_gradient() {
        let mut net = Network::zeros(1, &[1], HeadMode::Separate);
        net.arms[0][0].w[0][0] = 1.0;
        net.arms[0][1].w[0][0] = 1.0;
        let g = net.gradient(1.0, &[-2.0], 0).unwrap();
        assert_eq!(g.arms[0][0].w[0][0], 0.0);
        assert_eq!(g.arms[0][0].b[0], 0.0);
    }

    #[test]
    fn shared_trunk_head_isolation() {
        let mut rng = substream(2, "nn-test");
        let mut net = Network::random(3, &[4], HeadMode::SharedTrunk, &mut rng);
        let x = [0.2, 0.7, -0.1];
        let before = net.forward(&x, 0).unwrap();
        net.arms[1][0].w[0][0] += 5.0;
        assert_eq!(net.forward(&x, 0).unwrap(), before);
        net.trunk[0].w[0][0] += 1.0;
        assert_ne!(net.forward(&x, 0).unwrap(), before);
    }

    #[test]
    fn finite_diff_linear_exact() {
        let mut rng = substream(3, "nn-fd");
        let err = finite_diff_check(5, &[], HeadMode::Separate, 20, &mut rng);
        assert!(err < 1e-8, "linear fd error {err}");
    }

    #[test]
    fn finite_diff_one_hidden() {
        let mut rng = substream(4, "nn-fd");
        let err = finite_diff_check(4, &[6], HeadMode::Separate, 30, &mut rng);
        assert!(err < 1e-4, "1-layer fd error {err}");
    }

    #[test]
    fn finite_diff_two_hidden_shared() {
        let mut rng = substream(5, "nn-fd");
        let err = finite_diff_check(4, &[6, 3], HeadMode::SharedTrunk, 30, &mut rng);
        assert!(err < 1e-4, "2-layer fd error {err}");
    }

    #[test]
    fn adam_null_step_keeps_params() {
        let mut st = AdamState::new(3, AdamConfig::with_step(0.001, 0.0));
        let mut p = vec![1.0, -2.0, 0.5];
        st.step(&mut p, &[0.0; 3], &[false; 3]);
        assert_eq!(p, vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn adam_first_step_unit_gradient() {
        let mut st = AdamState::new(1, AdamConfig::with_step(0.001, 0.0));
        let mut p = vec![0.0];
        st.step(&mut p, &[1.0], &[false]);
        let expect = -0.001 / (1.0 + 1e-8);
        assert!((p[0] - expect).abs() < 1e-12, "got {}", p[0]);
    }

    #[test]
    fn adam_decay_only_shrinks() {
        let mut st = AdamState::new(1, AdamConfig::with_step(0.01, 0.1));
        let mut p = vec![2.0];
        st.step(&mut p, &[0.0], &[true]);
        assert!((p[0] - 2.0 * (1.0 - 0.01 * 0.1)).abs() < 1e-15);
    }
}
