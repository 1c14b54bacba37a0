//! The recurrent recognizer: stacked GRU layers, a LeakyReLU hidden
//! layer, and a linear classification layer, with a configurable
//! front/trunk split point for grafting.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::{leaky_relu, leaky_relu_grad, FcLayer, GruCache, GruLayer};
use super::tensor::Tensor2;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("input width {got} does not match network input dim {want}")]
    InputWidthMismatch { want: usize, got: usize },
    #[error("state width {got} does not match trunk input dim {want}")]
    StateWidthMismatch { want: usize, got: usize },
    #[error("front_split {0} out of range [1, {1}]")]
    BadFrontSplit(usize, usize),
    #[error("normalization stats have wrong width: {got} (input dim {want})")]
    BadNormWidth { want: usize, got: usize },
}

/// Per-band affine input standardization, stored with the network so a
/// checkpoint is self-contained. Applied as `(x - mean) / std`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputNorm {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl InputNorm {
    /// Column-wise stats over a stack of feature matrices.
    pub fn fit(frames: &[&Tensor2]) -> InputNorm {
        let cols = frames.first().map(|t| t.cols()).unwrap_or(0);
        let mut mean = vec![0.0; cols];
        let mut count = 0usize;
        for t in frames {
            for r in 0..t.rows() {
                for (m, v) in mean.iter_mut().zip(t.row(r)) {
                    *m += v;
                }
            }
            count += t.rows();
        }
        let n = count.max(1) as f64;
        for m in mean.iter_mut() {
            *m /= n;
        }
        let mut var = vec![0.0; cols];
        for t in frames {
            for r in 0..t.rows() {
                for (s, (v, m)) in var.iter_mut().zip(t.row(r).iter().zip(&mean)) {
                    let d = v - m;
                    *s += d * d;
                }
            }
        }
        let std = var.iter().map(|s| (s / n).sqrt().max(1e-6)).collect();
        InputNorm { mean, std }
    }

    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }
}

/// Architecture description; serialized into checkpoint headers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub input_dim: usize,
    pub gru_sizes: Vec<usize>,
    pub fc_size: usize,
    pub n_classes: usize,
    #[serde(default = "default_leaky_slope")]
    pub leaky_slope: f64,
    #[serde(default = "default_front_split")]
    pub front_split: usize,
    #[serde(default)]
    pub input_norm: Option<InputNorm>,
}

fn default_leaky_slope() -> f64 {
    0.01
}

fn default_front_split() -> usize {
    1
}

impl NetConfig {
    pub fn new(input_dim: usize, gru_sizes: Vec<usize>, fc_size: usize, n_classes: usize) -> Self {
        NetConfig {
            input_dim,
            gru_sizes,
            fc_size,
            n_classes,
            leaky_slope: default_leaky_slope(),
            front_split: default_front_split(),
            input_norm: None,
        }
    }

    pub fn validate(&self) -> Result<(), NetError> {
        if self.front_split < 1 || self.front_split > self.gru_sizes.len() {
            return Err(NetError::BadFrontSplit(
                self.front_split,
                self.gru_sizes.len(),
            ));
        }
        if let Some(norm) = &self.input_norm {
            if norm.mean.len() != self.input_dim || norm.std.len() != self.input_dim {
                return Err(NetError::BadNormWidth {
                    want: self.input_dim,
                    got: norm.mean.len(),
                });
            }
        }
        Ok(())
    }

    /// Width of the states the front end hands to the trunk.
    pub fn front_width(&self) -> usize {
        self.gru_sizes[self.front_split - 1]
    }
}

/// Exact number of stored weight scalars for a config.
pub fn param_count(config: &NetConfig) -> usize {
    let mut total = 0;
    let mut in_dim = config.input_dim;
    for &h in &config.gru_sizes {
        total += gru_param_count(in_dim, h);
        in_dim = h;
    }
    total += in_dim * config.fc_size + config.fc_size;
    total += config.fc_size * config.n_classes + config.n_classes;
    total
}

/// Parameters of a single GRU layer under the two-bias convention.
pub fn gru_param_count(input_dim: usize, hidden_dim: usize) -> usize {
    3 * hidden_dim * (input_dim + hidden_dim + 2)
}

/// Per-timestep hidden states with their timestamps (microseconds).
#[derive(Debug, Clone, PartialEq)]
pub struct StateSequence {
    pub states: Tensor2,
    pub timestamps: Vec<u64>,
}

impl StateSequence {
    pub fn len(&self) -> usize {
        self.states.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.states.rows() == 0
    }
}

/// Full recognizer network.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub config: NetConfig,
    pub grus: Vec<GruLayer>,
    pub fc_hidden: FcLayer,
    pub classifier: FcLayer,
}

/// Everything the backward pass needs from a full forward pass.
pub struct FullCache {
    pub gru_caches: Vec<GruCache>,
    /// Input to fc_hidden per timestep (last GRU's states).
    pub fc_in: Vec<Vec<f64>>,
    /// Pre-activation of the LeakyReLU.
    pub fc_pre: Vec<Vec<f64>>,
    /// Post-activation (input to the classifier).
    pub fc_act: Vec<Vec<f64>>,
}

/// Parameter gradients shaped like the network itself.
pub type NetworkGrads = Network;

impl Network {
    /// Fresh network with seeded uniform init (deterministic per seed).
    pub fn init(config: NetConfig, seed: u64) -> Result<Network, NetError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut grus = Vec::new();
        let mut in_dim = config.input_dim;
        for &h in &config.gru_sizes {
            grus.push(GruLayer::init(in_dim, h, &mut rng));
            in_dim = h;
        }
        let fc_hidden = FcLayer::init(in_dim, config.fc_size, &mut rng);
        let classifier = FcLayer::init(config.fc_size, config.n_classes, &mut rng);
        Ok(Network {
            config,
            grus,
            fc_hidden,
            classifier,
        })
    }

    pub fn zeros_like(&self) -> NetworkGrads {
        Network {
            config: self.config.clone(),
            grus: self.grus.iter().map(|g| g.zeros_like()).collect(),
            fc_hidden: self.fc_hidden.zeros_like(),
            classifier: self.classifier.zeros_like(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.param_slices().iter().map(|s| s.len()).sum()
    }

    /// All parameters in checkpoint order: GRU layers front to back,
    /// then fc_hidden, then classifier.
    pub fn param_slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for g in &self.grus {
            out.extend(g.param_slices());
        }
        out.extend(self.fc_hidden.param_slices());
        out.extend(self.classifier.param_slices());
        out
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for g in &mut self.grus {
            out.extend(g.param_slices_mut());
        }
        out.extend(self.fc_hidden.param_slices_mut());
        out.extend(self.classifier.param_slices_mut());
        out
    }

    fn normalized_inputs(&self, frames: &Tensor2) -> Result<Vec<Vec<f64>>, NetError> {
        if frames.rows() > 0 && frames.cols() != self.config.input_dim {
            return Err(NetError::InputWidthMismatch {
                want: self.config.input_dim,
                got: frames.cols(),
            });
        }
        let rows = frames.rows();
        let mut out = Vec::with_capacity(rows);
        match &self.config.input_norm {
            Some(norm) => {
                for r in 0..rows {
                    out.push(norm.apply(frames.row(r)));
                }
            }
            None => {
                for r in 0..rows {
                    out.push(frames.row(r).to_vec());
                }
            }
        }
        Ok(out)
    }

    /// Run the front layers (GRUs below the split) over a feature
    /// sequence from the zero start state.
    pub fn forward_front(
        &self,
        frames: &Tensor2,
        timestamps: &[u64],
    ) -> Result<StateSequence, NetError> {
        self.forward_front_from(frames, timestamps, None)
    }

    /// Same with explicit per-layer start states (for the
    /// stateful-continuation property).
    pub fn forward_front_from(
        &self,
        frames: &Tensor2,
        timestamps: &[u64],
        start: Option<&[Vec<f64>]>,
    ) -> Result<StateSequence, NetError> {
        let mut xs = self.normalized_inputs(frames)?;
        let split = self.config.front_split;
        for (l, gru) in self.grus[..split].iter().enumerate() {
            let h0 = start.map(|s| s[l].as_slice());
            let cache = gru.forward_seq(&xs, h0);
            xs = cache.hidden[1..].to_vec();
        }
        let width = self.config.front_width();
        let t_len = xs.len();
        let mut states = Tensor2::zeros(t_len, width);
        for (r, h) in xs.iter().enumerate() {
            states.row_mut(r).copy_from_slice(h);
        }
        Ok(StateSequence {
            states,
            timestamps: timestamps.to_vec(),
        })
    }

    /// Run the trunk (GRUs above the split plus both FC layers) over a
    /// state sequence; returns per-timestep class logits.
    pub fn forward_trunk(&self, states: &StateSequence) -> Result<Tensor2, NetError> {
        let width = self.config.front_width();
        if states.states.rows() > 0 && states.states.cols() != width {
            return Err(NetError::StateWidthMismatch {
                want: width,
                got: states.states.cols(),
            });
        }
        let mut xs: Vec<Vec<f64>> = (0..states.states.rows())
            .map(|r| states.states.row(r).to_vec())
            .collect();
        for gru in &self.grus[self.config.front_split..] {
            let cache = gru.forward_seq(&xs, None);
            xs = cache.hidden[1..].to_vec();
        }
        let mut logits = Tensor2::zeros(xs.len(), self.config.n_classes);
        for (r, h) in xs.iter().enumerate() {
            let pre = self.fc_hidden.forward(h);
            let act: Vec<f64> = pre
                .iter()
                .map(|&v| leaky_relu(v, self.config.leaky_slope))
                .collect();
            let y = self.classifier.forward(&act);
            logits.row_mut(r).copy_from_slice(&y);
        }
        Ok(logits)
    }

    /// Full forward pass (front + trunk in one sweep).
    pub fn forward(&self, frames: &Tensor2) -> Result<Tensor2, NetError> {
        let (logits, _) = self.forward_cached(frames)?;
        Ok(logits)
    }

    /// Full forward pass keeping caches for the backward pass.
    pub fn forward_cached(&self, frames: &Tensor2) -> Result<(Tensor2, FullCache), NetError> {
        let mut xs = self.normalized_inputs(frames)?;
        let mut gru_caches = Vec::with_capacity(self.grus.len());
        for gru in &self.grus {
            let cache = gru.forward_seq(&xs, None);
            xs = cache.hidden[1..].to_vec();
            gru_caches.push(cache);
        }
        let t_len = xs.len();
        let mut fc_pre = Vec::with_capacity(t_len);
        let mut fc_act = Vec::with_capacity(t_len);
        let mut logits = Tensor2::zeros(t_len, self.config.n_classes);
        for (r, h) in xs.iter().enumerate() {
            let pre = self.fc_hidden.forward(h);
            let act: Vec<f64> = pre
                .iter()
                .map(|&v| leaky_relu(v, self.config.leaky_slope))
                .collect();
            let y = self.classifier.forward(&act);
            logits.row_mut(r).copy_from_slice(&y);
            fc_pre.push(pre);
            fc_act.push(act);
        }
        Ok((
            logits,
            FullCache {
                gru_caches,
                fc_in: xs,
                fc_pre,
                fc_act,
            },
        ))
    }

    /// Backward pass over the whole network given d(loss)/d(logits).
    pub fn backward(&self, cache: &FullCache, d_logits: &Tensor2) -> NetworkGrads {
        let t_len = cache.fc_in.len();
        debug_assert_eq!(d_logits.rows(), t_len);
        let mut grads = self.zeros_like();

        let mut d_states: Vec<Vec<f64>> = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let d_act =
                self.classifier
                    .backward_frame(&cache.fc_act[t], d_logits.row(t), &mut grads.classifier);
            let d_pre: Vec<f64> = d_act
                .iter()
                .zip(&cache.fc_pre[t])
                .map(|(d, &pre)| d * leaky_relu_grad(pre, self.config.leaky_slope))
                .collect();
            let d_in =
                self.fc_hidden
                    .backward_frame(&cache.fc_in[t], &d_pre, &mut grads.fc_hidden);
            d_states.push(d_in);
        }

        for (l, gru) in self.grus.iter().enumerate().rev() {
            let want_dx = l > 0;
            let (g, dxs) = gru.backward_seq(&cache.gru_caches[l], &d_states, want_dx);
            grads.grus[l] = g;
            if let Some(dxs) = dxs {
                d_states = dxs;
            }
        }
        grads
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> NetConfig {
        NetConfig::new(3, vec![4, 5], 6, 4)
    }

    #[test]
    fn reference_param_count() {
        let cfg = NetConfig::new(40, vec![256, 256], 200, 12);
        assert_eq!(param_count(&cfg), 677_428);
        // component breakdown
        assert_eq!(gru_param_count(40, 256), 228_864);
        assert_eq!(gru_param_count(256, 256), 394_752);
    }

    #[test]
    fn unit_param_count_by_hand() {
        // 3*1*(1+1+2) + (1*1+1) + (1*1+1) = 12 + 2 + 2 = 16
        let cfg = NetConfig::new(1, vec![1], 1, 1);
        assert_eq!(param_count(&cfg), 16);
    }

    #[test]
    fn front_only_gru_count() {
        assert_eq!(gru_param_count(64, 256), 247_296);
    }

    #[test]
    fn param_count_equals_stored_scalars() {
        let net = Network::init(tiny_config(), 3).unwrap();
        assert_eq!(net.param_count(), param_count(&net.config));
        let big = Network::init(NetConfig::new(40, vec![256, 256], 200, 12), 3).unwrap();
        assert_eq!(big.param_count(), 677_428);
    }

    #[test]
    fn empty_input_gives_empty_states() {
        let net = Network::init(tiny_config(), 0).unwrap();
        let states = net.forward_front(&Tensor2::zeros(0, 3), &[]).unwrap();
        assert!(states.is_empty());
    }

    #[test]
    fn front_trunk_composition_matches_full_forward() {
        for split in [1, 2] {
            let mut cfg = tiny_config();
            cfg.front_split = split;
            let net = Network::init(cfg, 7).unwrap();
            let frames = Tensor2::from_fn(6, 3, |r, c| ((r * 3 + c) as f64 * 0.37).sin());
            let ts: Vec<u64> = (0..6).map(|i| i as u64 * 10_000).collect();
            let full = net.forward(&frames).unwrap();
            let states = net.forward_front(&frames, &ts).unwrap();
            let composed = net.forward_trunk(&states).unwrap();
            assert_eq!(full, composed);
        }
    }

    #[test]
    fn front_split_one_is_first_gru_states() {
        let net = Network::init(tiny_config(), 9).unwrap();
        let frames = Tensor2::from_fn(4, 3, |r, c| (r as f64 - c as f64) * 0.21);
        let ts: Vec<u64> = (0..4).map(|i| i as u64).collect();
        let states = net.forward_front(&frames, &ts).unwrap();
        let cache = net.grus[0].forward_seq(
            &(0..4).map(|r| frames.row(r).to_vec()).collect::<Vec<_>>(),
            None,
        );
        for t in 0..4 {
            assert_eq!(states.states.row(t), cache.hidden[t + 1].as_slice());
        }
    }

    #[test]
    fn stateful_continuation_matches_single_pass() {
        let net = Network::init(tiny_config(), 21).unwrap();
        let frames = Tensor2::from_fn(5, 3, |r, c| ((r + c) as f64 * 0.13).cos());
        let ts: Vec<u64> = (0..5).map(|i| i as u64).collect();
        let whole = net.forward_front(&frames, &ts).unwrap();

        let head = Tensor2::from_fn(3, 3, |r, c| frames.get(r, c));
        let tail = Tensor2::from_fn(2, 3, |r, c| frames.get(r + 3, c));
        let first = net.forward_front(&head, &ts[..3]).unwrap();
        // Carry the final hidden state of each front layer forward.
        // With front_split = 1 there is a single layer to carry.
        let carried = vec![first.states.row(2).to_vec()];
        let second = net
            .forward_front_from(&tail, &ts[3..], Some(&carried))
            .unwrap();
        for t in 0..2 {
            for d in 0..4 {
                let a = whole.states.get(3 + t, d);
                let b = second.states.get(t, d);
                assert!((a - b).abs() < 1e-12, "t={t} d={d}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn zero_weight_trunk_gives_zero_logits() {
        let mut net = Network::init(tiny_config(), 4).unwrap();
        for s in net.param_slices_mut() {
            for v in s {
                *v = 0.0;
            }
        }
        let frames = Tensor2::from_fn(3, 3, |r, c| (r + c) as f64);
        let logits = net.forward(&frames).unwrap();
        assert_eq!(logits, Tensor2::zeros(3, 4));
    }

    #[test]
    fn width_mismatch_is_an_error() {
        let net = Network::init(tiny_config(), 4).unwrap();
        assert!(net.forward(&Tensor2::zeros(2, 5)).is_err());
        let states = StateSequence {
            states: Tensor2::zeros(2, 9),
            timestamps: vec![0, 1],
        };
        assert!(net.forward_trunk(&states).is_err());
    }

    #[test]
    fn full_backward_matches_finite_differences() {
        let mut net = Network::init(tiny_config(), 33).unwrap();
        let frames = Tensor2::from_fn(3, 3, |r, c| ((r * 7 + c) as f64 * 0.29).sin() * 0.8);
        // Loss: weighted sum of logits.
        let w = Tensor2::from_fn(3, 4, |r, c| ((r + 2 * c) as f64 * 0.41).cos());
        let loss = |net: &Network| -> f64 {
            let y = net.forward(&frames).unwrap();
            y.as_slice()
                .iter()
                .zip(w.as_slice())
                .map(|(a, b)| a * b)
                .sum()
        };
        let (logits, cache) = net.forward_cached(&frames).unwrap();
        assert_eq!(logits.rows(), 3);
        let grads = net.backward(&cache, &w);

        let analytic: Vec<f64> = grads
            .param_slices()
            .iter()
            .flat_map(|s| s.iter().copied())
            .collect();
        let eps = 1e-5;
        let n = analytic.len();
        // Spot-check a deterministic subset (every 7th parameter).
        for k in (0..n).step_by(7) {
            let numeric = {
                let mut bump = |delta: f64| {
                    let mut idx = k;
                    let mut slices = net.param_slices_mut();
                    let mut si = 0;
                    while idx >= slices[si].len() {
                        idx -= slices[si].len();
                        si += 1;
                    }
                    slices[si][idx] += delta;
                };
                bump(eps);
                let up = loss(&net);
                bump(-2.0 * eps);
                let down = loss(&net);
                bump(eps);
                (up - down) / (2.0 * eps)
            };
            let a = analytic[k];
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            assert!(
                (a - numeric).abs() / denom < 1e-5,
                "param {k}: analytic {a} vs numeric {numeric}"
            );
        }
    }
}
