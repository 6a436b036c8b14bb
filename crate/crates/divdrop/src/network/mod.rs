//! Multilayer perceptron with dropout.
//!
//! Layer `h` computes the pre-activation `S^h = W^h O^{h-1} + b^h` and the
//! output `O^h = sigma(S^h)`; the final layer is a linear head (softmax, when
//! needed, happens downstream). Dropout masks apply to hidden-layer outputs
//! only, never to biases or the output layer. The masked forward pass
//! reweights kept neurons by their inverse marginal inclusion probability
//! (Horvitz-Thompson), which reduces to the familiar `1/(1-p)` scaling for
//! Bernoulli masks.

mod train;

pub use train::{
    batch_loss, batch_loss_and_grads, train, train_ensemble, validation_split, Gradients,
    Loss, TrainConfig, TrainTargets, TrainingSet,
};

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::samplers::MaskSet;

/// Nonlinearity applied between layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    LeakyRelu,
    Relu,
    Celu,
}

pub const LEAKY_RELU_SLOPE: f64 = 0.01;
pub const CELU_ALPHA: f64 = 1.0;

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::LeakyRelu => {
                if x > 0.0 {
                    x
                } else {
                    LEAKY_RELU_SLOPE * x
                }
            }
            Activation::Relu => x.max(0.0),
            Activation::Celu => {
                if x > 0.0 {
                    x
                } else {
                    CELU_ALPHA * ((x / CELU_ALPHA).exp() - 1.0)
                }
            }
        }
    }

    /// Derivative as a function of the pre-activation.
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::LeakyRelu => {
                if x > 0.0 {
                    1.0
                } else {
                    LEAKY_RELU_SLOPE
                }
            }
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Celu => {
                if x > 0.0 {
                    1.0
                } else {
                    (x / CELU_ALPHA).exp()
                }
            }
        }
    }
}

/// What the network predicts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Regression,
    Classification { classes: usize },
}

/// MLP architecture: layer widths `N_0..N_K`, activation, dropout placement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    /// Widths from the input layer to the output layer, inclusive.
    pub widths: Vec<usize>,
    pub activation: Activation,
    pub dropout_rate: f64,
    /// Hidden layers whose outputs are masked (layer `h` produces `O^h`,
    /// so valid ids are `1..K`). Defaults to every hidden layer.
    pub dropout_layers: Vec<usize>,
    pub task: Task,
}

impl NetworkSpec {
    /// Spec with dropout after every hidden layer.
    pub fn new(widths: Vec<usize>, activation: Activation, dropout_rate: f64, task: Task) -> Result<Self> {
        let hidden = if widths.len() >= 2 { (1..widths.len() - 1).collect() } else { vec![] };
        let spec = NetworkSpec { widths, activation, dropout_rate, dropout_layers: hidden, task };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 {
            return Err(Error::ConfigError("need at least input and output widths".into()));
        }
        if self.widths.iter().any(|&w| w == 0) {
            return Err(Error::ConfigError("layer widths must be at least 1".into()));
        }
        if !(self.dropout_rate > 0.0 && self.dropout_rate < 1.0) {
            return Err(Error::ConfigError("dropout rate must lie in (0, 1)".into()));
        }
        let k = self.num_layers();
        for &h in &self.dropout_layers {
            if h == 0 || h >= k {
                return Err(Error::ConfigError(format!(
                    "dropout layer {h} is not a hidden layer (valid: 1..{k})"
                )));
            }
        }
        if let Task::Classification { classes } = self.task {
            if classes < 2 {
                return Err(Error::ConfigError("classification needs at least 2 classes".into()));
            }
            if *self.widths.last().unwrap() != classes {
                return Err(Error::ConfigError("output width must equal the class count".into()));
            }
        }
        Ok(())
    }

    /// Number of affine layers K.
    pub fn num_layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }
}

/// One affine layer: `out_dim x in_dim` row-major weights plus bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        DenseLayer { in_dim, out_dim, weights: vec![0.0; in_dim * out_dim], bias: vec![0.0; out_dim] }
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[i * self.in_dim + j]
    }

    fn affine(&self, input: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for i in 0..self.out_dim {
            let row = &self.weights[i * self.in_dim..(i + 1) * self.in_dim];
            let s: f64 = row.iter().zip(input).map(|(w, x)| w * x).sum();
            out.push(s + self.bias[i]);
        }
    }
}

/// Learned parameters of an MLP together with its architecture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkWeights {
    pub spec: NetworkSpec,
    pub layers: Vec<DenseLayer>,
}

/// Per-layer traces of one forward pass, kept for backprop and activation
/// capture. `outputs[h]` is the (post-mask) input seen by layer `h + 1`;
/// `outputs[0]` is the input vector itself.
#[derive(Debug, Clone)]
pub(crate) struct ForwardTrace {
    /// `preacts[h - 1]` is `S^h`.
    pub preacts: Vec<Vec<f64>>,
    /// `outputs[h]` is `O^h` after any mask scaling; `outputs[0] = x`.
    pub outputs: Vec<Vec<f64>>,
}

impl NetworkWeights {
    /// Zero-initialized weights for a spec (mostly useful in tests).
    pub fn zeros(spec: NetworkSpec) -> Self {
        let layers = (0..spec.num_layers())
            .map(|l| DenseLayer::zeros(spec.widths[l], spec.widths[l + 1]))
            .collect();
        NetworkWeights { spec, layers }
    }

    /// Deterministic forward pass: no masks, no scaling. This equals the
    /// conventional dropout inference rule (all-ones masks times `1-p`,
    /// with the `1/(1-p)` factor cancelling).
    pub fn forward_deterministic(&self, x: &[f64]) -> Result<Vec<f64>> {
        let trace = self.forward_trace(x, None)?;
        Ok(trace.outputs.last().unwrap().clone())
    }

    /// Horvitz-Thompson masked forward pass: dropped neurons contribute
    /// zero and kept neurons are scaled by `1/pi_j` before the next layer.
    pub fn forward_masked(&self, x: &[f64], masks: &MaskSet) -> Result<Vec<f64>> {
        let scales = self.mask_scales(masks)?;
        let trace = self.forward_trace(x, Some(&scales))?;
        Ok(trace.outputs.last().unwrap().clone())
    }

    /// Deterministic activations `O^h` of every hidden layer, outermost
    /// index h = 1..K-1.
    pub fn hidden_activations(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        let trace = self.forward_trace(x, None)?;
        Ok(trace.outputs[1..self.spec.num_layers()].to_vec())
    }

    /// Turn a `MaskSet` into per-hidden-layer multiplier vectors
    /// `g_j = m_j / pi_j` indexed by layer id.
    pub(crate) fn mask_scales(&self, masks: &MaskSet) -> Result<Vec<Option<Vec<f64>>>> {
        let k = self.spec.num_layers();
        let mut scales: Vec<Option<Vec<f64>>> = vec![None; k + 1];
        if masks.layers.len() != self.spec.dropout_layers.len() {
            return Err(Error::ShapeError(format!(
                "mask set has {} layers, spec has {} dropout layers",
                masks.layers.len(),
                self.spec.dropout_layers.len()
            )));
        }
        for (mask, &h) in masks.layers.iter().zip(&self.spec.dropout_layers) {
            if mask.layer != h {
                return Err(Error::ShapeError(format!(
                    "mask layer id {} does not match dropout layer {h}",
                    mask.layer
                )));
            }
            if mask.kept.len() != self.spec.widths[h] {
                return Err(Error::ShapeError(format!(
                    "mask for layer {h} has length {}, expected {}",
                    mask.kept.len(),
                    self.spec.widths[h]
                )));
            }
            let mut g = vec![0.0; mask.kept.len()];
            for (j, (&kept, &pi)) in mask.kept.iter().zip(&mask.marginals).enumerate() {
                if kept {
                    if pi <= 0.0 {
                        return Err(Error::InvalidMask(format!(
                            "kept neuron {j} in layer {h} has marginal {pi}"
                        )));
                    }
                    g[j] = 1.0 / pi;
                }
            }
            scales[h] = Some(g);
        }
        Ok(scales)
    }

    /// Forward pass recording every pre-activation and output.
    /// `scales[h]`, when present, multiplies `O^h` elementwise.
    pub(crate) fn forward_trace(
        &self,
        x: &[f64],
        scales: Option<&[Option<Vec<f64>>]>,
    ) -> Result<ForwardTrace> {
        if x.len() != self.spec.input_dim() {
            return Err(Error::ShapeError(format!(
                "input has dimension {}, spec wants {}",
                x.len(),
                self.spec.input_dim()
            )));
        }
        let k = self.spec.num_layers();
        let mut outputs = Vec::with_capacity(k + 1);
        let mut preacts = Vec::with_capacity(k);
        outputs.push(x.to_vec());
        let mut pre = Vec::new();
        for h in 1..=k {
            self.layers[h - 1].affine(&outputs[h - 1], &mut pre);
            preacts.push(pre.clone());
            let mut out: Vec<f64> = if h < k {
                pre.iter().map(|&s| self.spec.activation.apply(s)).collect()
            } else {
                pre.clone()
            };
            if let Some(scales) = scales {
                if let Some(g) = &scales[h] {
                    for (o, &s) in out.iter_mut().zip(g) {
                        *o *= s;
                    }
                }
            }
            outputs.push(out);
        }
        Ok(ForwardTrace { preacts, outputs })
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let file = VersionedWeights { version: WEIGHTS_VERSION, network: self.clone() };
        let out = serde_json::to_string_pretty(&file)?;
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<NetworkWeights> {
        let raw = std::fs::read_to_string(path)?;
        let file: VersionedWeights = serde_json::from_str(&raw)?;
        if file.version != WEIGHTS_VERSION {
            return Err(Error::ConfigError(format!(
                "unsupported weights version {}",
                file.version
            )));
        }
        let net = file.network;
        net.spec.validate()?;
        if net.layers.len() != net.spec.num_layers() {
            return Err(Error::ShapeError("layer count does not match spec".into()));
        }
        for (l, layer) in net.layers.iter().enumerate() {
            if layer.in_dim != net.spec.widths[l]
                || layer.out_dim != net.spec.widths[l + 1]
                || layer.weights.len() != layer.in_dim * layer.out_dim
                || layer.bias.len() != layer.out_dim
            {
                return Err(Error::ShapeError(format!("layer {l} shape mismatch")));
            }
            if layer.weights.iter().chain(&layer.bias).any(|w| !w.is_finite()) {
                return Err(Error::InvalidMatrix);
            }
        }
        Ok(net)
    }
}

pub const WEIGHTS_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct VersionedWeights {
    version: u32,
    network: NetworkWeights,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::samplers::{LayerMask, MaskSet, SamplerKind};
    use approx::assert_abs_diff_eq;

    fn toy_net() -> NetworkWeights {
        // 2 -> 2 -> 1 with leaky-relu hidden layer
        let spec = NetworkSpec::new(
            vec![2, 2, 1],
            Activation::LeakyRelu,
            0.5,
            Task::Regression,
        )
        .unwrap();
        let mut net = NetworkWeights::zeros(spec);
        net.layers[0].weights = vec![1.0, -1.0, 0.5, 2.0];
        net.layers[0].bias = vec![0.1, -0.2];
        net.layers[1].weights = vec![1.5, -0.5];
        net.layers[1].bias = vec![0.25];
        net
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let spec =
            NetworkSpec::new(vec![3, 4, 2], Activation::Relu, 0.5, Task::Regression).unwrap();
        let net = NetworkWeights::zeros(spec);
        let y = net.forward_deterministic(&[1.0, -2.0, 3.0]).unwrap();
        assert_eq!(y, vec![0.0, 0.0]);
    }

    #[test]
    fn hand_computed_forward() {
        let net = toy_net();
        // S^1 = (1*1 - 1*2 + 0.1, 0.5*1 + 2*2 - 0.2) = (-0.9, 4.3)
        // O^1 = (leaky(-0.9), 4.3) = (-0.009, 4.3)
        // y = 1.5*(-0.009) - 0.5*4.3 + 0.25 = -1.9135
        let y = net.forward_deterministic(&[1.0, 2.0]).unwrap();
        assert_abs_diff_eq!(y[0], -1.9135, epsilon = 1e-12);
    }

    #[test]
    fn dimension_mismatch_is_shape_error() {
        let net = toy_net();
        assert!(matches!(
            net.forward_deterministic(&[1.0]),
            Err(Error::ShapeError(_))
        ));
    }

    #[test]
    fn all_ones_mask_with_unit_marginals_matches_deterministic() {
        let net = toy_net();
        let mask = MaskSet {
            kind: SamplerKind::Bernoulli,
            layers: vec![LayerMask::new(1, vec![true, true], vec![1.0, 1.0]).unwrap()],
        };
        let x = [0.3, -1.2];
        let a = net.forward_deterministic(&x).unwrap();
        let b = net.forward_masked(&x, &mask).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn bernoulli_mask_matches_inverse_keep_scaling() {
        // HT with pi = 1-p is exactly the 1/(1-p) dropout scaling
        let net = toy_net();
        let p = net.spec.dropout_rate;
        let mask = MaskSet {
            kind: SamplerKind::Bernoulli,
            layers: vec![LayerMask::new(1, vec![true, false], vec![1.0 - p, 1.0 - p]).unwrap()],
        };
        let x = [1.0, 2.0];
        let y = net.forward_masked(&x, &mask).unwrap();
        // manual: O^1 = (-0.009, 0), scaled kept by 1/(1-0.5) = 2
        let o1 = -0.009 * 2.0;
        assert_abs_diff_eq!(y[0], 1.5 * o1 + 0.25, epsilon = 1e-12);
    }

    #[test]
    fn kept_neuron_with_zero_marginal_is_invalid() {
        let net = toy_net();
        let mask = MaskSet {
            kind: SamplerKind::Bernoulli,
            layers: vec![LayerMask {
                layer: 1,
                kept: vec![true, true],
                marginals: vec![0.0, 1.0],
            }],
        };
        assert!(matches!(
            net.forward_masked(&[0.0, 0.0], &mask),
            Err(Error::InvalidMask(_))
        ));
    }

    #[test]
    fn ht_is_unbiased_over_exhaustive_bernoulli_masks() {
        // width-10 hidden layer: sum over all 2^10 masks of P(mask) times the
        // HT-weighted hidden output equals the deterministic hidden output
        let spec =
            NetworkSpec::new(vec![3, 10, 1], Activation::LeakyRelu, 0.3, Task::Regression)
                .unwrap();
        let mut rng = crate::numerics::RngStream::new(99, 0);
        let mut net = NetworkWeights::zeros(spec);
        for layer in &mut net.layers {
            for w in &mut layer.weights {
                *w = rng.next_f64() * 2.0 - 1.0;
            }
            for b in &mut layer.bias {
                *b = rng.next_f64() - 0.5;
            }
        }
        let x = [0.4, -0.7, 1.1];
        let deterministic = net.forward_deterministic(&x).unwrap()[0];
        let p: f64 = 0.3;
        let n = 10u32;
        let mut expectation = 0.0;
        for bits in 0u32..(1 << n) {
            let kept: Vec<bool> = (0..n).map(|j| bits >> j & 1 == 1).collect();
            let kept_count = kept.iter().filter(|&&k| k).count() as i32;
            let prob = (1.0 - p).powi(kept_count) * p.powi(n as i32 - kept_count);
            let mask = MaskSet {
                kind: SamplerKind::Bernoulli,
                layers: vec![LayerMask {
                    layer: 1,
                    kept,
                    marginals: vec![1.0 - p; n as usize],
                }],
            };
            expectation += prob * net.forward_masked(&x, &mask).unwrap()[0];
        }
        assert_abs_diff_eq!(expectation, deterministic, epsilon = 1e-10);
    }

    #[test]
    fn weights_roundtrip_through_json() {
        let net = toy_net();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("weights.json");
        net.save_json(&path).unwrap();
        let loaded = NetworkWeights::load_json(&path).unwrap();
        assert_eq!(net, loaded);
    }

    #[test]
    fn dropout_on_output_layer_is_rejected() {
        let spec = NetworkSpec {
            widths: vec![2, 3, 1],
            activation: Activation::Relu,
            dropout_rate: 0.5,
            dropout_layers: vec![2],
            task: Task::Regression,
        };
        assert!(spec.validate().is_err());
    }
}
