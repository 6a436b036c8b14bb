//! From-scratch mini-batch trainer: backprop through the masked MLP, Adam
//! updates, and early stopping on a held-out validation slice.

use serde::{Deserialize, Serialize};

use super::{DenseLayer, NetworkSpec, NetworkWeights, Task};
use crate::error::{Error, Result};
use crate::numerics::RngStream;

// stream ids derived from the training seed
const STREAM_INIT: u64 = 1;
const STREAM_SPLIT: u64 = 2;
const STREAM_SHUFFLE: u64 = 3;
const STREAM_DROPOUT: u64 = 4;

/// Training loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Loss {
    Mse,
    CrossEntropy,
}

/// Targets paired with the training inputs.
#[derive(Debug, Clone, PartialEq)]
pub enum TrainTargets {
    /// One row of real targets per input (row length = output width).
    Regression(Vec<Vec<f64>>),
    /// One class index per input.
    Classes(Vec<usize>),
}

impl TrainTargets {
    pub fn len(&self) -> usize {
        match self {
            TrainTargets::Regression(rows) => rows.len(),
            TrainTargets::Classes(ys) => ys.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn subset(&self, idx: &[usize]) -> TrainTargets {
        match self {
            TrainTargets::Regression(rows) => {
                TrainTargets::Regression(idx.iter().map(|&i| rows[i].clone()).collect())
            }
            TrainTargets::Classes(ys) => {
                TrainTargets::Classes(idx.iter().map(|&i| ys[i]).collect())
            }
        }
    }
}

/// Inputs plus targets, standardized by the caller.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub inputs: Vec<Vec<f64>>,
    pub targets: TrainTargets,
}

impl TrainingSet {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    fn subset(&self, idx: &[usize]) -> TrainingSet {
        TrainingSet {
            inputs: idx.iter().map(|&i| self.inputs[i].clone()).collect(),
            targets: self.targets.subset(idx),
        }
    }

    fn validate(&self, spec: &NetworkSpec) -> Result<()> {
        if self.is_empty() {
            return Err(Error::ConfigError("training set is empty".into()));
        }
        if self.targets.len() != self.inputs.len() {
            return Err(Error::ShapeError("inputs and targets differ in length".into()));
        }
        if self.inputs.iter().any(|x| x.len() != spec.input_dim()) {
            return Err(Error::ShapeError("input dimension mismatch".into()));
        }
        match (&self.targets, spec.task) {
            (TrainTargets::Regression(rows), Task::Regression) => {
                if rows.iter().any(|r| r.len() != spec.output_dim()) {
                    return Err(Error::ShapeError("target dimension mismatch".into()));
                }
            }
            (TrainTargets::Classes(ys), Task::Classification { classes }) => {
                if ys.iter().any(|&y| y >= classes) {
                    return Err(Error::ShapeError("class index out of range".into()));
                }
            }
            _ => return Err(Error::ConfigError("target kind does not match the task".into())),
        }
        Ok(())
    }
}

/// Optimizer and early-stopping settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub batch_size: usize,
    /// Validation loss is checked every this many epochs.
    pub check_interval: usize,
    /// Consecutive non-improving checks before stopping.
    pub patience: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub loss: Loss,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_epochs: 10_000,
            batch_size: 500,
            check_interval: 100,
            patience: 5,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            loss: Loss::Mse,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patience < 1 {
            return Err(Error::ConfigError("patience must be at least 1".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::ConfigError("batch size must be at least 1".into()));
        }
        if self.check_interval < 1 {
            return Err(Error::ConfigError("check interval must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::ConfigError("learning rate must be positive".into()));
        }
        Ok(())
    }
}

/// Parameter gradients, mirroring the layer layout of `NetworkWeights`.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub layers: Vec<DenseLayer>,
}

impl Gradients {
    fn zeros(spec: &NetworkSpec) -> Self {
        Gradients {
            layers: (0..spec.num_layers())
                .map(|l| DenseLayer::zeros(spec.widths[l], spec.widths[l + 1]))
                .collect(),
        }
    }

    fn scale(&mut self, c: f64) {
        for layer in &mut self.layers {
            for w in &mut layer.weights {
                *w *= c;
            }
            for b in &mut layer.bias {
                *b *= c;
            }
        }
    }
}

fn target_loss_gradient(
    loss: Loss,
    output: &[f64],
    targets: &TrainTargets,
    sample: usize,
) -> (f64, Vec<f64>) {
    match (loss, targets) {
        (Loss::Mse, TrainTargets::Regression(rows)) => {
            let y = &rows[sample];
            let k = output.len() as f64;
            let mut grad = vec![0.0; output.len()];
            let mut l = 0.0;
            for (i, (&o, &t)) in output.iter().zip(y).enumerate() {
                let d = o - t;
                l += d * d / k;
                grad[i] = 2.0 * d / k;
            }
            (l, grad)
        }
        (Loss::CrossEntropy, TrainTargets::Classes(ys)) => {
            let y = ys[sample];
            // stable log-sum-exp
            let m = output.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sum_exp: f64 = output.iter().map(|&o| (o - m).exp()).sum();
            let lse = m + sum_exp.ln();
            let l = lse - output[y];
            let mut grad: Vec<f64> =
                output.iter().map(|&o| (o - m).exp() / sum_exp).collect();
            grad[y] -= 1.0;
            (l, grad)
        }
        _ => panic!("loss does not match target kind"),
    }
}

/// Mean loss over a batch. `scales` optionally carries one per-sample set of
/// hidden-layer multipliers (dropout or Horvitz-Thompson weights).
pub fn batch_loss(
    net: &NetworkWeights,
    data: &TrainingSet,
    loss: Loss,
    scales: Option<&[Vec<Option<Vec<f64>>>]>,
) -> Result<f64> {
    let mut total = 0.0;
    for (s, x) in data.inputs.iter().enumerate() {
        let trace = net.forward_trace(x, scales.map(|sc| sc[s].as_slice()))?;
        let (l, _) = target_loss_gradient(loss, trace.outputs.last().unwrap(), &data.targets, s);
        total += l;
    }
    Ok(total / data.len() as f64)
}

/// Mean loss and its gradient w.r.t. every parameter, by backprop.
pub fn batch_loss_and_grads(
    net: &NetworkWeights,
    data: &TrainingSet,
    loss: Loss,
    scales: Option<&[Vec<Option<Vec<f64>>>]>,
) -> Result<(f64, Gradients)> {
    let spec = &net.spec;
    let k = spec.num_layers();
    let mut grads = Gradients::zeros(spec);
    let mut total = 0.0;
    for (s, x) in data.inputs.iter().enumerate() {
        let sample_scales = scales.map(|sc| sc[s].as_slice());
        let trace = net.forward_trace(x, sample_scales)?;
        let (l, out_grad) =
            target_loss_gradient(loss, trace.outputs.last().unwrap(), &data.targets, s);
        total += l;

        // delta = dL/dS^h, starting at the linear head
        let mut delta = out_grad;
        for h in (1..=k).rev() {
            let layer = &net.layers[h - 1];
            let glayer = &mut grads.layers[h - 1];
            let input = &trace.outputs[h - 1];
            for i in 0..layer.out_dim {
                glayer.bias[i] += delta[i];
                let row = &mut glayer.weights[i * layer.in_dim..(i + 1) * layer.in_dim];
                for (j, g) in row.iter_mut().enumerate() {
                    *g += delta[i] * input[j];
                }
            }
            if h == 1 {
                break;
            }
            // dL/dO~^{h-1} = W^T delta
            let mut prev = vec![0.0; layer.in_dim];
            for i in 0..layer.out_dim {
                let row = &layer.weights[i * layer.in_dim..(i + 1) * layer.in_dim];
                for (j, &w) in row.iter().enumerate() {
                    prev[j] += w * delta[i];
                }
            }
            // through the mask scaling, then the activation
            if let Some(sc) = sample_scales {
                if let Some(g) = &sc[h - 1] {
                    for (p, &gj) in prev.iter_mut().zip(g) {
                        *p *= gj;
                    }
                }
            }
            let pre = &trace.preacts[h - 2];
            for (p, &s) in prev.iter_mut().zip(pre) {
                *p *= spec.activation.derivative(s);
            }
            delta = prev;
        }
    }
    let inv = 1.0 / data.len() as f64;
    total *= inv;
    grads.scale(inv);
    Ok((total, grads))
}

fn glorot_init(spec: &NetworkSpec, rng: &mut RngStream) -> NetworkWeights {
    let mut net = NetworkWeights::zeros(spec.clone());
    for layer in &mut net.layers {
        let bound = (6.0 / (layer.in_dim + layer.out_dim) as f64).sqrt();
        for w in &mut layer.weights {
            *w = (rng.next_f64() * 2.0 - 1.0) * bound;
        }
    }
    net
}

struct Adam {
    m: Gradients,
    v: Gradients,
    t: u64,
}

impl Adam {
    fn new(spec: &NetworkSpec) -> Self {
        Adam { m: Gradients::zeros(spec), v: Gradients::zeros(spec), t: 0 }
    }

    fn step(&mut self, net: &mut NetworkWeights, grads: &Gradients, cfg: &TrainConfig) {
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t as i32);
        let bc2 = 1.0 - cfg.beta2.powi(self.t as i32);
        for (l, layer) in net.layers.iter_mut().enumerate() {
            let g = &grads.layers[l];
            let m = &mut self.m.layers[l];
            let v = &mut self.v.layers[l];
            for i in 0..layer.weights.len() {
                m.weights[i] = cfg.beta1 * m.weights[i] + (1.0 - cfg.beta1) * g.weights[i];
                v.weights[i] =
                    cfg.beta2 * v.weights[i] + (1.0 - cfg.beta2) * g.weights[i] * g.weights[i];
                let mhat = m.weights[i] / bc1;
                let vhat = v.weights[i] / bc2;
                layer.weights[i] -= cfg.learning_rate * mhat / (vhat.sqrt() + cfg.adam_eps);
            }
            for i in 0..layer.bias.len() {
                m.bias[i] = cfg.beta1 * m.bias[i] + (1.0 - cfg.beta1) * g.bias[i];
                v.bias[i] = cfg.beta2 * v.bias[i] + (1.0 - cfg.beta2) * g.bias[i] * g.bias[i];
                let mhat = m.bias[i] / bc1;
                let vhat = v.bias[i] / bc2;
                layer.bias[i] -= cfg.learning_rate * mhat / (vhat.sqrt() + cfg.adam_eps);
            }
        }
    }
}

/// Deterministic 80/20 split of `0..n` used for early stopping: indices are
/// shuffled by the seed and the last fifth becomes the validation slice.
/// The same split feeds kernel calibration downstream.
pub fn validation_split(n: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = RngStream::new(seed, STREAM_SPLIT);
    rng.shuffle(&mut idx);
    let val_len = n / 5;
    let train_len = n - val_len;
    let val = idx.split_off(train_len);
    (idx, val)
}

/// Bernoulli dropout multipliers for one sample: kept neurons get `1/(1-p)`.
fn training_scales(spec: &NetworkSpec, rng: &mut RngStream) -> Vec<Option<Vec<f64>>> {
    let keep = 1.0 - spec.dropout_rate;
    let mut scales: Vec<Option<Vec<f64>>> = vec![None; spec.num_layers() + 1];
    for &h in &spec.dropout_layers {
        let g: Vec<f64> = (0..spec.widths[h])
            .map(|_| if rng.next_bool(keep) { 1.0 / keep } else { 0.0 })
            .collect();
        scales[h] = Some(g);
    }
    scales
}

/// Train with mini-batch Adam and early stopping; returns the weights from
/// the best validation checkpoint.
pub fn train(spec: &NetworkSpec, data: &TrainingSet, cfg: &TrainConfig) -> Result<NetworkWeights> {
    spec.validate()?;
    cfg.validate()?;
    data.validate(spec)?;
    match (cfg.loss, spec.task) {
        (Loss::Mse, Task::Regression) | (Loss::CrossEntropy, Task::Classification { .. }) => {}
        _ => return Err(Error::ConfigError("loss does not match the task".into())),
    }

    let (train_idx, val_idx) = validation_split(data.len(), cfg.seed);
    let train_data = data.subset(&train_idx);
    let val_data = if val_idx.is_empty() { None } else { Some(data.subset(&val_idx)) };

    let mut init_rng = RngStream::new(cfg.seed, STREAM_INIT);
    let mut net = glorot_init(spec, &mut init_rng);
    let mut adam = Adam::new(spec);
    let mut shuffle_rng = RngStream::new(cfg.seed, STREAM_SHUFFLE);
    let mut dropout_rng = RngStream::new(cfg.seed, STREAM_DROPOUT);

    let mut best: Option<(f64, NetworkWeights)> = None;
    let mut bad_checks = 0usize;
    let mut order: Vec<usize> = (0..train_data.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        shuffle_rng.shuffle(&mut order);
        for chunk in order.chunks(cfg.batch_size) {
            let batch = train_data.subset(chunk);
            let scales: Vec<Vec<Option<Vec<f64>>>> =
                (0..batch.len()).map(|_| training_scales(spec, &mut dropout_rng)).collect();
            let (loss, grads) = batch_loss_and_grads(&net, &batch, cfg.loss, Some(&scales))?;
            if !loss.is_finite() {
                return Err(Error::DivergedTraining(format!(
                    "non-finite batch loss at epoch {epoch}"
                )));
            }
            adam.step(&mut net, &grads, cfg);
        }

        if let Some(val) = &val_data {
            if epoch % cfg.check_interval == 0 {
                let val_loss = batch_loss(&net, val, cfg.loss, None)?;
                if !val_loss.is_finite() {
                    return Err(Error::DivergedTraining(format!(
                        "non-finite validation loss at epoch {epoch}"
                    )));
                }
                let improved = best.as_ref().map_or(true, |(b, _)| val_loss < *b);
                if improved {
                    best = Some((val_loss, net.clone()));
                    bad_checks = 0;
                } else {
                    bad_checks += 1;
                    if bad_checks >= cfg.patience {
                        break;
                    }
                }
            }
        }
    }

    Ok(best.map_or(net, |(_, w)| w))
}

/// Train `count` independent models from seeds `seed + 0 .. seed + count - 1`.
pub fn train_ensemble(
    spec: &NetworkSpec,
    data: &TrainingSet,
    cfg: &TrainConfig,
    count: usize,
) -> Result<Vec<NetworkWeights>> {
    assert!(count >= 1, "ensemble needs at least one member");
    (0..count)
        .map(|e| {
            let mut member_cfg = cfg.clone();
            member_cfg.seed = cfg.seed + e as u64;
            train(spec, data, &member_cfg)
        })
        .collect()
}
