//! Reductions of T stochastic passes into uncertainty estimates: posterior
//! mean/variance, Gaussian log-likelihood, BALD, variation ratio and the
//! max-probability score.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::network::{NetworkWeights, Task};
use crate::samplers::MaskSet;

/// Default floor for the predictive variance inside the Gaussian
/// log-likelihood (standardized-target units).
pub const DEFAULT_VAR_FLOOR: f64 = 1e-6;

/// The T per-pass outputs for a single input.
#[derive(Debug, Clone, PartialEq)]
pub enum EnsemblePrediction {
    /// T scalar outputs.
    Regression(Vec<f64>),
    /// T probability rows over C classes (already softmaxed).
    Classification(Vec<Vec<f64>>),
}

impl EnsemblePrediction {
    pub fn passes(&self) -> usize {
        match self {
            EnsemblePrediction::Regression(v) => v.len(),
            EnsemblePrediction::Classification(rows) => rows.len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.passes() == 0 {
            return Err(Error::ShapeError("prediction has no passes".into()));
        }
        match self {
            EnsemblePrediction::Regression(v) => {
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(Error::ShapeError("non-finite regression output".into()));
                }
            }
            EnsemblePrediction::Classification(rows) => {
                let c = rows[0].len();
                if c < 2 {
                    return Err(Error::ShapeError("fewer than two classes".into()));
                }
                for row in rows {
                    if row.len() != c {
                        return Err(Error::ShapeError("ragged probability rows".into()));
                    }
                    if row.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
                        return Err(Error::ShapeError("negative probability".into()));
                    }
                    let sum: f64 = row.iter().sum();
                    if (sum - 1.0).abs() > 1e-8 {
                        return Err(Error::ShapeError(format!(
                            "probability row sums to {sum}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// A non-negative, finite uncertainty value (variance in target² units,
/// entropies in nats).
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct UncertaintyScore(f64);

impl UncertaintyScore {
    pub fn new(value: f64) -> Result<Self> {
        if !value.is_finite() || value < 0.0 {
            return Err(Error::ShapeError(format!("uncertainty score {value} invalid")));
        }
        Ok(UncertaintyScore(value))
    }

    pub fn value(&self) -> f64 {
        self.0
    }
}

/// Sum in ascending order, so the result does not depend on how the inputs
/// were originally ordered (exact permutation invariance of the estimates).
fn sorted_sum(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    sorted.iter().sum()
}

/// Posterior mean and (biased, divisor T) variance of T regression passes.
pub fn mean_variance(pred: &EnsemblePrediction) -> Result<(f64, f64)> {
    let values = match pred {
        EnsemblePrediction::Regression(v) => v,
        EnsemblePrediction::Classification(_) => {
            return Err(Error::ShapeError(
                "mean_variance expects a regression prediction".into(),
            ))
        }
    };
    pred.validate()?;
    let t = values.len() as f64;
    let mean = sorted_sum(values) / t;
    let sq: Vec<f64> = values.iter().map(|&x| (x - mean) * (x - mean)).collect();
    let var = sorted_sum(&sq) / t;
    Ok((mean, var))
}

/// Gaussian log-density of `y` under mean `mean` and variance
/// `max(var, var_floor)`.
pub fn gaussian_loglik(mean: f64, var: f64, y: f64, var_floor: f64) -> f64 {
    assert!(var_floor > 0.0, "variance floor must be positive");
    let v = var.max(var_floor);
    let d = y - mean;
    -0.5 * (2.0 * std::f64::consts::PI * v).ln() - d * d / (2.0 * v)
}

/// Elementwise mean of the T probability rows.
pub fn mean_probs(pred: &EnsemblePrediction) -> Result<Vec<f64>> {
    let rows = match pred {
        EnsemblePrediction::Classification(rows) => rows,
        EnsemblePrediction::Regression(_) => {
            return Err(Error::ShapeError(
                "mean_probs expects a classification prediction".into(),
            ))
        }
    };
    pred.validate()?;
    let t = rows.len() as f64;
    let c = rows[0].len();
    let mean: Vec<f64> = (0..c)
        .map(|j| {
            let col: Vec<f64> = rows.iter().map(|r| r[j]).collect();
            sorted_sum(&col) / t
        })
        .collect();
    Ok(mean)
}

/// Shannon entropy in nats with the `0·log 0 = 0` convention.
pub fn entropy(probs: &[f64]) -> f64 {
    probs.iter().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()).sum()
}

/// Numerically stable softmax of a logit vector.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&x| (x - m).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / total).collect()
}

/// `1 − max_c p̄(c)`: zero exactly when the mean prediction is one-hot.
pub fn max_prob_score(pred: &EnsemblePrediction) -> Result<UncertaintyScore> {
    let mean = mean_probs(pred)?;
    let max = mean.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    UncertaintyScore::new((1.0 - max).max(0.0))
}

/// BALD mutual information `I = H(p̄) − (1/T)·Σ H(p_i)` in nats, clamped at
/// zero against rounding.
pub fn bald(pred: &EnsemblePrediction) -> Result<UncertaintyScore> {
    let rows = match pred {
        EnsemblePrediction::Classification(rows) => rows,
        EnsemblePrediction::Regression(_) => {
            return Err(Error::ShapeError("bald expects a classification prediction".into()))
        }
    };
    let mean = mean_probs(pred)?;
    let t = rows.len() as f64;
    let member_entropies: Vec<f64> = rows.iter().map(|r| entropy(r)).collect();
    let i = entropy(&mean) - sorted_sum(&member_entropies) / t;
    UncertaintyScore::new(i.max(0.0))
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &p) in row.iter().enumerate().skip(1) {
        if p > row[best] {
            best = j;
        }
    }
    best
}

/// Variation ratio `1 − f_mode/T` over the per-pass argmax votes.
pub fn variation_ratio(pred: &EnsemblePrediction) -> Result<UncertaintyScore> {
    let rows = match pred {
        EnsemblePrediction::Classification(rows) => rows,
        EnsemblePrediction::Regression(_) => {
            return Err(Error::ShapeError(
                "variation_ratio expects a classification prediction".into(),
            ))
        }
    };
    pred.validate()?;
    let c = rows[0].len();
    let mut votes = vec![0usize; c];
    for row in rows {
        votes[argmax(row)] += 1;
    }
    let mode = votes.iter().cloned().max().unwrap();
    UncertaintyScore::new(1.0 - mode as f64 / rows.len() as f64)
}

/// Run the mask bank through one network (or an ensemble), producing one
/// `EnsemblePrediction` per input.
///
/// With a single network every mask set is one stochastic pass. With E > 1
/// ensemble members the bank is divided into E contiguous slices and member
/// e consumes slice e, so the total pass count is still the bank size.
/// Classification outputs are softmaxed; regression networks must have a
/// single output.
pub fn run_inference(
    nets: &[NetworkWeights],
    masks: &[MaskSet],
    inputs: &[Vec<f64>],
) -> Result<Vec<EnsemblePrediction>> {
    if nets.is_empty() {
        return Err(Error::ConfigError("no networks supplied".into()));
    }
    if masks.is_empty() {
        return Err(Error::ConfigError("mask bank is empty".into()));
    }
    let e = nets.len();
    if masks.len() % e != 0 {
        return Err(Error::ConfigError(format!(
            "bank size {} is not divisible by the {e} ensemble members",
            masks.len()
        )));
    }
    let task = nets[0].spec.task;
    for net in nets {
        if net.spec.task != task {
            return Err(Error::ConfigError("ensemble members disagree on the task".into()));
        }
        if matches!(task, Task::Regression) && net.spec.output_dim() != 1 {
            return Err(Error::ShapeError(
                "regression uncertainty needs a single-output network".into(),
            ));
        }
    }
    let slice = masks.len() / e;

    inputs
        .par_iter()
        .map(|x| {
            let mut scalar = Vec::with_capacity(masks.len());
            let mut rows = Vec::with_capacity(masks.len());
            for (m, mask) in masks.iter().enumerate() {
                let net = &nets[m / slice];
                let out = net.forward_masked(x, mask)?;
                match task {
                    Task::Regression => scalar.push(out[0]),
                    Task::Classification { .. } => rows.push(softmax(&out)),
                }
            }
            let pred = match task {
                Task::Regression => EnsemblePrediction::Regression(scalar),
                Task::Classification { .. } => EnsemblePrediction::Classification(rows),
            };
            pred.validate()?;
            Ok(pred)
        })
        .collect()
}
