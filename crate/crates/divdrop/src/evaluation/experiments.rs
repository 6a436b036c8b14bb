//! Experiment drivers: in-domain log-likelihood sweeps over samplers and pass
//! counts, log-likelihood convergence traces, OOD percentile-exceedance
//! tables and classification uncertainty-quality curves.
//!
//! All drivers share one cell recipe: split the rows, standardize by
//! train-split statistics, train one network per (split, fold, run) cell and
//! reuse it across every sampler, calibrate kernels on the early-stopping
//! validation slice, then draw one mask bank per sampler. Pass-count sweeps
//! use nested prefixes of that bank, so T and T' share their first
//! min(T, T') masks. Cells run in parallel; every random choice is keyed by
//! a seed path, so reports are bit-reproducible regardless of scheduling.
//! Runtime errors inside a cell (a degenerate kernel, a diverging run) are
//! recorded as failures in the report instead of aborting the experiment.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::curves::{count_vs_uncertainty_curve, ue_accuracy_curve};
use crate::evaluation::dataset::{Standardizer, TabularDataset, Targets};
use crate::evaluation::report::{
    summarize_records, CurvePoints, ExperimentReport, FailureRecord, LabeledCurve,
    MetricRecord, TimingRecord,
};
use crate::evaluation::splits::{Split, SplitKind, SplitPlan};
use crate::evaluation::{mix_seed, percentile};
use crate::kernels::{capture_activations, estimate_kernel, KernelKind, NeuronKernel};
use crate::network::{
    train, validation_split, Activation, Loss, NetworkSpec, NetworkWeights, Task, TrainConfig,
    TrainTargets, TrainingSet,
};
use crate::samplers::{build_mask_bank, MaskBank, SamplerConfig, SamplerKind};
use crate::uncertainty::{
    argmax, bald, gaussian_loglik, max_prob_score, mean_probs, mean_variance, run_inference,
    variation_ratio, EnsemblePrediction, UncertaintyScore, DEFAULT_VAR_FLOOR,
};

/// Seed-path tags separating the independent random choices of a run.
const TAG_SPLIT: u64 = 1;
const TAG_TRAIN: u64 = 2;
const TAG_BANK: u64 = 3;

/// Metric name of the in-domain mean test Gaussian log-likelihood.
pub const METRIC_TEST_LL: &str = "test-gaussian-loglik";
/// Metric name of the in-domain classification accuracy.
pub const METRIC_TEST_ACCURACY: &str = "test-accuracy";
/// Percentile levels of the OOD exceedance table.
pub const DEFAULT_OOD_PERCENTILES: [f64; 3] = [80.0, 90.0, 95.0];

/// Network architecture, independent of the dataset dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub dropout_rate: f64,
    /// Hidden layers to mask; `None` masks every hidden layer.
    pub dropout_layers: Option<Vec<usize>>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden: vec![128, 128, 64],
            activation: Activation::LeakyRelu,
            dropout_rate: 0.5,
            dropout_layers: None,
        }
    }
}

impl ModelConfig {
    /// Concrete architecture for a dataset: input width from the features,
    /// output width from the task (1 for regression, C for classification).
    pub fn spec_for(&self, input_dim: usize, task: Task) -> Result<NetworkSpec> {
        let output = match task {
            Task::Regression => 1,
            Task::Classification { classes } => classes,
        };
        let mut widths = Vec::with_capacity(self.hidden.len() + 2);
        widths.push(input_dim);
        widths.extend_from_slice(&self.hidden);
        widths.push(output);
        let mut spec = NetworkSpec::new(widths, self.activation, self.dropout_rate, task)?;
        if let Some(layers) = &self.dropout_layers {
            spec.dropout_layers = layers.clone();
            spec.validate()?;
        }
        Ok(spec)
    }
}

/// Shared knobs of every experiment driver. The training loss is chosen by
/// the dataset task and the training seed by the cell, so those two fields of
/// `train` are overridden per cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
pub struct ProtocolConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Predictive-variance floor inside the Gaussian log-likelihood
    /// (standardized-target units).
    pub var_floor: f64,
    /// Threshold count of count-vs-uncertainty grids.
    pub curve_grid: usize,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            var_floor: DEFAULT_VAR_FLOOR,
            curve_grid: 20,
        }
    }
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if !(self.var_floor > 0.0 && self.var_floor.is_finite()) {
            return Err(Error::ConfigError("variance floor must be positive".into()));
        }
        if self.curve_grid < 2 {
            return Err(Error::ConfigError("curve grid needs at least 2 thresholds".into()));
        }
        Ok(())
    }
}

/// How often the protocol repeats: random splits × fold orientations ×
/// training runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
pub struct Repeats {
    pub splits: usize,
    /// 1 uses each split as-is; 2 adds the swapped orientation (2-fold CV).
    pub folds: usize,
    pub runs: usize,
}

impl Default for Repeats {
    fn default() -> Self {
        Repeats { splits: 5, folds: 2, runs: 5 }
    }
}

impl Repeats {
    pub fn validate(&self) -> Result<()> {
        if self.splits == 0 || self.runs == 0 {
            return Err(Error::ConfigError("need at least one split and one run".into()));
        }
        if !(1..=2).contains(&self.folds) {
            return Err(Error::ConfigError("folds must be 1 or 2".into()));
        }
        Ok(())
    }
}

/// How the OOD side of an exceedance experiment is constructed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OodMode {
    /// Train on one side of the median of the given feature; the far side is
    /// out-of-distribution.
    MedianSplit { feature: usize },
    /// Train and "OOD" halves come from the same distribution (a random
    /// half split); exceedance should then calibrate to (100 − α)%.
    InDistributionNull,
}

/// Scalar uncertainty measure used by the classification protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum UncertaintyMeasure {
    #[default]
    Bald,
    MaxProb,
    VariationRatio,
}

impl UncertaintyMeasure {
    pub fn name(self) -> &'static str {
        match self {
            UncertaintyMeasure::Bald => "bald",
            UncertaintyMeasure::MaxProb => "max-prob",
            UncertaintyMeasure::VariationRatio => "variation-ratio",
        }
    }

    pub fn score(self, pred: &EnsemblePrediction) -> Result<UncertaintyScore> {
        match self {
            UncertaintyMeasure::Bald => bald(pred),
            UncertaintyMeasure::MaxProb => max_prob_score(pred),
            UncertaintyMeasure::VariationRatio => variation_ratio(pred),
        }
    }
}

/// Estimate one kernel per dropout layer from the network's activations on
/// the calibration inputs.
pub fn calibrate_kernels(
    net: &NetworkWeights,
    calibration: &[Vec<f64>],
    kind: KernelKind,
) -> Result<Vec<NeuronKernel>> {
    net.spec
        .dropout_layers
        .iter()
        .map(|&layer| {
            let sample = capture_activations(net, calibration, layer)?;
            estimate_kernel(&sample, kind)
        })
        .collect()
}

/// Record name of the α-exceedance metric, e.g. `ood-exceedance-p90`.
pub fn exceedance_metric(alpha: f64) -> String {
    format!("ood-exceedance-p{alpha}")
}

/// Percentage of OOD variances strictly above the α-percentile of the
/// training variances.
fn exceedance_percent(train_vars: &[f64], ood_vars: &[f64], alpha: f64) -> f64 {
    let threshold = percentile(train_vars, alpha);
    100.0 * ood_vars.iter().filter(|&&v| v > threshold).count() as f64 / ood_vars.len() as f64
}

/// One trained cell: the network, its standardized train/test splits, the
/// fitted standardizer and the kernel-calibration inputs (the early-stopping
/// validation slice; the whole train split when that slice is empty).
struct PreparedCell {
    net: NetworkWeights,
    train: TabularDataset,
    test: TabularDataset,
    standardizer: Standardizer,
    calibration: Vec<Vec<f64>>,
}

fn to_train_targets(targets: &Targets) -> TrainTargets {
    match targets {
        Targets::Regression(y) => {
            TrainTargets::Regression(y.iter().map(|&v| vec![v]).collect())
        }
        Targets::Classes { labels, .. } => TrainTargets::Classes(labels.clone()),
    }
}

fn prepare_cell(
    data: &TabularDataset,
    train_idx: &[usize],
    test_idx: &[usize],
    config: &ProtocolConfig,
    cell_seed: u64,
) -> Result<PreparedCell> {
    let train_raw = data.subset(train_idx);
    let test_raw = data.subset(test_idx);
    let standardizer = Standardizer::fit(&train_raw)?;
    let train_std = standardizer.apply(&train_raw)?;
    let test_std = standardizer.apply(&test_raw)?;

    let spec = config.model.spec_for(data.dim(), data.task())?;
    let mut train_cfg = config.train.clone();
    train_cfg.seed = cell_seed;
    train_cfg.loss = match data.task() {
        Task::Regression => Loss::Mse,
        Task::Classification { .. } => Loss::CrossEntropy,
    };
    let training = TrainingSet {
        inputs: train_std.features.clone(),
        targets: to_train_targets(&train_std.targets),
    };
    let net = train(&spec, &training, &train_cfg)?;

    let (_, val_idx) = validation_split(training.len(), cell_seed);
    let calibration: Vec<Vec<f64>> = if val_idx.is_empty() {
        train_std.features.clone()
    } else {
        val_idx.iter().map(|&i| train_std.features[i].clone()).collect()
    };

    Ok(PreparedCell { net, train: train_std, test: test_std, standardizer, calibration })
}

/// Which half trains in each fold of 2-fold cross-validation.
fn fold_orientation(split: &Split, fold: usize) -> (&[usize], &[usize]) {
    if fold == 0 {
        (&split.train, &split.test)
    } else {
        (&split.test, &split.train)
    }
}

type KernelCache = Vec<(KernelKind, std::result::Result<Vec<NeuronKernel>, String>)>;

/// Estimate each kernel kind any sampler needs, once. Failures are cached as
/// messages so every dependent sampler reports the same cause.
fn kernel_cache(prepared: &PreparedCell, samplers: &[SamplerConfig]) -> KernelCache {
    let mut kinds: Vec<KernelKind> = Vec::new();
    for cfg in samplers {
        if cfg.kind == SamplerKind::Bernoulli {
            continue;
        }
        let kind = cfg.effective_kernel_kind();
        if !kinds.contains(&kind) {
            kinds.push(kind);
        }
    }
    kinds
        .into_iter()
        .map(|kind| {
            let result = calibrate_kernels(&prepared.net, &prepared.calibration, kind)
                .map_err(|e| e.to_string());
            (kind, result)
        })
        .collect()
}

/// Draw a mask bank for one sampler, resolving its kernels from the cache.
fn sampler_bank(
    prepared: &PreparedCell,
    cache: &KernelCache,
    cfg: &SamplerConfig,
    t: usize,
    bank_seed: u64,
) -> std::result::Result<MaskBank, String> {
    const NO_KERNELS: &[NeuronKernel] = &[];
    let kernels: &[NeuronKernel] = if cfg.kind == SamplerKind::Bernoulli {
        NO_KERNELS
    } else {
        let kind = cfg.effective_kernel_kind();
        match cache.iter().find(|(k, _)| *k == kind) {
            Some((_, Ok(kernels))) => kernels,
            Some((_, Err(message))) => return Err(message.clone()),
            None => return Err(format!("no cached kernels of kind {kind:?}")),
        }
    };
    build_mask_bank(&prepared.net.spec, kernels, cfg, t, bank_seed).map_err(|e| e.to_string())
}

fn regression_targets(data: &TabularDataset) -> Result<&[f64]> {
    match &data.targets {
        Targets::Regression(y) => Ok(y),
        Targets::Classes { .. } => {
            Err(Error::ConfigError("expected a regression dataset".into()))
        }
    }
}

/// Mean Gaussian log-likelihood over the test points using only the first
/// `t` passes of each prediction.
fn prefix_mean_loglik(
    preds: &[EnsemblePrediction],
    targets: &[f64],
    t: usize,
    var_floor: f64,
) -> Result<f64> {
    if preds.len() != targets.len() {
        return Err(Error::ShapeError("prediction/target counts differ".into()));
    }
    let mut total = 0.0;
    for (pred, &y) in preds.iter().zip(targets) {
        let passes = match pred {
            EnsemblePrediction::Regression(v) => v,
            EnsemblePrediction::Classification(_) => {
                return Err(Error::ShapeError("regression prediction expected".into()))
            }
        };
        if t > passes.len() {
            return Err(Error::ShapeError(format!(
                "prefix {t} exceeds the {} available passes",
                passes.len()
            )));
        }
        let head = EnsemblePrediction::Regression(passes[..t].to_vec());
        let (mean, var) = mean_variance(&head)?;
        total += gaussian_loglik(mean, var, y, var_floor);
    }
    Ok(total / preds.len() as f64)
}

/// Posterior variance of each prediction's passes.
fn predictive_variances(preds: &[EnsemblePrediction]) -> Result<Vec<f64>> {
    preds.iter().map(|p| mean_variance(p).map(|(_, var)| var)).collect()
}

fn validate_experiment_inputs(
    data: &TabularDataset,
    samplers: &[SamplerConfig],
    config: &ProtocolConfig,
) -> Result<()> {
    data.validate()?;
    config.validate()?;
    if samplers.is_empty() {
        return Err(Error::ConfigError("no samplers requested".into()));
    }
    for cfg in samplers {
        cfg.validate()?;
    }
    // records are keyed by the sampler name, so kinds must be distinct
    for (i, cfg) in samplers.iter().enumerate() {
        if samplers[..i].iter().any(|other| other.kind == cfg.kind) {
            return Err(Error::ConfigError(format!(
                "duplicate sampler kind '{}'",
                cfg.kind.name()
            )));
        }
    }
    Ok(())
}

fn dataset_echo(data: &TabularDataset) -> serde_json::Value {
    serde_json::json!({
        "name": data.name,
        "rows": data.len(),
        "dims": data.dim(),
    })
}

fn failure(s: usize, fold: usize, run: usize, cfg: &SamplerConfig, message: &str) -> FailureRecord {
    FailureRecord { split: s, fold, run, sampler: cfg.kind.name().into(), message: message.into() }
}

/// The in-domain protocol: per (split, fold, run) cell train one network,
/// then per sampler draw one bank of max(T) masks and report the mean test
/// Gaussian log-likelihood of every requested prefix length T.
pub fn run_regression_experiment(
    data: &TabularDataset,
    samplers: &[SamplerConfig],
    t_list: &[usize],
    repeats: Repeats,
    config: &ProtocolConfig,
    seed: u64,
) -> Result<ExperimentReport> {
    let started = Instant::now();
    validate_experiment_inputs(data, samplers, config)?;
    repeats.validate()?;
    if data.task() != Task::Regression {
        return Err(Error::ConfigError("this protocol needs a regression dataset".into()));
    }
    if t_list.is_empty() || t_list.contains(&0) {
        return Err(Error::ConfigError("pass counts must be positive and non-empty".into()));
    }

    let splits: Vec<Split> = (0..repeats.splits)
        .map(|s| {
            SplitPlan { kind: SplitKind::RandomHalf, seed: mix_seed(&[seed, TAG_SPLIT, s as u64]) }
                .split(data)
        })
        .collect::<Result<_>>()?;

    let mut cells = Vec::new();
    for s in 0..repeats.splits {
        for fold in 0..repeats.folds {
            for run in 0..repeats.runs {
                cells.push((s, fold, run));
            }
        }
    }

    let outcomes: Vec<(Vec<MetricRecord>, Vec<FailureRecord>)> = cells
        .par_iter()
        .map(|&(s, fold, run)| {
            regression_cell(data, &splits[s], s, fold, run, samplers, t_list, config, seed)
        })
        .collect();

    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (recs, fails) in outcomes {
        records.extend(recs);
        failures.extend(fails);
    }
    let summaries = summarize_records(&records);

    Ok(ExperimentReport {
        name: format!("regression-loglik/{}", data.name),
        config: serde_json::json!({
            "dataset": dataset_echo(data),
            "samplers": samplers,
            "t-list": t_list,
            "repeats": repeats,
            "protocol": config,
            "seed": seed,
        }),
        records,
        summaries,
        curves: vec![],
        failures,
        timings: vec![TimingRecord {
            label: "total".into(),
            seconds: started.elapsed().as_secs_f64(),
        }],
    })
}

#[allow(clippy::too_many_arguments)]
fn regression_cell(
    data: &TabularDataset,
    split: &Split,
    s: usize,
    fold: usize,
    run: usize,
    samplers: &[SamplerConfig],
    t_list: &[usize],
    config: &ProtocolConfig,
    seed: u64,
) -> (Vec<MetricRecord>, Vec<FailureRecord>) {
    let cell_seed = mix_seed(&[seed, TAG_TRAIN, s as u64, fold as u64, run as u64]);
    let fail_all = |message: &str| -> (Vec<MetricRecord>, Vec<FailureRecord>) {
        (vec![], samplers.iter().map(|cfg| failure(s, fold, run, cfg, message)).collect())
    };

    let (train_idx, test_idx) = fold_orientation(split, fold);
    let prepared = match prepare_cell(data, train_idx, test_idx, config, cell_seed) {
        Ok(p) => p,
        Err(e) => return fail_all(&e.to_string()),
    };
    let targets = match regression_targets(&prepared.test) {
        Ok(y) => y.to_vec(),
        Err(e) => return fail_all(&e.to_string()),
    };
    let cache = kernel_cache(&prepared, samplers);
    let t_max = t_list.iter().copied().max().unwrap();

    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (si, cfg) in samplers.iter().enumerate() {
        let bank_seed =
            mix_seed(&[seed, TAG_BANK, s as u64, fold as u64, run as u64, si as u64]);
        let outcome = sampler_bank(&prepared, &cache, cfg, t_max, bank_seed).and_then(|bank| {
            run_inference(std::slice::from_ref(&prepared.net), &bank.masks, &prepared.test.features)
                .map_err(|e| e.to_string())
        });
        let preds = match outcome {
            Ok(preds) => preds,
            Err(message) => {
                failures.push(failure(s, fold, run, cfg, &message));
                continue;
            }
        };
        for &t in t_list {
            match prefix_mean_loglik(&preds, &targets, t, config.var_floor) {
                Ok(value) => records.push(MetricRecord {
                    sampler: cfg.kind.name().into(),
                    t,
                    split: s,
                    fold,
                    run,
                    seed: cell_seed,
                    metric: METRIC_TEST_LL.into(),
                    value,
                }),
                Err(e) => failures.push(failure(s, fold, run, cfg, &e.to_string())),
            }
        }
    }
    (records, failures)
}

/// Mean test log-likelihood as a function of T = 1..T_max over nested
/// prefixes of a single mask bank. Uses the same seed paths as cell
/// (split 0, fold 0, run 0) of [`run_regression_experiment`].
pub fn run_convergence_trace(
    data: &TabularDataset,
    sampler: &SamplerConfig,
    t_max: usize,
    config: &ProtocolConfig,
    seed: u64,
) -> Result<CurvePoints> {
    validate_experiment_inputs(data, std::slice::from_ref(sampler), config)?;
    if data.task() != Task::Regression {
        return Err(Error::ConfigError("this protocol needs a regression dataset".into()));
    }
    if t_max < 2 {
        return Err(Error::ConfigError("a convergence trace needs T_max of at least 2".into()));
    }

    let split =
        SplitPlan { kind: SplitKind::RandomHalf, seed: mix_seed(&[seed, TAG_SPLIT, 0]) }
            .split(data)?;
    let cell_seed = mix_seed(&[seed, TAG_TRAIN, 0, 0, 0]);
    let prepared = prepare_cell(data, &split.train, &split.test, config, cell_seed)?;
    let kernels = if sampler.kind == SamplerKind::Bernoulli {
        vec![]
    } else {
        calibrate_kernels(&prepared.net, &prepared.calibration, sampler.effective_kernel_kind())?
    };
    let bank_seed = mix_seed(&[seed, TAG_BANK, 0, 0, 0, 0]);
    let bank = build_mask_bank(&prepared.net.spec, &kernels, sampler, t_max, bank_seed)?;
    let preds =
        run_inference(std::slice::from_ref(&prepared.net), &bank.masks, &prepared.test.features)?;
    let targets = regression_targets(&prepared.test)?;

    let points = (1..=t_max)
        .map(|t| prefix_mean_loglik(&preds, targets, t, config.var_floor).map(|ll| (t as f64, ll)))
        .collect::<Result<Vec<_>>>()?;
    CurvePoints::new("ll-vs-t", points)
}

/// OOD percentile-exceedance protocol: per (split, run) cell and sampler,
/// report the percentage of OOD points whose predictive variance exceeds
/// each α-percentile of the training-point variances. `repeats.folds` is
/// ignored (the OOD side never trains).
#[allow(clippy::too_many_arguments)]
pub fn run_ood_regression(
    data: &TabularDataset,
    samplers: &[SamplerConfig],
    t: usize,
    percentiles: &[f64],
    mode: OodMode,
    repeats: Repeats,
    config: &ProtocolConfig,
    seed: u64,
) -> Result<ExperimentReport> {
    let started = Instant::now();
    validate_experiment_inputs(data, samplers, config)?;
    repeats.validate()?;
    if data.task() != Task::Regression {
        return Err(Error::ConfigError("this protocol needs a regression dataset".into()));
    }
    if t == 0 {
        return Err(Error::ConfigError("need at least one stochastic pass".into()));
    }
    if percentiles.is_empty() || percentiles.iter().any(|&a| !(a > 0.0 && a < 100.0)) {
        return Err(Error::ConfigError(
            "percentiles must be non-empty and strictly inside (0, 100)".into(),
        ));
    }

    let splits: Vec<Split> = (0..repeats.splits)
        .map(|s| {
            let kind = match mode {
                OodMode::MedianSplit { feature } => SplitKind::OodMedian { feature },
                OodMode::InDistributionNull => SplitKind::RandomHalf,
            };
            SplitPlan { kind, seed: mix_seed(&[seed, TAG_SPLIT, s as u64]) }.split(data)
        })
        .collect::<Result<_>>()?;

    let mut cells = Vec::new();
    for s in 0..repeats.splits {
        for run in 0..repeats.runs {
            cells.push((s, run));
        }
    }

    let outcomes: Vec<(Vec<MetricRecord>, Vec<FailureRecord>)> = cells
        .par_iter()
        .map(|&(s, run)| ood_cell(data, &splits[s], s, run, samplers, t, percentiles, config, seed))
        .collect();

    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (recs, fails) in outcomes {
        records.extend(recs);
        failures.extend(fails);
    }
    let summaries = summarize_records(&records);

    Ok(ExperimentReport {
        name: format!("ood-regression/{}", data.name),
        config: serde_json::json!({
            "dataset": dataset_echo(data),
            "samplers": samplers,
            "t": t,
            "percentiles": percentiles,
            "mode": mode,
            "repeats": repeats,
            "protocol": config,
            "seed": seed,
        }),
        records,
        summaries,
        curves: vec![],
        failures,
        timings: vec![TimingRecord {
            label: "total".into(),
            seconds: started.elapsed().as_secs_f64(),
        }],
    })
}

#[allow(clippy::too_many_arguments)]
fn ood_cell(
    data: &TabularDataset,
    split: &Split,
    s: usize,
    run: usize,
    samplers: &[SamplerConfig],
    t: usize,
    percentiles: &[f64],
    config: &ProtocolConfig,
    seed: u64,
) -> (Vec<MetricRecord>, Vec<FailureRecord>) {
    let cell_seed = mix_seed(&[seed, TAG_TRAIN, s as u64, 0, run as u64]);
    let fail_all = |message: &str| -> (Vec<MetricRecord>, Vec<FailureRecord>) {
        (vec![], samplers.iter().map(|cfg| failure(s, 0, run, cfg, message)).collect())
    };

    let prepared = match prepare_cell(data, &split.train, &split.test, config, cell_seed) {
        Ok(p) => p,
        Err(e) => return fail_all(&e.to_string()),
    };
    let cache = kernel_cache(&prepared, samplers);

    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (si, cfg) in samplers.iter().enumerate() {
        let bank_seed = mix_seed(&[seed, TAG_BANK, s as u64, 0, run as u64, si as u64]);
        let nets = std::slice::from_ref(&prepared.net);
        let outcome = sampler_bank(&prepared, &cache, cfg, t, bank_seed).and_then(|bank| {
            let train_preds = run_inference(nets, &bank.masks, &prepared.train.features)
                .map_err(|e| e.to_string())?;
            let ood_preds = run_inference(nets, &bank.masks, &prepared.test.features)
                .map_err(|e| e.to_string())?;
            let train_vars = predictive_variances(&train_preds).map_err(|e| e.to_string())?;
            let ood_vars = predictive_variances(&ood_preds).map_err(|e| e.to_string())?;
            Ok((train_vars, ood_vars))
        });
        match outcome {
            Ok((train_vars, ood_vars)) => {
                for &alpha in percentiles {
                    records.push(MetricRecord {
                        sampler: cfg.kind.name().into(),
                        t,
                        split: s,
                        fold: 0,
                        run,
                        seed: cell_seed,
                        metric: exceedance_metric(alpha),
                        value: exceedance_percent(&train_vars, &ood_vars, alpha),
                    });
                }
            }
            Err(message) => failures.push(failure(s, 0, run, cfg, &message)),
        }
    }
    (records, failures)
}

/// Classification protocol: per repeat, split the in-domain data in half,
/// train on one half and score the other; report accuracy, the UE-accuracy
/// curve over the test half, and count-vs-uncertainty curves for both the
/// test half and the OOD features (standardized by the train statistics).
#[allow(clippy::too_many_arguments)]
pub fn run_classification_experiment(
    in_domain: &TabularDataset,
    ood: &TabularDataset,
    samplers: &[SamplerConfig],
    t: usize,
    measure: UncertaintyMeasure,
    repeats: usize,
    config: &ProtocolConfig,
    seed: u64,
) -> Result<ExperimentReport> {
    let started = Instant::now();
    validate_experiment_inputs(in_domain, samplers, config)?;
    ood.validate()?;
    if !matches!(in_domain.task(), Task::Classification { .. }) {
        return Err(Error::ConfigError("this protocol needs a classification dataset".into()));
    }
    if ood.dim() != in_domain.dim() {
        return Err(Error::ShapeError(format!(
            "OOD features have {} dims, in-domain {}",
            ood.dim(),
            in_domain.dim()
        )));
    }
    if t == 0 || repeats == 0 {
        return Err(Error::ConfigError("need at least one pass and one repeat".into()));
    }

    let outcomes: Vec<CellCurves> = (0..repeats)
        .into_par_iter()
        .map(|rep| classification_cell(in_domain, ood, samplers, t, measure, config, seed, rep))
        .collect();

    let mut records = Vec::new();
    let mut curves = Vec::new();
    let mut failures = Vec::new();
    for outcome in outcomes {
        records.extend(outcome.records);
        curves.extend(outcome.curves);
        failures.extend(outcome.failures);
    }
    let summaries = summarize_records(&records);

    Ok(ExperimentReport {
        name: format!("classification-uncertainty/{}", in_domain.name),
        config: serde_json::json!({
            "in-domain": dataset_echo(in_domain),
            "ood": dataset_echo(ood),
            "samplers": samplers,
            "t": t,
            "measure": measure,
            "repeats": repeats,
            "protocol": config,
            "seed": seed,
        }),
        records,
        summaries,
        curves,
        failures,
        timings: vec![TimingRecord {
            label: "total".into(),
            seconds: started.elapsed().as_secs_f64(),
        }],
    })
}

struct CellCurves {
    records: Vec<MetricRecord>,
    curves: Vec<LabeledCurve>,
    failures: Vec<FailureRecord>,
}

#[allow(clippy::too_many_arguments)]
fn classification_cell(
    in_domain: &TabularDataset,
    ood: &TabularDataset,
    samplers: &[SamplerConfig],
    t: usize,
    measure: UncertaintyMeasure,
    config: &ProtocolConfig,
    seed: u64,
    rep: usize,
) -> CellCurves {
    let cell_seed = mix_seed(&[seed, TAG_TRAIN, rep as u64, 0, 0]);
    let fail_all = |message: &str| CellCurves {
        records: vec![],
        curves: vec![],
        failures: samplers.iter().map(|cfg| failure(rep, 0, 0, cfg, message)).collect(),
    };

    let plan =
        SplitPlan { kind: SplitKind::RandomHalf, seed: mix_seed(&[seed, TAG_SPLIT, rep as u64]) };
    let split = match plan.split(in_domain) {
        Ok(s) => s,
        Err(e) => return fail_all(&e.to_string()),
    };
    let prepared = match prepare_cell(in_domain, &split.train, &split.test, config, cell_seed) {
        Ok(p) => p,
        Err(e) => return fail_all(&e.to_string()),
    };
    let ood_features = match prepared.standardizer.apply_features(&ood.features) {
        Ok(rows) => rows,
        Err(e) => return fail_all(&e.to_string()),
    };
    let labels = match &prepared.test.targets {
        Targets::Classes { labels, .. } => labels.clone(),
        Targets::Regression(_) => return fail_all("expected a classification dataset"),
    };
    let cache = kernel_cache(&prepared, samplers);

    let mut out = CellCurves { records: vec![], curves: vec![], failures: vec![] };
    for (si, cfg) in samplers.iter().enumerate() {
        let bank_seed = mix_seed(&[seed, TAG_BANK, rep as u64, 0, 0, si as u64]);
        let nets = std::slice::from_ref(&prepared.net);
        let outcome = sampler_bank(&prepared, &cache, cfg, t, bank_seed).and_then(|bank| {
            let test_preds = run_inference(nets, &bank.masks, &prepared.test.features)
                .map_err(|e| e.to_string())?;
            let ood_preds =
                run_inference(nets, &bank.masks, &ood_features).map_err(|e| e.to_string())?;
            cell_curves_for(cfg, &test_preds, &ood_preds, &labels, measure, config, rep, cell_seed, t)
                .map_err(|e| e.to_string())
        });
        match outcome {
            Ok(mut piece) => {
                out.records.append(&mut piece.records);
                out.curves.append(&mut piece.curves);
            }
            Err(message) => out.failures.push(failure(rep, 0, 0, cfg, &message)),
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn cell_curves_for(
    cfg: &SamplerConfig,
    test_preds: &[EnsemblePrediction],
    ood_preds: &[EnsemblePrediction],
    labels: &[usize],
    measure: UncertaintyMeasure,
    config: &ProtocolConfig,
    rep: usize,
    cell_seed: u64,
    t: usize,
) -> Result<CellCurves> {
    let test_scores: Vec<UncertaintyScore> =
        test_preds.iter().map(|p| measure.score(p)).collect::<Result<_>>()?;
    let ood_scores: Vec<UncertaintyScore> =
        ood_preds.iter().map(|p| measure.score(p)).collect::<Result<_>>()?;
    let correct: Vec<bool> = test_preds
        .iter()
        .zip(labels)
        .map(|(p, &l)| mean_probs(p).map(|probs| argmax(&probs) == l))
        .collect::<Result<_>>()?;
    let accuracy = correct.iter().filter(|&&c| c).count() as f64 / correct.len() as f64;

    let name = cfg.kind.name();
    let curves = vec![
        LabeledCurve {
            label: format!("{name}/rep{rep}/ue-accuracy"),
            curve: ue_accuracy_curve(&test_scores, &correct)?,
        },
        LabeledCurve {
            label: format!("{name}/rep{rep}/count-test"),
            curve: count_vs_uncertainty_curve(&test_scores, config.curve_grid)?,
        },
        LabeledCurve {
            label: format!("{name}/rep{rep}/count-ood"),
            curve: count_vs_uncertainty_curve(&ood_scores, config.curve_grid)?,
        },
    ];
    let records = vec![MetricRecord {
        sampler: name.into(),
        t,
        split: rep,
        fold: 0,
        run: 0,
        seed: cell_seed,
        metric: METRIC_TEST_ACCURACY.into(),
        value: accuracy,
    }];
    Ok(CellCurves { records, curves, failures: vec![] })
}
