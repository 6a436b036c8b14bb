//! The run-config document: a single JSON file drives every subcommand.
//!
//! Five blocks: `task` (what data), `model` (network + trainer), `samplers`
//! (which mask distributions), `evaluation` (protocol knobs) and `io`
//! (output directory and seed defaults). Unknown keys are rejected anywhere
//! in the document, and parse errors carry the offending field path.

use std::path::{Path, PathBuf};

use divdrop::evaluation::{
    load_csv, make_synthetic, mix_seed, DatasetSchema, ModelConfig, OodMode, ProtocolConfig,
    Repeats, SyntheticKind, TabularDataset, UncertaintyMeasure, DEFAULT_OOD_PERCENTILES,
};
use divdrop::network::{Task, TrainConfig};
use divdrop::samplers::{SamplerConfig, SamplerKind};
use divdrop::{Error, Result};
use serde::{Deserialize, Serialize};

/// Seed tag for synthetic OOD pools, so they never coincide with a primary
/// pool generated from the same block settings.
const OOD_POOL_TAG: u64 = 0xD1FF;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct RunConfig {
    pub task: TaskBlock,
    #[serde(default)]
    pub model: ModelBlock,
    #[serde(default = "default_samplers")]
    pub samplers: Vec<SamplerConfig>,
    #[serde(default)]
    pub evaluation: EvaluationBlock,
    #[serde(default)]
    pub io: IoBlock,
}

fn default_samplers() -> Vec<SamplerConfig> {
    [SamplerKind::Bernoulli, SamplerKind::Leverage, SamplerKind::Dpp, SamplerKind::Kdpp]
        .into_iter()
        .map(|kind| SamplerConfig::new(kind, 0.5))
        .collect()
}

impl RunConfig {
    /// Parse and validate a config file.
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::ConfigError(format!("cannot read config {}: {e}", path.display()))
        })?;
        let mut de = serde_json::Deserializer::from_str(&text);
        let config: RunConfig = serde_path_to_error::deserialize(&mut de)
            .map_err(|e| Error::ConfigError(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    /// Cheap structural validation; anything that needs the data itself is
    /// checked by the experiment drivers.
    pub fn validate(&self) -> Result<()> {
        self.task.validate()?;
        self.model.protocol().validate()?;
        if self.samplers.is_empty() {
            return Err(Error::ConfigError("at least one sampler is required".into()));
        }
        for sampler in &self.samplers {
            sampler.validate()?;
        }
        self.evaluation.validate()
    }
}

/// What data the run uses: a CSV file or a built-in generator (exactly one),
/// plus an optional second pool served as out-of-distribution inputs to
/// classification experiments.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct TaskBlock {
    pub dataset: Option<CsvSpec>,
    pub synthetic: Option<SyntheticSpec>,
    pub ood: Option<PoolSpec>,
}

/// A single data pool: CSV file or generator, exactly one.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct PoolSpec {
    pub dataset: Option<CsvSpec>,
    pub synthetic: Option<SyntheticSpec>,
}

fn load_pool(
    dataset: &Option<CsvSpec>,
    synthetic: &Option<SyntheticSpec>,
    seed: u64,
    what: &str,
) -> Result<TabularDataset> {
    match (dataset, synthetic) {
        (Some(csv), None) => csv.load(),
        (None, Some(spec)) => spec.generate(seed),
        _ => Err(Error::ConfigError(format!(
            "{what} must set exactly one of `dataset` or `synthetic`"
        ))),
    }
}

fn validate_pool(
    dataset: &Option<CsvSpec>,
    synthetic: &Option<SyntheticSpec>,
    what: &str,
) -> Result<()> {
    if dataset.is_some() == synthetic.is_some() {
        return Err(Error::ConfigError(format!(
            "{what} must set exactly one of `dataset` or `synthetic`"
        )));
    }
    if let Some(spec) = synthetic {
        spec.validate()?;
    }
    Ok(())
}

impl TaskBlock {
    pub fn validate(&self) -> Result<()> {
        validate_pool(&self.dataset, &self.synthetic, "task")?;
        if let Some(ood) = &self.ood {
            validate_pool(&ood.dataset, &ood.synthetic, "task.ood")?;
        }
        Ok(())
    }

    /// The primary dataset; synthetic data is generated from the master seed.
    pub fn load_primary(&self, seed: u64) -> Result<TabularDataset> {
        load_pool(&self.dataset, &self.synthetic, seed, "task")
    }

    /// The OOD pool, when configured; synthetic pools use a tagged seed.
    pub fn load_ood(&self, seed: u64) -> Result<Option<TabularDataset>> {
        match &self.ood {
            None => Ok(None),
            Some(pool) => {
                load_pool(&pool.dataset, &pool.synthetic, mix_seed(&[seed, OOD_POOL_TAG]), "task.ood")
                    .map(Some)
            }
        }
    }
}

/// A CSV dataset: header row, one numeric target column, the rest features.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct CsvSpec {
    pub path: PathBuf,
    /// Dataset name used in reports; defaults to the file stem.
    pub name: Option<String>,
    /// Header of the target column.
    pub target: String,
    pub task: Task,
}

impl CsvSpec {
    fn load(&self) -> Result<TabularDataset> {
        if !self.path.is_file() {
            return Err(Error::ConfigError(format!(
                "dataset file {} does not exist",
                self.path.display()
            )));
        }
        let name = self.name.clone().unwrap_or_else(|| {
            self.path.file_stem().and_then(|s| s.to_str()).unwrap_or("dataset").to_string()
        });
        let schema = DatasetSchema { name, target: self.target.clone(), task: self.task };
        load_csv(&self.path, &schema)
    }
}

/// A built-in generator: `sine-regression` (y = sin(2x₁) + 0.5·x₂ + noise·ε)
/// or `gaussian-blobs` (class means on a radius-4 circle).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct SyntheticSpec {
    pub kind: SyntheticKind,
    /// Rows to generate; at least 16.
    pub n: usize,
    /// Noise scale; for blobs, the per-coordinate standard deviation.
    #[serde(default = "default_noise")]
    pub noise: f64,
}

fn default_noise() -> f64 {
    0.1
}

impl SyntheticSpec {
    fn validate(&self) -> Result<()> {
        if self.n < 16 {
            return Err(Error::ConfigError("synthetic datasets need n ≥ 16 rows".into()));
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return Err(Error::ConfigError("synthetic noise must be finite and non-negative".into()));
        }
        if let SyntheticKind::GaussianBlobs { classes } = self.kind {
            if classes < 2 {
                return Err(Error::ConfigError("gaussian blobs need at least 2 classes".into()));
            }
        }
        Ok(())
    }

    fn generate(&self, seed: u64) -> Result<TabularDataset> {
        self.validate()?;
        Ok(make_synthetic(self.kind, self.n, self.noise, seed))
    }
}

/// Network architecture plus trainer. The training loss is chosen by the
/// task and the training seed by the resolved master seed, so config values
/// for `train.loss` and `train.seed` are ignored.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
pub struct ModelBlock {
    pub network: ModelConfig,
    pub train: TrainConfig,
    pub var_floor: f64,
    pub curve_grid: usize,
}

impl Default for ModelBlock {
    fn default() -> Self {
        let p = ProtocolConfig::default();
        ModelBlock { network: p.model, train: p.train, var_floor: p.var_floor, curve_grid: p.curve_grid }
    }
}

impl ModelBlock {
    pub fn protocol(&self) -> ProtocolConfig {
        ProtocolConfig {
            model: self.network.clone(),
            train: self.train.clone(),
            var_floor: self.var_floor,
            curve_grid: self.curve_grid,
        }
    }
}

/// Protocol knobs shared by `experiment`, `convergence` and `ood`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
pub struct EvaluationBlock {
    /// Stochastic pass counts. Regression experiments report every entry;
    /// single-T protocols (classification, OOD) use the largest entry, and
    /// `convergence` traces T = 1..max.
    pub t_list: Vec<usize>,
    pub repeats: Repeats,
    /// In-domain variance percentiles checked by `ood`.
    pub percentiles: Vec<f64>,
    /// Uncertainty score for classification tasks.
    pub measure: UncertaintyMeasure,
    /// How `ood` builds its out-of-distribution side.
    pub ood_split: OodMode,
}

impl Default for EvaluationBlock {
    fn default() -> Self {
        EvaluationBlock {
            t_list: vec![10, 30, 100],
            repeats: Repeats::default(),
            percentiles: DEFAULT_OOD_PERCENTILES.to_vec(),
            measure: UncertaintyMeasure::default(),
            ood_split: OodMode::MedianSplit { feature: 0 },
        }
    }
}

impl EvaluationBlock {
    fn validate(&self) -> Result<()> {
        if self.t_list.is_empty() || self.t_list.contains(&0) {
            return Err(Error::ConfigError(
                "evaluation.t-list must be non-empty with positive entries".into(),
            ));
        }
        self.repeats.validate()?;
        if self.percentiles.is_empty()
            || self.percentiles.iter().any(|&a| !(a > 0.0 && a < 100.0))
        {
            return Err(Error::ConfigError(
                "evaluation.percentiles must lie strictly between 0 and 100".into(),
            ));
        }
        Ok(())
    }

    /// Largest configured pass count.
    pub fn t_max(&self) -> usize {
        self.t_list.iter().copied().max().unwrap_or(1)
    }
}

/// Output and seeding defaults; the `--out` and `--seed` flags take
/// precedence over these.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
pub struct IoBlock {
    pub out_dir: Option<PathBuf>,
    pub seed: Option<u64>,
}
