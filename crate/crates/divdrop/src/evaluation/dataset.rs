//! Tabular datasets: CSV ingestion, synthetic generators and train-statistics
//! standardization.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::Task;
use crate::numerics::RngStream;

/// RNG stream id for synthetic data generation.
const STREAM_SYNTH: u64 = 5;

/// Labels or regression targets for the rows of a dataset.
#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Regression(Vec<f64>),
    Classes { labels: Vec<usize>, classes: usize },
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Regression(y) => y.len(),
            Targets::Classes { labels, .. } => labels.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn subset(&self, idx: &[usize]) -> Targets {
        match self {
            Targets::Regression(y) => Targets::Regression(idx.iter().map(|&i| y[i]).collect()),
            Targets::Classes { labels, classes } => Targets::Classes {
                labels: idx.iter().map(|&i| labels[i]).collect(),
                classes: *classes,
            },
        }
    }

    pub fn task(&self) -> Task {
        match self {
            Targets::Regression(_) => Task::Regression,
            Targets::Classes { classes, .. } => Task::Classification { classes: *classes },
        }
    }
}

/// A feature matrix with targets. Features are raw until a [`Standardizer`]
/// fitted on a training split is applied.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularDataset {
    pub name: String,
    /// n rows × d columns.
    pub features: Vec<Vec<f64>>,
    pub targets: Targets,
}

impl TabularDataset {
    pub fn new(name: impl Into<String>, features: Vec<Vec<f64>>, targets: Targets) -> Result<Self> {
        let data = TabularDataset { name: name.into(), features, targets };
        data.validate()?;
        Ok(data)
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        if self.len() < 4 {
            return Err(Error::ShapeError(format!(
                "dataset '{}' has {} rows; need at least 4",
                self.name,
                self.len()
            )));
        }
        if self.targets.len() != self.len() {
            return Err(Error::ShapeError("feature/target row counts differ".into()));
        }
        let d = self.dim();
        if d == 0 {
            return Err(Error::ShapeError("dataset has no feature columns".into()));
        }
        for row in &self.features {
            if row.len() != d {
                return Err(Error::ShapeError("ragged feature rows".into()));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidMatrix);
            }
        }
        match &self.targets {
            Targets::Regression(y) => {
                if y.iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidMatrix);
                }
            }
            Targets::Classes { labels, classes } => {
                if *classes < 2 {
                    return Err(Error::ShapeError("need at least 2 classes".into()));
                }
                if let Some(&bad) = labels.iter().find(|&&l| l >= *classes) {
                    return Err(Error::ShapeError(format!(
                        "label {bad} out of range for {classes} classes"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Rows at `idx`, in order (duplicates allowed).
    pub fn subset(&self, idx: &[usize]) -> TabularDataset {
        TabularDataset {
            name: self.name.clone(),
            features: idx.iter().map(|&i| self.features[i].clone()).collect(),
            targets: self.targets.subset(idx),
        }
    }

    pub fn task(&self) -> Task {
        self.targets.task()
    }
}

/// Maps a CSV file to a dataset: which column is the target and what task the
/// targets encode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct DatasetSchema {
    pub name: String,
    /// Header name of the target column; all other columns are features.
    pub target: String,
    pub task: Task,
}

fn parse_cell(raw: &str, path: &Path, row: usize, col: &str) -> Result<f64> {
    let v: f64 = raw.trim().parse().map_err(|_| Error::IngestError {
        location: format!("{}:{row}:{col}", path.display()),
        message: format!("cell '{raw}' is not numeric"),
    })?;
    if !v.is_finite() {
        return Err(Error::IngestError {
            location: format!("{}:{row}:{col}", path.display()),
            message: format!("cell '{raw}' is not finite"),
        });
    }
    Ok(v)
}

/// Load a header-ed CSV. Rows are numbered from 1 at the first data row in
/// error locations.
pub fn load_csv(path: &Path, schema: &DatasetSchema) -> Result<TabularDataset> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let target_col = headers.iter().position(|h| h == &schema.target).ok_or_else(|| {
        Error::IngestError {
            location: path.display().to_string(),
            message: format!("no column named '{}' in the header", schema.target),
        }
    })?;

    let mut features = Vec::new();
    let mut raw_targets = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let row = i + 1;
        if record.len() != headers.len() {
            return Err(Error::IngestError {
                location: format!("{}:{row}", path.display()),
                message: format!("expected {} fields, found {}", headers.len(), record.len()),
            });
        }
        let mut x = Vec::with_capacity(headers.len() - 1);
        for (j, raw) in record.iter().enumerate() {
            let v = parse_cell(raw, path, row, &headers[j])?;
            if j == target_col {
                raw_targets.push(v);
            } else {
                x.push(v);
            }
        }
        features.push(x);
    }

    let targets = match schema.task {
        Task::Regression => Targets::Regression(raw_targets),
        Task::Classification { classes } => {
            let mut labels = Vec::with_capacity(raw_targets.len());
            for (i, &v) in raw_targets.iter().enumerate() {
                if v.fract() != 0.0 || v < 0.0 || v >= classes as f64 {
                    return Err(Error::IngestError {
                        location: format!("{}:{}:{}", path.display(), i + 1, schema.target),
                        message: format!("label {v} is not an integer in 0..{classes}"),
                    });
                }
                labels.push(v as usize);
            }
            Targets::Classes { labels, classes }
        }
    };
    TabularDataset::new(schema.name.clone(), features, targets)
}

/// Write a dataset as CSV with feature columns `x1..xd` and a final `target`
/// column. `f64` formatting round-trips exactly, so load-after-save is lossless.
pub fn save_csv(data: &TabularDataset, path: &Path) -> Result<()> {
    let mut writer = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    let mut header: Vec<String> = (1..=data.dim()).map(|j| format!("x{j}")).collect();
    header.push("target".into());
    writer.write_record(&header)?;
    for (i, row) in data.features.iter().enumerate() {
        let mut record: Vec<String> = row.iter().map(f64::to_string).collect();
        record.push(match &data.targets {
            Targets::Regression(y) => y[i].to_string(),
            Targets::Classes { labels, .. } => labels[i].to_string(),
        });
        writer.write_record(&record)?;
    }
    writer.flush().map_err(Error::from)?;
    Ok(())
}

/// The schema produced by [`save_csv`], for loading such a file back.
pub fn saved_schema(name: impl Into<String>, task: Task) -> DatasetSchema {
    DatasetSchema { name: name.into(), target: "target".into(), task }
}

/// Built-in dataset generators used when no CSV files are supplied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SyntheticKind {
    /// `y = sin(2x₁) + 0.5x₂ + noise·ε` with standard-normal inputs (d = 2).
    SineRegression,
    /// Isotropic Gaussian clusters with means on a radius-4 circle and the
    /// given per-coordinate standard deviation (`noise`); labels round-robin.
    GaussianBlobs { classes: usize },
}

/// Deterministic synthetic dataset of `n ≥ 16` rows for the given seed.
pub fn make_synthetic(kind: SyntheticKind, n: usize, noise: f64, seed: u64) -> TabularDataset {
    assert!(n >= 16, "synthetic datasets need at least 16 rows");
    assert!(noise >= 0.0 && noise.is_finite(), "noise must be a finite non-negative level");
    let mut rng = RngStream::new(seed, STREAM_SYNTH);
    match kind {
        SyntheticKind::SineRegression => {
            let mut features = Vec::with_capacity(n);
            let mut y = Vec::with_capacity(n);
            for _ in 0..n {
                let x1 = rng.next_normal();
                let x2 = rng.next_normal();
                y.push((2.0 * x1).sin() + 0.5 * x2 + noise * rng.next_normal());
                features.push(vec![x1, x2]);
            }
            TabularDataset { name: "sine-regression".into(), features, targets: Targets::Regression(y) }
        }
        SyntheticKind::GaussianBlobs { classes } => {
            assert!(classes >= 2, "blobs need at least 2 classes");
            let mut features = Vec::with_capacity(n);
            let mut labels = Vec::with_capacity(n);
            for i in 0..n {
                let c = i % classes;
                let angle = 2.0 * std::f64::consts::PI * c as f64 / classes as f64;
                features.push(vec![
                    4.0 * angle.cos() + noise * rng.next_normal(),
                    4.0 * angle.sin() + noise * rng.next_normal(),
                ]);
                labels.push(c);
            }
            TabularDataset {
                name: "gaussian-blobs".into(),
                features,
                targets: Targets::Classes { labels, classes },
            }
        }
    }
}

/// Per-feature (and, for regression, target) affine normalization fitted on a
/// training split only. Uses the population divisor `n`, so re-standardizing
/// the training split itself gives exact zero mean and unit std.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub feature_mean: Vec<f64>,
    pub feature_std: Vec<f64>,
    pub target_mean: f64,
    pub target_std: f64,
}

fn mean_std(values: impl Iterator<Item = f64> + Clone, n: usize) -> (f64, f64) {
    let mean = values.clone().sum::<f64>() / n as f64;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    (mean, var.sqrt())
}

impl Standardizer {
    /// Fit on a training split. A constant feature (or constant regression
    /// target) has no scale and is refused.
    pub fn fit(train: &TabularDataset) -> Result<Self> {
        train.validate()?;
        let n = train.len();
        let d = train.dim();
        let mut feature_mean = Vec::with_capacity(d);
        let mut feature_std = Vec::with_capacity(d);
        for j in 0..d {
            let (m, s) = mean_std(train.features.iter().map(move |row| row[j]), n);
            if s <= 0.0 {
                return Err(Error::DegenerateData(format!(
                    "feature {j} is constant on the training split"
                )));
            }
            feature_mean.push(m);
            feature_std.push(s);
        }
        let (target_mean, target_std) = match &train.targets {
            Targets::Regression(y) => {
                let (m, s) = mean_std(y.iter().copied(), n);
                if s <= 0.0 {
                    return Err(Error::DegenerateData(
                        "regression target is constant on the training split".into(),
                    ));
                }
                (m, s)
            }
            // class labels pass through untouched
            Targets::Classes { .. } => (0.0, 1.0),
        };
        Ok(Standardizer { feature_mean, feature_std, target_mean, target_std })
    }

    /// Standardize bare feature rows with the fitted statistics.
    pub fn apply_features(&self, rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        rows.iter()
            .map(|row| {
                if row.len() != self.feature_mean.len() {
                    return Err(Error::ShapeError("standardizer dimension mismatch".into()));
                }
                Ok(row
                    .iter()
                    .enumerate()
                    .map(|(j, &v)| (v - self.feature_mean[j]) / self.feature_std[j])
                    .collect())
            })
            .collect()
    }

    /// Standardize any split with the fitted statistics.
    pub fn apply(&self, data: &TabularDataset) -> Result<TabularDataset> {
        let features = self.apply_features(&data.features)?;
        let targets = match &data.targets {
            Targets::Regression(y) => Targets::Regression(
                y.iter().map(|&v| (v - self.target_mean) / self.target_std).collect(),
            ),
            classes => classes.clone(),
        };
        Ok(TabularDataset { name: data.name.clone(), features, targets })
    }
}
