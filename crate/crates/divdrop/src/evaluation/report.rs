//! Experiment artifacts: provenance-carrying metric records, distributional
//! summaries, labeled curves, and the JSON/CSV report files.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::percentile;

/// One measured value with full provenance: which sampler, how many passes,
/// which split/fold/run cell, and the cell seed it was computed under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct MetricRecord {
    pub sampler: String,
    pub t: usize,
    pub split: usize,
    pub fold: usize,
    pub run: usize,
    pub seed: u64,
    pub metric: String,
    pub value: f64,
}

/// A cell that errored; the experiment continues and reports it here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct FailureRecord {
    pub split: usize,
    pub fold: usize,
    pub run: usize,
    pub sampler: String,
    pub message: String,
}

/// Distribution of one metric over all cells of a (sampler, T) pair: mean,
/// sample std, standard error and quartiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct SummaryRecord {
    pub sampler: String,
    pub t: usize,
    pub metric: String,
    pub count: usize,
    pub mean: f64,
    pub std: f64,
    pub stderr: f64,
    pub p25: f64,
    pub p50: f64,
    pub p75: f64,
}

/// An ordered curve with an axis-semantics tag ("ll-vs-t", "ue-accuracy",
/// "count-vs-uncertainty").
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct CurvePoints {
    pub kind: String,
    pub points: Vec<(f64, f64)>,
}

impl CurvePoints {
    pub fn new(kind: impl Into<String>, points: Vec<(f64, f64)>) -> Result<Self> {
        let curve = CurvePoints { kind: kind.into(), points };
        curve.validate()?;
        Ok(curve)
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.is_empty() {
            return Err(Error::ShapeError(format!("curve '{}' is empty", self.kind)));
        }
        for w in self.points.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(Error::ShapeError(format!(
                    "curve '{}' x-axis is not strictly increasing at x={}",
                    self.kind, w[1].0
                )));
            }
        }
        if self.points.iter().any(|&(x, y)| !x.is_finite() || !y.is_finite()) {
            return Err(Error::ShapeError(format!("curve '{}' has non-finite points", self.kind)));
        }
        Ok(())
    }
}

/// A curve tagged with its origin, e.g. `dpp/seed3/ue-accuracy`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct LabeledCurve {
    pub label: String,
    pub curve: CurvePoints,
}

/// Wall-clock timing of one phase. Kept out of the serialized report so that
/// report files are byte-identical across runs of the same (config, seed);
/// the CLI prints timings to stderr instead.
#[derive(Debug, Clone, PartialEq)]
pub struct TimingRecord {
    pub label: String,
    pub seconds: f64,
}

/// Everything one experiment produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct ExperimentReport {
    pub name: String,
    /// Echo of the exact configuration the experiment ran under.
    pub config: serde_json::Value,
    pub records: Vec<MetricRecord>,
    pub summaries: Vec<SummaryRecord>,
    pub curves: Vec<LabeledCurve>,
    #[serde(default)]
    pub failures: Vec<FailureRecord>,
    #[serde(skip)]
    pub timings: Vec<TimingRecord>,
}

impl ExperimentReport {
    /// Serialize to pretty JSON. Map keys and field order are fixed, so the
    /// bytes are a pure function of the content.
    pub fn to_json_bytes(&self) -> Result<Vec<u8>> {
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        Ok(bytes)
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json_bytes()?)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        let report: ExperimentReport = serde_json::from_slice(&bytes)?;
        Ok(report)
    }

    /// Flat CSV of the records for external plotting.
    pub fn save_records_csv(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "sampler,t,split,fold,run,seed,metric,value")?;
        for r in &self.records {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.sampler, r.t, r.split, r.fold, r.run, r.seed, r.metric, r.value
            )?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Group records by (metric, sampler, t) and summarize each group's value
/// distribution. Groups come out sorted by that key.
pub fn summarize_records(records: &[MetricRecord]) -> Vec<SummaryRecord> {
    let mut sorted: Vec<&MetricRecord> = records.iter().collect();
    sorted.sort_by(|a, b| {
        (&a.metric, &a.sampler, a.t).cmp(&(&b.metric, &b.sampler, b.t))
    });
    let mut summaries = Vec::new();
    let mut i = 0;
    while i < sorted.len() {
        let key = (&sorted[i].metric, &sorted[i].sampler, sorted[i].t);
        let mut j = i;
        while j < sorted.len() && (&sorted[j].metric, &sorted[j].sampler, sorted[j].t) == key {
            j += 1;
        }
        let values: Vec<f64> = sorted[i..j].iter().map(|r| r.value).collect();
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        summaries.push(SummaryRecord {
            sampler: sorted[i].sampler.clone(),
            t: sorted[i].t,
            metric: sorted[i].metric.clone(),
            count: n,
            mean,
            std,
            stderr: std / (n as f64).sqrt(),
            p25: percentile(&values, 25.0),
            p50: percentile(&values, 50.0),
            p75: percentile(&values, 75.0),
        });
        i = j;
    }
    summaries
}
