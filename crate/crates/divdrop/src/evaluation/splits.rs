//! Train/test partitions: random halves and median-feature OOD splits.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::dataset::TabularDataset;
use crate::evaluation::percentile;
use crate::numerics::RngStream;

/// RNG stream id for split shuffling and orientation draws.
const STREAM_SPLIT_PLAN: u64 = 6;

/// How to partition the rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitKind {
    /// Disjoint random 50/50 train/test partition.
    RandomHalf,
    /// Points at or below the median of the chosen feature on one side,
    /// points above it on the other; which side trains is decided by the
    /// seed. The far side acts as out-of-distribution data.
    OodMedian { feature: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct SplitPlan {
    pub kind: SplitKind,
    pub seed: u64,
}

/// Row indices of one train/test partition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitPlan {
    pub fn split(&self, data: &TabularDataset) -> Result<Split> {
        data.validate()?;
        let n = data.len();
        let mut rng = RngStream::new(self.seed, STREAM_SPLIT_PLAN);
        match self.kind {
            SplitKind::RandomHalf => {
                let mut idx: Vec<usize> = (0..n).collect();
                rng.shuffle(&mut idx);
                let test = idx.split_off(n / 2);
                Ok(Split { train: idx, test })
            }
            SplitKind::OodMedian { feature } => {
                if feature >= data.dim() {
                    return Err(Error::ConfigError(format!(
                        "median-split feature {feature} out of range for d={}",
                        data.dim()
                    )));
                }
                let column: Vec<f64> = data.features.iter().map(|row| row[feature]).collect();
                let median = percentile(&column, 50.0);
                let (mut low, mut high) = (Vec::new(), Vec::new());
                for (i, &v) in column.iter().enumerate() {
                    if v <= median {
                        low.push(i);
                    } else {
                        high.push(i);
                    }
                }
                if low.is_empty() || high.is_empty() {
                    return Err(Error::DegenerateData(format!(
                        "feature {feature} does not separate at its median"
                    )));
                }
                // randomize which side of the median is in-distribution
                let (train, test) = if rng.next_bool(0.5) { (low, high) } else { (high, low) };
                Ok(Split { train, test })
            }
        }
    }
}
