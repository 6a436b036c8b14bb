//! Datasets, splits, OOD construction and the experiment protocols:
//! log-likelihood sweeps over samplers and pass counts, OOD
//! percentile-exceedance tables, UE-accuracy curves, count-vs-uncertainty
//! curves and log-likelihood convergence traces.

mod curves;
mod dataset;
mod experiments;
mod report;
mod splits;

pub use curves::{count_vs_uncertainty_curve, ue_accuracy_curve};
pub use dataset::{
    load_csv, make_synthetic, save_csv, saved_schema, DatasetSchema, Standardizer,
    SyntheticKind, TabularDataset, Targets,
};
pub use experiments::{
    calibrate_kernels, exceedance_metric, run_classification_experiment,
    run_convergence_trace, run_ood_regression, run_regression_experiment, ModelConfig,
    OodMode, ProtocolConfig, Repeats, UncertaintyMeasure, DEFAULT_OOD_PERCENTILES,
    METRIC_TEST_ACCURACY, METRIC_TEST_LL,
};
pub use report::{
    summarize_records, CurvePoints, ExperimentReport, FailureRecord, LabeledCurve,
    MetricRecord, SummaryRecord, TimingRecord,
};
pub use splits::{Split, SplitKind, SplitPlan};

/// α-percentile (α in [0, 100]) with linear interpolation between order
/// statistics: the value at fractional rank `α/100 · (n − 1)`.
pub fn percentile(values: &[f64], alpha: f64) -> f64 {
    assert!(!values.is_empty(), "percentile of an empty sample");
    assert!((0.0..=100.0).contains(&alpha), "percentile level out of range");
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let rank = alpha / 100.0 * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

/// Derive an independent seed from a path of context labels (experiment seed,
/// protocol tag, split, fold, run, …) with a splitmix64 chain. Distinct paths
/// give unrelated streams without any collision bookkeeping.
pub fn mix_seed(parts: &[u64]) -> u64 {
    fn splitmix(mut z: u64) -> u64 {
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    let mut x: u64 = 0x243F_6A88_85A3_08D3; // π fraction, an arbitrary non-zero start
    for &p in parts {
        x = splitmix(x.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(p));
    }
    x
}
