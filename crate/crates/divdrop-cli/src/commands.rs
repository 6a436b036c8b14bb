//! Subcommand implementations: artifact plumbing around the library.
//!
//! Every command resolves its inputs from the config plus the shared output
//! directory, writes data to files (or standard output) and keeps all
//! diagnostics on standard error. Artifact names are fixed so the pipeline
//! chains with nothing but `--out`:
//!
//! ```text
//! train  → weights.json, standardizer.json, train-log.json
//! kernel → kernel-{correlation,covariance}-layer{h}.csv
//! masks  → mask-bank-{sampler}.json
//! infer  → predictions-{sampler}.csv
//! experiment / convergence / ood → report.json / convergence.json / ood-report.json
//! ```

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use divdrop::evaluation::{
    calibrate_kernels, mix_seed, run_classification_experiment, run_convergence_trace,
    run_ood_regression, run_regression_experiment, ExperimentReport, LabeledCurve, Standardizer,
    TabularDataset, Targets,
};
use divdrop::kernels::{KernelKind, NeuronKernel};
use divdrop::network::{
    batch_loss, train, Loss, NetworkWeights, Task, TrainTargets, TrainingSet,
};
use divdrop::samplers::{build_mask_bank, MaskBank, SamplerConfig};
use divdrop::uncertainty::{mean_probs, mean_variance, run_inference};
use divdrop::Error;

use crate::config::RunConfig;

pub const WEIGHTS_FILE: &str = "weights.json";
pub const STANDARDIZER_FILE: &str = "standardizer.json";
pub const TRAIN_LOG_FILE: &str = "train-log.json";
pub const REPORT_FILE: &str = "report.json";
pub const CONVERGENCE_FILE: &str = "convergence.json";
pub const OOD_REPORT_FILE: &str = "ood-report.json";

/// Process-level error carrying the documented exit code.
#[derive(Debug)]
pub enum CliError {
    /// Exit 2: invalid flags, unreadable or invalid config, bad data reference.
    Config(String),
    /// Exit 3: training diverged.
    Diverged(String),
    /// Exit 4: a required upstream artifact file is missing.
    MissingArtifact(PathBuf),
    /// Exit 1: everything else.
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Diverged(_) => 3,
            CliError::MissingArtifact(_) => 4,
            CliError::Runtime(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) | CliError::Diverged(m) | CliError::Runtime(m) => write!(f, "{m}"),
            CliError::MissingArtifact(p) => write!(
                f,
                "missing artifact {} (run the upstream command first)",
                p.display()
            ),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> CliError {
        match &e {
            Error::ConfigError(_) | Error::IngestError { .. } => CliError::Config(e.to_string()),
            Error::DivergedTraining(_) => CliError::Diverged(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

/// Resolved invocation: parsed config, master seed and output directory.
pub struct Ctx {
    pub config: RunConfig,
    pub seed: u64,
    pub out: PathBuf,
}

impl Ctx {
    pub fn prepare(
        config_path: &Path,
        seed_flag: Option<u64>,
        jobs: Option<usize>,
        out_flag: Option<PathBuf>,
    ) -> Result<Ctx, CliError> {
        let config = RunConfig::load(config_path)?;
        let env_seed = std::env::var("DIVDROP_SEED").ok();
        let seed = resolve_seed(seed_flag, config.io.seed, env_seed.as_deref())?;
        let out = out_flag
            .or_else(|| config.io.out_dir.clone())
            .unwrap_or_else(|| PathBuf::from("out"));
        fs::create_dir_all(&out)
            .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", out.display())))?;
        if let Some(jobs) = jobs {
            if jobs == 0 {
                return Err(CliError::Config("--jobs must be at least 1".into()));
            }
            rayon::ThreadPoolBuilder::new()
                .num_threads(jobs)
                .build_global()
                .map_err(|e| CliError::Runtime(format!("worker pool: {e}")))?;
        }
        Ok(Ctx { config, seed, out })
    }
}

/// Seed precedence: `--seed` flag, then `io.seed` in the config, then the
/// DIVDROP_SEED environment variable, then 0.
fn resolve_seed(
    flag: Option<u64>,
    config: Option<u64>,
    env: Option<&str>,
) -> Result<u64, CliError> {
    if let Some(s) = flag {
        return Ok(s);
    }
    if let Some(s) = config {
        return Ok(s);
    }
    match env {
        None => Ok(0),
        Some(raw) => raw.trim().parse::<u64>().map_err(|_| {
            CliError::Config(format!("DIVDROP_SEED must be an unsigned integer, got {raw:?}"))
        }),
    }
}

fn require_artifact(path: &Path) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::MissingArtifact(path.to_owned()))
    }
}

fn loss_for(task: Task) -> Loss {
    match task {
        Task::Regression => Loss::Mse,
        Task::Classification { .. } => Loss::CrossEntropy,
    }
}

fn training_set(data: &TabularDataset) -> TrainingSet {
    let targets = match &data.targets {
        Targets::Regression(y) => TrainTargets::Regression(y.iter().map(|&v| vec![v]).collect()),
        Targets::Classes { labels, .. } => TrainTargets::Classes(labels.clone()),
    };
    TrainingSet { inputs: data.features.clone(), targets }
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut bytes = serde_json::to_vec_pretty(value)
        .map_err(|e| CliError::Runtime(format!("serialize {}: {e}", path.display())))?;
    bytes.push(b'\n');
    fs::write(path, bytes)
        .map_err(|e| CliError::Runtime(format!("write {}: {e}", path.display())))?;
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Runtime(format!("read {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Runtime(format!("parse {}: {e}", path.display())))
}

fn kernel_kind_name(kind: KernelKind) -> &'static str {
    match kind {
        KernelKind::Correlation => "correlation",
        KernelKind::Covariance => "covariance",
    }
}

fn kernel_file(kind: KernelKind, layer: usize) -> String {
    format!("kernel-{}-layer{layer}.csv", kernel_kind_name(kind))
}

fn bank_file(sampler: &SamplerConfig) -> String {
    format!("mask-bank-{}.json", sampler.kind.name())
}

/// Train one network on the full configured dataset (standardized in place;
/// splitting is the experiment drivers' business) and persist the weights,
/// the standardizer and a small training log.
pub fn cmd_train(ctx: &Ctx) -> Result<(), CliError> {
    let started = Instant::now();
    let raw = ctx.config.task.load_primary(ctx.seed)?;
    let standardizer = Standardizer::fit(&raw)?;
    let data = standardizer.apply(&raw)?;
    let spec = ctx.config.model.network.spec_for(data.dim(), data.task())?;
    let mut train_cfg = ctx.config.model.train.clone();
    train_cfg.seed = ctx.seed;
    train_cfg.loss = loss_for(data.task());
    let set = training_set(&data);
    eprintln!(
        "train: dataset {} ({} rows, {} features), net {:?}",
        data.name,
        data.len(),
        data.dim(),
        spec.widths
    );
    let net = train(&spec, &set, &train_cfg)?;
    let train_loss = batch_loss(&net, &set, train_cfg.loss, None)?;

    let weights_path = ctx.out.join(WEIGHTS_FILE);
    net.save_json(&weights_path)?;
    write_json(&ctx.out.join(STANDARDIZER_FILE), &standardizer)?;
    write_json(
        &ctx.out.join(TRAIN_LOG_FILE),
        &serde_json::json!({
            "dataset": data.name,
            "rows": data.len(),
            "input-dim": data.dim(),
            "seed": ctx.seed,
            "loss": train_cfg.loss,
            "train-loss": train_loss,
            "seconds": started.elapsed().as_secs_f64(),
        }),
    )?;
    eprintln!(
        "train: wrote {} in {:.1}s (train loss {:.6})",
        weights_path.display(),
        started.elapsed().as_secs_f64(),
        train_loss
    );
    Ok(())
}

/// Estimate both kernel kinds for every dropout layer of a trained network
/// and write one CSV matrix per (kind, layer).
pub fn cmd_kernel(ctx: &Ctx, weights: Option<PathBuf>) -> Result<(), CliError> {
    let weights_path = weights.unwrap_or_else(|| ctx.out.join(WEIGHTS_FILE));
    require_artifact(&weights_path)?;
    let standardizer_path = ctx.out.join(STANDARDIZER_FILE);
    require_artifact(&standardizer_path)?;

    let net = NetworkWeights::load_json(&weights_path)?;
    let standardizer: Standardizer = read_json(&standardizer_path)?;
    let raw = ctx.config.task.load_primary(ctx.seed)?;
    let inputs = standardizer.apply_features(&raw.features)?;
    for kind in [KernelKind::Correlation, KernelKind::Covariance] {
        let kernels = calibrate_kernels(&net, &inputs, kind)?;
        for kernel in &kernels {
            let path = ctx.out.join(kernel_file(kind, kernel.layer));
            kernel.save_csv(&path)?;
            eprintln!(
                "kernel: wrote {} ({n}×{n} {name})",
                path.display(),
                n = kernel.size(),
                name = kernel_kind_name(kind)
            );
        }
    }
    Ok(())
}

/// Draw one bank per configured sampler; non-Bernoulli samplers read the
/// kernel CSVs produced by `kernel`.
pub fn cmd_masks(ctx: &Ctx, passes: Option<usize>) -> Result<(), CliError> {
    let t = passes.unwrap_or_else(|| ctx.config.evaluation.t_max());
    if t == 0 {
        return Err(CliError::Config("--passes must be at least 1".into()));
    }
    let raw = ctx.config.task.load_primary(ctx.seed)?;
    let spec = ctx.config.model.network.spec_for(raw.dim(), raw.task())?;
    for (si, sampler) in ctx.config.samplers.iter().enumerate() {
        let kernels: Vec<NeuronKernel> = if sampler.kind == divdrop::samplers::SamplerKind::Bernoulli
        {
            Vec::new()
        } else {
            let kind = sampler.effective_kernel_kind();
            spec.dropout_layers
                .iter()
                .map(|&layer| {
                    let path = ctx.out.join(kernel_file(kind, layer));
                    require_artifact(&path)?;
                    NeuronKernel::load_csv(&path, layer, kind).map_err(CliError::from)
                })
                .collect::<Result<_, _>>()?
        };
        let bank_seed = mix_seed(&[ctx.seed, si as u64]);
        let bank = build_mask_bank(&spec, &kernels, sampler, t, bank_seed)?;
        let path = ctx.out.join(bank_file(sampler));
        bank.save_json(&path)?;
        eprintln!("masks: wrote {} ({} mask sets)", path.display(), bank.len());
    }
    Ok(())
}

/// Predict every configured input under a stored mask bank and write a
/// per-input CSV: regression gets de-standardized mean and variance,
/// classification gets mean class probabilities plus the configured score.
pub fn cmd_infer(
    ctx: &Ctx,
    weights: Option<PathBuf>,
    bank: Option<PathBuf>,
) -> Result<(), CliError> {
    let weights_path = weights.unwrap_or_else(|| ctx.out.join(WEIGHTS_FILE));
    require_artifact(&weights_path)?;
    let bank_path = bank.unwrap_or_else(|| ctx.out.join(bank_file(&ctx.config.samplers[0])));
    require_artifact(&bank_path)?;
    let standardizer_path = ctx.out.join(STANDARDIZER_FILE);
    require_artifact(&standardizer_path)?;

    let net = NetworkWeights::load_json(&weights_path)?;
    let bank = MaskBank::load_json(&bank_path)?;
    let standardizer: Standardizer = read_json(&standardizer_path)?;
    let raw = ctx.config.task.load_primary(ctx.seed)?;
    let inputs = standardizer.apply_features(&raw.features)?;
    let preds = run_inference(std::slice::from_ref(&net), &bank.masks, &inputs)?;

    let sampler_name = bank.provenance.config.kind.name();
    let path = ctx.out.join(format!("predictions-{sampler_name}.csv"));
    let mut file = fs::File::create(&path)
        .map_err(|e| CliError::Runtime(format!("create {}: {e}", path.display())))?;
    let mut write = |line: String| -> Result<(), CliError> {
        writeln!(file, "{line}")
            .map_err(|e| CliError::Runtime(format!("write {}: {e}", path.display())))
    };
    match raw.task() {
        Task::Regression => {
            write("index,mean,variance".to_string())?;
            for (i, pred) in preds.iter().enumerate() {
                let (mean, var) = mean_variance(pred)?;
                let mean = mean * standardizer.target_std + standardizer.target_mean;
                let var = var * standardizer.target_std * standardizer.target_std;
                write(format!("{i},{mean},{var}"))?;
            }
        }
        Task::Classification { classes } => {
            let header: Vec<String> = (0..classes).map(|c| format!("p{c}")).collect();
            write(format!("index,{},score", header.join(",")))?;
            let measure = ctx.config.evaluation.measure;
            for (i, pred) in preds.iter().enumerate() {
                let probs = mean_probs(pred)?;
                let score = measure.score(pred)?;
                let cells: Vec<String> = probs.iter().map(|p| p.to_string()).collect();
                write(format!("{i},{},{}", cells.join(","), score.value()))?;
            }
        }
    }
    eprintln!(
        "infer: wrote {} ({} inputs, {} passes, {sampler_name} bank)",
        path.display(),
        preds.len(),
        bank.len()
    );
    Ok(())
}

/// Run the full protocol for the configured task and write the report.
pub fn cmd_experiment(ctx: &Ctx) -> Result<(), CliError> {
    let raw = ctx.config.task.load_primary(ctx.seed)?;
    let protocol = ctx.config.model.protocol();
    let eval = &ctx.config.evaluation;
    let report = match raw.task() {
        Task::Regression => run_regression_experiment(
            &raw,
            &ctx.config.samplers,
            &eval.t_list,
            eval.repeats,
            &protocol,
            ctx.seed,
        )?,
        Task::Classification { .. } => {
            let ood = ctx.config.task.load_ood(ctx.seed)?.ok_or_else(|| {
                CliError::Config(
                    "classification experiments need a `task.ood` pool for the uncertainty curves"
                        .into(),
                )
            })?;
            run_classification_experiment(
                &raw,
                &ood,
                &ctx.config.samplers,
                eval.t_max(),
                eval.measure,
                eval.repeats.splits,
                &protocol,
                ctx.seed,
            )?
        }
    };
    finish_report(ctx, &report, REPORT_FILE, "experiment")
}

/// Trace mean test log-likelihood over T = 1..max(T) for every sampler.
pub fn cmd_convergence(ctx: &Ctx) -> Result<(), CliError> {
    let started = Instant::now();
    let raw = ctx.config.task.load_primary(ctx.seed)?;
    let protocol = ctx.config.model.protocol();
    let t_max = ctx.config.evaluation.t_max();
    let mut curves = Vec::with_capacity(ctx.config.samplers.len());
    for sampler in &ctx.config.samplers {
        let curve = run_convergence_trace(&raw, sampler, t_max, &protocol, ctx.seed)?;
        eprintln!(
            "convergence: {} T=1 ll {:.4} → T={t_max} ll {:.4} ({:.1}s)",
            sampler.kind.name(),
            curve.points[0].1,
            curve.points.last().unwrap().1,
            started.elapsed().as_secs_f64()
        );
        curves.push(LabeledCurve { label: sampler.kind.name().to_string(), curve });
    }
    let report = ExperimentReport {
        name: format!("convergence/{}", raw.name),
        config: config_echo(ctx),
        records: Vec::new(),
        summaries: Vec::new(),
        curves,
        failures: Vec::new(),
        timings: Vec::new(),
    };
    finish_report(ctx, &report, CONVERGENCE_FILE, "convergence")
}

/// OOD exceedance percentages at the configured percentiles.
pub fn cmd_ood(ctx: &Ctx) -> Result<(), CliError> {
    let raw = ctx.config.task.load_primary(ctx.seed)?;
    let protocol = ctx.config.model.protocol();
    let eval = &ctx.config.evaluation;
    let report = run_ood_regression(
        &raw,
        &ctx.config.samplers,
        eval.t_max(),
        &eval.percentiles,
        eval.ood_split,
        eval.repeats,
        &protocol,
        ctx.seed,
    )?;
    finish_report(ctx, &report, OOD_REPORT_FILE, "ood")
}

fn config_echo(ctx: &Ctx) -> serde_json::Value {
    serde_json::json!({
        "run-config": serde_json::to_value(&ctx.config).expect("config serializes"),
        "seed": ctx.seed,
    })
}

fn finish_report(
    ctx: &Ctx,
    report: &ExperimentReport,
    file: &str,
    what: &str,
) -> Result<(), CliError> {
    let path = ctx.out.join(file);
    report.save_json(&path)?;
    print_summary(report);
    for timing in &report.timings {
        eprintln!("timing: {} {:.2}s", timing.label, timing.seconds);
    }
    if !report.failures.is_empty() {
        eprintln!("warning: {} cell(s) failed; details are in the report", report.failures.len());
    }
    eprintln!("{what}: wrote {}", path.display());
    Ok(())
}

/// Human summary on standard output: one row per (metric, sampler, T) plus
/// mean curve areas grouped by sampler and curve kind.
fn print_summary(report: &ExperimentReport) {
    if !report.summaries.is_empty() {
        println!(
            "{:<26} {:<10} {:>5} {:>4} {:>12} {:>12} {:>12}",
            "metric", "sampler", "T", "n", "mean", "std", "stderr"
        );
        for s in &report.summaries {
            println!(
                "{:<26} {:<10} {:>5} {:>4} {:>12.4} {:>12.4} {:>12.4}",
                s.metric, s.sampler, s.t, s.count, s.mean, s.std, s.stderr
            );
        }
    }
    let areas = curve_areas(report);
    if !areas.is_empty() {
        println!("{:<40} {:>4} {:>12}", "curve (mean area)", "n", "area");
        for (label, count, area) in areas {
            println!("{label:<40} {count:>4} {area:>12.4}");
        }
    }
}

/// Trapezoid areas averaged over repetitions: curve labels of the form
/// `sampler/repN/kind` are grouped by (sampler, kind).
fn curve_areas(report: &ExperimentReport) -> Vec<(String, usize, f64)> {
    let mut groups: std::collections::BTreeMap<String, (usize, f64)> =
        std::collections::BTreeMap::new();
    for labeled in &report.curves {
        let parts: Vec<&str> = labeled.label.split('/').collect();
        let key = if parts.len() == 3 && parts[1].starts_with("rep") {
            format!("{}/{}", parts[0], parts[2])
        } else {
            labeled.label.clone()
        };
        let points = &labeled.curve.points;
        let area: f64 = points
            .windows(2)
            .map(|w| 0.5 * (w[1].0 - w[0].0) * (w[1].1 + w[0].1))
            .sum();
        let entry = groups.entry(key).or_insert((0, 0.0));
        entry.0 += 1;
        entry.1 += area;
    }
    groups
        .into_iter()
        .map(|(label, (count, total))| (label, count, total / count as f64))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_precedence_is_flag_config_env_default() {
        assert_eq!(resolve_seed(Some(1), Some(2), Some("3")).unwrap(), 1);
        assert_eq!(resolve_seed(None, Some(2), Some("3")).unwrap(), 2);
        assert_eq!(resolve_seed(None, None, Some("3")).unwrap(), 3);
        assert_eq!(resolve_seed(None, None, None).unwrap(), 0);
        assert!(resolve_seed(None, None, Some("not-a-seed")).is_err());
    }

    #[test]
    fn exit_codes_follow_the_contract() {
        assert_eq!(CliError::Config("x".into()).exit_code(), 2);
        assert_eq!(CliError::Diverged("x".into()).exit_code(), 3);
        assert_eq!(CliError::MissingArtifact(PathBuf::from("w.json")).exit_code(), 4);
        assert_eq!(CliError::Runtime("x".into()).exit_code(), 1);
    }

    #[test]
    fn library_errors_map_onto_exit_codes() {
        assert_eq!(CliError::from(Error::ConfigError("bad".into())).exit_code(), 2);
        assert_eq!(
            CliError::from(Error::IngestError { location: "f:1:c".into(), message: "x".into() })
                .exit_code(),
            2
        );
        assert_eq!(CliError::from(Error::DivergedTraining("nan".into())).exit_code(), 3);
        assert_eq!(CliError::from(Error::DegenerateKernel("rank".into())).exit_code(), 1);
    }

    #[test]
    fn curve_areas_group_repetitions() {
        use divdrop::evaluation::CurvePoints;
        let curve = |ys: [f64; 2]| {
            CurvePoints::new("ue-accuracy", vec![(0.0, ys[0]), (1.0, ys[1])]).unwrap()
        };
        let report = ExperimentReport {
            name: "t".into(),
            config: serde_json::Value::Null,
            records: Vec::new(),
            summaries: Vec::new(),
            curves: vec![
                LabeledCurve { label: "dpp/rep0/ue-accuracy".into(), curve: curve([1.0, 1.0]) },
                LabeledCurve { label: "dpp/rep1/ue-accuracy".into(), curve: curve([0.0, 1.0]) },
                LabeledCurve { label: "lone".into(), curve: curve([1.0, 1.0]) },
            ],
            failures: Vec::new(),
            timings: Vec::new(),
        };
        let areas = curve_areas(&report);
        assert_eq!(areas.len(), 2);
        assert_eq!(areas[0], ("dpp/ue-accuracy".to_string(), 2, 0.75));
        assert_eq!(areas[1], ("lone".to_string(), 1, 1.0));
    }
}
