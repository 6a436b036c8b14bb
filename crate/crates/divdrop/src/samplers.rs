//! Dropout-mask samplers: Bernoulli (standard MC dropout), independent
//! leverage-score sampling, DPP and k-DPP, each paired with the marginal
//! inclusion probabilities the Horvitz-Thompson estimator needs.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{KernelKind, NeuronKernel};
use crate::network::NetworkSpec;
use crate::numerics::{eigh, elementary_symmetric, Matrix, RngStream};

/// Leverage scores are clamped into `[LEVERAGE_CLAMP_FLOOR, 1]` before use
/// as keep probabilities, so no neuron is unreachable.
pub const LEVERAGE_CLAMP_FLOOR: f64 = 1e-6;

/// Eigenvalues below this are treated as exact zeros for rank decisions and
/// for the `lambda / (1 + lambda)` selection probabilities.
pub const EIGENVALUE_FLOOR: f64 = 1e-12;

pub const DEFAULT_RIDGE: f64 = 1.0;
pub const DEFAULT_MAX_RESAMPLE_ATTEMPTS: usize = 100;

/// Mask banks consume RNG streams starting at this offset, leaving the low
/// stream ids to the trainer.
const BANK_STREAM_BASE: u64 = 1 << 32;

/// Which distribution masks are drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplerKind {
    Bernoulli,
    Leverage,
    Dpp,
    Kdpp,
}

impl SamplerKind {
    pub fn name(&self) -> &'static str {
        match self {
            SamplerKind::Bernoulli => "bernoulli",
            SamplerKind::Leverage => "leverage",
            SamplerKind::Dpp => "dpp",
            SamplerKind::Kdpp => "kdpp",
        }
    }
}

/// One layer's dropout mask together with per-neuron marginal inclusion
/// probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerMask {
    /// Hidden layer id `h`.
    pub layer: usize,
    /// `kept[j]` is true when neuron j survives.
    pub kept: Vec<bool>,
    /// Marginal probability that neuron j is kept; must be positive for
    /// every kept neuron.
    pub marginals: Vec<f64>,
}

impl LayerMask {
    pub fn new(layer: usize, kept: Vec<bool>, marginals: Vec<f64>) -> Result<Self> {
        let mask = LayerMask { layer, kept, marginals };
        mask.validate()?;
        Ok(mask)
    }

    pub fn validate(&self) -> Result<()> {
        if self.kept.len() != self.marginals.len() {
            return Err(Error::InvalidMask(format!(
                "layer {}: {} kept flags vs {} marginals",
                self.layer,
                self.kept.len(),
                self.marginals.len()
            )));
        }
        if !self.kept.iter().any(|&k| k) {
            return Err(Error::InvalidMask(format!("layer {}: no neuron kept", self.layer)));
        }
        for (j, (&kept, &pi)) in self.kept.iter().zip(&self.marginals).enumerate() {
            if !(0.0..=1.0).contains(&pi) || !pi.is_finite() {
                return Err(Error::InvalidMask(format!(
                    "layer {}: marginal {pi} of neuron {j} outside [0, 1]",
                    self.layer
                )));
            }
            if kept && pi <= 0.0 {
                return Err(Error::InvalidMask(format!(
                    "layer {}: kept neuron {j} has zero marginal",
                    self.layer
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.kept.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kept.is_empty()
    }

    pub fn kept_count(&self) -> usize {
        self.kept.iter().filter(|&&k| k).count()
    }
}

/// One full network mask: one `LayerMask` per dropout layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskSet {
    pub kind: SamplerKind,
    pub layers: Vec<LayerMask>,
}

/// Provenance recorded alongside a bank so inference artifacts are
/// self-describing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BankProvenance {
    pub config: SamplerConfig,
    pub seed: u64,
}

const BANK_VERSION: u32 = 1;

/// A pre-computed bank of T mask sets, reused across all inference inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskBank {
    version: u32,
    pub provenance: BankProvenance,
    pub masks: Vec<MaskSet>,
}

impl MaskBank {
    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let bank: MaskBank = serde_json::from_reader(std::io::BufReader::new(file))?;
        if bank.version != BANK_VERSION {
            return Err(Error::IngestError {
                location: path.display().to_string(),
                message: format!(
                    "mask bank version {} unsupported (expected {BANK_VERSION})",
                    bank.version
                ),
            });
        }
        if bank.masks.is_empty() {
            return Err(Error::InvalidMask("mask bank is empty".into()));
        }
        for set in &bank.masks {
            for mask in &set.layers {
                mask.validate()?;
            }
        }
        Ok(bank)
    }
}

/// Sampler settings. `kernel_kind` defaults per sampler (leverage and DPP
/// on correlation, k-DPP on covariance) when absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct SamplerConfig {
    pub kind: SamplerKind,
    pub dropout_rate: f64,
    /// Ridge λ of the leverage scores; ignored by the other samplers.
    #[serde(default = "default_ridge")]
    pub ridge: f64,
    #[serde(default)]
    pub kernel_kind: Option<KernelKind>,
    #[serde(default = "default_attempts")]
    pub max_resample_attempts: usize,
}

fn default_ridge() -> f64 {
    DEFAULT_RIDGE
}

fn default_attempts() -> usize {
    DEFAULT_MAX_RESAMPLE_ATTEMPTS
}

impl SamplerConfig {
    pub fn new(kind: SamplerKind, dropout_rate: f64) -> Self {
        SamplerConfig {
            kind,
            dropout_rate,
            ridge: DEFAULT_RIDGE,
            kernel_kind: None,
            max_resample_attempts: DEFAULT_MAX_RESAMPLE_ATTEMPTS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dropout_rate > 0.0 && self.dropout_rate < 1.0) {
            return Err(Error::ConfigError(format!(
                "dropout rate must lie in (0, 1), got {}",
                self.dropout_rate
            )));
        }
        if self.kind == SamplerKind::Leverage && !(self.ridge > 0.0 && self.ridge.is_finite()) {
            return Err(Error::ConfigError(format!(
                "leverage ridge must be positive, got {}",
                self.ridge
            )));
        }
        if self.max_resample_attempts == 0 {
            return Err(Error::ConfigError("max resample attempts must be at least 1".into()));
        }
        Ok(())
    }

    pub fn effective_kernel_kind(&self) -> KernelKind {
        self.kernel_kind.unwrap_or(match self.kind {
            SamplerKind::Kdpp => KernelKind::Covariance,
            _ => KernelKind::Correlation,
        })
    }

    /// k-DPP cardinality for a layer of width `n`: round((1-p)·n), at least 1.
    /// Callers additionally clamp to the kernel's numerical rank.
    pub fn derived_k(&self, n: usize) -> usize {
        (((1.0 - self.dropout_rate) * n as f64).round() as usize).clamp(1, n)
    }
}

/// Standard MC-dropout mask: each neuron kept independently with probability
/// `1 - p`, marginals all `1 - p`. All-dropped draws are rejected and
/// redrawn; termination is geometric since `p < 1`.
pub fn sample_bernoulli(layer: usize, n: usize, p: f64, rng: &mut RngStream) -> Result<LayerMask> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::ConfigError(format!("dropout rate must lie in (0, 1), got {p}")));
    }
    if n == 0 {
        return Err(Error::InvalidMask("layer has no neurons".into()));
    }
    let keep = 1.0 - p;
    loop {
        let kept: Vec<bool> = (0..n).map(|_| rng.next_bool(keep)).collect();
        if kept.iter().any(|&k| k) {
            return LayerMask::new(layer, kept, vec![keep; n]);
        }
    }
}

/// Ridge leverage scores `l_λ(j) = [C (C + λI)^{-1}]_jj`, computed
/// spectrally as `Σ_n u_jn² · λ_n / (λ_n + λ)`.
pub fn leverage_scores(kernel: &NeuronKernel, lambda: f64) -> Result<Vec<f64>> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::ConfigError(format!("ridge must be positive, got {lambda}")));
    }
    let dec = eigh(&kernel.matrix)?;
    let n = kernel.size();
    let mut scores = vec![0.0; n];
    for (nn, &lam) in dec.eigenvalues.iter().enumerate() {
        let lam = lam.max(0.0);
        let weight = lam / (lam + lambda);
        for (j, score) in scores.iter_mut().enumerate() {
            *score += dec.eigenvectors[(j, nn)] * dec.eigenvectors[(j, nn)] * weight;
        }
    }
    Ok(scores)
}

/// Independent per-neuron sampling with keep probabilities equal to the
/// clamped leverage scores.
pub fn sample_leverage(
    layer: usize,
    kernel: &NeuronKernel,
    lambda: f64,
    max_attempts: usize,
    rng: &mut RngStream,
) -> Result<LayerMask> {
    let scores = leverage_scores(kernel, lambda)?;
    if scores.iter().all(|&s| s < LEVERAGE_CLAMP_FLOOR) {
        return Err(Error::DegenerateSampler(format!(
            "layer {layer}: every leverage score falls below the clamp floor"
        )));
    }
    let probs: Vec<f64> = scores.iter().map(|s| s.clamp(LEVERAGE_CLAMP_FLOOR, 1.0)).collect();
    draw_independent(layer, &probs, max_attempts, rng)
}

fn draw_independent(
    layer: usize,
    probs: &[f64],
    max_attempts: usize,
    rng: &mut RngStream,
) -> Result<LayerMask> {
    for _ in 0..max_attempts {
        let kept: Vec<bool> = probs.iter().map(|&pi| rng.next_bool(pi)).collect();
        if kept.iter().any(|&k| k) {
            return LayerMask::new(layer, kept, probs.to_vec());
        }
    }
    Err(Error::DegenerateSampler(format!(
        "layer {layer}: no non-empty mask after {max_attempts} attempts"
    )))
}

/// Eigendecomposition of a likelihood kernel with the spectrum floored at
/// zero; shared by the DPP and k-DPP samplers.
#[derive(Debug, Clone)]
struct SpectralKernel {
    n: usize,
    eigenvalues: Vec<f64>,
    eigenvectors: Matrix,
}

impl SpectralKernel {
    fn new(kernel: &NeuronKernel) -> Result<Self> {
        let dec = eigh(&kernel.matrix)?;
        let eigenvalues = dec
            .eigenvalues
            .iter()
            .map(|&l| if l < EIGENVALUE_FLOOR { 0.0 } else { l })
            .collect();
        Ok(SpectralKernel { n: kernel.size(), eigenvalues, eigenvectors: dec.eigenvectors })
    }

    fn rank(&self) -> usize {
        self.eigenvalues.iter().filter(|&&l| l > 0.0).count()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Draw one subset from the projection DPP spanned by the given orthonormal
/// eigenvector columns; returns exactly `columns.len()` kept items.
///
/// After each selection the basis is contracted with a Householder rotation:
/// right-multiplying by an orthogonal matrix keeps the columns orthonormal,
/// and rotating the selected coordinate into the first column lets us drop
/// that column to obtain an orthonormal basis of `span ∩ e_item⊥` in
/// O(n·k) per step instead of re-orthonormalizing from scratch.
fn projection_sample(n: usize, mut cols: Vec<Vec<f64>>, rng: &mut RngStream) -> Result<Vec<bool>> {
    let mut kept = vec![false; n];
    while !cols.is_empty() {
        // P(item i) = Σ_c cols[c][i]² / |cols|
        let weights: Vec<f64> =
            (0..n).map(|i| cols.iter().map(|c| c[i] * c[i]).sum()).collect();
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::DegenerateSampler(
                "projection sampling lost probability mass".into(),
            ));
        }
        let u = rng.next_f64() * total;
        let mut acc = 0.0;
        let mut item = None;
        for (i, &w) in weights.iter().enumerate() {
            acc += w;
            if u < acc {
                item = Some(i);
                break;
            }
        }
        // floating-point slack: fall back to the last reachable item
        let item = match item {
            Some(i) => i,
            None => weights
                .iter()
                .rposition(|&w| w > 0.0)
                .expect("positive total implies a positive weight"),
        };
        kept[item] = true;

        if cols.len() == 1 {
            break;
        }

        // Householder vector v sends the selected row r (the `item`-th
        // coordinate of every column) onto ±‖r‖·e₁.
        let m = cols.len();
        let mut v: Vec<f64> = cols.iter().map(|c| c[item]).collect();
        let r_norm = dot(&v, &v).sqrt();
        v[0] += v[0].signum() * r_norm;
        let beta = 2.0 / dot(&v, &v);

        // V ← V·(I − β v vᵀ), i.e. col_c −= β·v_c·(V·v)
        let mut vv = vec![0.0; n];
        for (c, col) in cols.iter().enumerate() {
            let vc = v[c];
            if vc != 0.0 {
                for (acc, &x) in vv.iter_mut().zip(col) {
                    *acc += vc * x;
                }
            }
        }
        for (c, col) in cols.iter_mut().enumerate() {
            let f = beta * v[c];
            if f != 0.0 {
                for (x, &w) in col.iter_mut().zip(&vv) {
                    *x -= f * w;
                }
            }
        }

        // only the first column now carries the `item` coordinate: drop it
        // and pin the survivors' coordinate to an exact zero
        cols.swap_remove(0);
        debug_assert_eq!(cols.len(), m - 1);
        for col in &mut cols {
            col[item] = 0.0;
        }
    }
    Ok(kept)
}

/// Exact spectral sampler for the L-ensemble DPP with likelihood kernel
/// `L = C`: eigenvector n enters the projection with probability
/// `λ_n / (1 + λ_n)`; marginals are `[L(L+I)^{-1}]_jj`.
#[derive(Debug, Clone)]
pub struct DppSampler {
    layer: usize,
    spectral: SpectralKernel,
    marginals: Vec<f64>,
    max_attempts: usize,
}

impl DppSampler {
    pub fn new(layer: usize, kernel: &NeuronKernel, max_attempts: usize) -> Result<Self> {
        if max_attempts == 0 {
            return Err(Error::ConfigError("max resample attempts must be at least 1".into()));
        }
        let spectral = SpectralKernel::new(kernel)?;
        let mut marginals = vec![0.0; spectral.n];
        for (nn, &lam) in spectral.eigenvalues.iter().enumerate() {
            let weight = lam / (1.0 + lam);
            for (j, pi) in marginals.iter_mut().enumerate() {
                *pi += spectral.eigenvectors[(j, nn)] * spectral.eigenvectors[(j, nn)] * weight;
            }
        }
        for pi in &mut marginals {
            *pi = pi.clamp(0.0, 1.0);
        }
        Ok(DppSampler { layer, spectral, marginals, max_attempts })
    }

    /// Marginal inclusion probabilities, identical to `leverage_scores`
    /// with λ = 1.
    pub fn marginals(&self) -> &[f64] {
        &self.marginals
    }

    pub fn draw(&self, rng: &mut RngStream) -> Result<LayerMask> {
        for _ in 0..self.max_attempts {
            let cols: Vec<Vec<f64>> = self
                .spectral
                .eigenvalues
                .iter()
                .enumerate()
                .filter(|&(_, &lam)| lam > 0.0 && rng.next_f64() < lam / (1.0 + lam))
                .map(|(nn, _)| self.spectral.eigenvectors.col(nn))
                .collect();
            if cols.is_empty() {
                continue; // empty subset: reject and redraw
            }
            let kept = projection_sample(self.spectral.n, cols, rng)?;
            return LayerMask::new(self.layer, kept, self.marginals.clone());
        }
        Err(Error::DegenerateSampler(format!(
            "layer {}: no non-empty DPP sample after {} attempts",
            self.layer, self.max_attempts
        )))
    }
}

/// One DPP draw; prefer [`DppSampler`] when drawing repeatedly from the same
/// kernel, since it caches the eigendecomposition.
pub fn sample_dpp(
    layer: usize,
    kernel: &NeuronKernel,
    max_attempts: usize,
    rng: &mut RngStream,
) -> Result<LayerMask> {
    DppSampler::new(layer, kernel, max_attempts)?.draw(rng)
}

/// Exact k-DPP sampler: eigenvector subsets of size k are selected by the
/// elementary-symmetric-polynomial recursion, then projection-sampled.
/// Marginals use the closed form `π_j = Σ_n u_jn² λ_n e_{k-1}(λ∖λ_n) / e_k(λ)`.
#[derive(Debug, Clone)]
pub struct KdppSampler {
    layer: usize,
    k: usize,
    spectral: SpectralKernel,
    /// Spectrum rescaled by its largest eigenvalue; selection probabilities
    /// are invariant to the scale, and the rescaling keeps the elementary
    /// symmetric polynomials inside f64 range.
    scaled: Vec<f64>,
    /// esp[l][m] = e_l over the first m scaled eigenvalues.
    esp: Vec<Vec<f64>>,
    marginals: Vec<f64>,
}

impl KdppSampler {
    pub fn new(layer: usize, kernel: &NeuronKernel, k: usize) -> Result<Self> {
        let spectral = SpectralKernel::new(kernel)?;
        let rank = spectral.rank();
        if k == 0 || k > rank {
            return Err(Error::RankDeficient { k, rank });
        }
        let lam_max = spectral.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
        let scaled: Vec<f64> = spectral.eigenvalues.iter().map(|&l| l / lam_max).collect();
        let esp = elementary_symmetric(&scaled, k);

        let n = spectral.n;
        let ek = esp[k][n];
        if !(ek > 0.0 && ek.is_finite()) {
            return Err(Error::DegenerateSampler(format!(
                "layer {layer}: e_{k} of the spectrum is {ek}"
            )));
        }
        let mut marginals = vec![0.0; n];
        for (nn, &lam) in scaled.iter().enumerate() {
            if lam == 0.0 {
                continue;
            }
            let rest: Vec<f64> =
                scaled.iter().enumerate().filter(|&(m, _)| m != nn).map(|(_, &l)| l).collect();
            let e_minus = elementary_symmetric(&rest, k - 1);
            let coef = lam * e_minus[k - 1][n - 1] / ek;
            for (j, pi) in marginals.iter_mut().enumerate() {
                *pi += spectral.eigenvectors[(j, nn)] * spectral.eigenvectors[(j, nn)] * coef;
            }
        }
        for pi in &mut marginals {
            *pi = pi.clamp(0.0, 1.0);
        }
        Ok(KdppSampler { layer, k, spectral, scaled, esp, marginals })
    }

    pub fn marginals(&self) -> &[f64] {
        &self.marginals
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn draw(&self, rng: &mut RngStream) -> Result<LayerMask> {
        let mut selected = Vec::with_capacity(self.k);
        let mut l = self.k;
        for m in (1..=self.scaled.len()).rev() {
            if l == 0 {
                break;
            }
            if l == m {
                // every remaining eigenvector must be taken
                selected.extend((0..m).rev());
                break;
            }
            let denom = self.esp[l][m];
            let p = if denom > 0.0 {
                self.scaled[m - 1] * self.esp[l - 1][m - 1] / denom
            } else {
                1.0
            };
            if rng.next_f64() < p {
                selected.push(m - 1);
                l -= 1;
            }
        }
        if selected.len() != self.k {
            return Err(Error::DegenerateSampler(format!(
                "layer {}: eigenvector selection returned {} of {} vectors",
                self.layer,
                selected.len(),
                self.k
            )));
        }
        let cols: Vec<Vec<f64>> =
            selected.iter().map(|&nn| self.spectral.eigenvectors.col(nn)).collect();
        let kept = projection_sample(self.spectral.n, cols, rng)?;
        LayerMask::new(self.layer, kept, self.marginals.clone())
    }
}

/// One k-DPP draw; prefer [`KdppSampler`] for repeated draws.
pub fn sample_kdpp(
    layer: usize,
    kernel: &NeuronKernel,
    k: usize,
    rng: &mut RngStream,
) -> Result<LayerMask> {
    KdppSampler::new(layer, kernel, k)?.draw(rng)
}

/// Per-layer draw plan with all spectral work done up front.
enum LayerPlan {
    Bernoulli { layer: usize, n: usize, p: f64 },
    Independent { layer: usize, probs: Vec<f64>, max_attempts: usize },
    Dpp(DppSampler),
    Kdpp(KdppSampler),
}

impl LayerPlan {
    fn draw(&self, rng: &mut RngStream) -> Result<LayerMask> {
        match self {
            LayerPlan::Bernoulli { layer, n, p } => sample_bernoulli(*layer, *n, *p, rng),
            LayerPlan::Independent { layer, probs, max_attempts } => {
                draw_independent(*layer, probs, *max_attempts, rng)
            }
            LayerPlan::Dpp(sampler) => sampler.draw(rng),
            LayerPlan::Kdpp(sampler) => sampler.draw(rng),
        }
    }
}

/// Build a bank of `t` mask sets for a network. Kernel-based samplers need
/// one kernel per dropout layer (matching ids, widths and kernel kind);
/// Bernoulli ignores `kernels`. Deterministic given `(config, seed)`: each
/// (draw, layer) cell consumes its own RNG stream, so thread scheduling
/// cannot reorder randomness.
pub fn build_mask_bank(
    spec: &NetworkSpec,
    kernels: &[NeuronKernel],
    config: &SamplerConfig,
    t: usize,
    seed: u64,
) -> Result<MaskBank> {
    spec.validate()?;
    config.validate()?;
    if t == 0 {
        return Err(Error::ConfigError("bank size must be at least 1".into()));
    }

    let plans: Vec<LayerPlan> = if config.kind == SamplerKind::Bernoulli {
        spec.dropout_layers
            .iter()
            .map(|&h| LayerPlan::Bernoulli {
                layer: h,
                n: spec.widths[h],
                p: config.dropout_rate,
            })
            .collect()
    } else {
        if kernels.len() != spec.dropout_layers.len() {
            return Err(Error::ConfigError(format!(
                "{} kernels supplied for {} dropout layers",
                kernels.len(),
                spec.dropout_layers.len()
            )));
        }
        let want_kind = config.effective_kernel_kind();
        spec.dropout_layers
            .iter()
            .zip(kernels)
            .map(|(&h, kernel)| {
                if kernel.layer != h {
                    return Err(Error::ConfigError(format!(
                        "kernel for layer {} supplied where layer {h} was expected",
                        kernel.layer
                    )));
                }
                if kernel.size() != spec.widths[h] {
                    return Err(Error::ShapeError(format!(
                        "kernel for layer {h} has size {}, layer width is {}",
                        kernel.size(),
                        spec.widths[h]
                    )));
                }
                if kernel.kind != want_kind {
                    return Err(Error::ConfigError(format!(
                        "kernel for layer {h} is {:?}, config wants {:?}",
                        kernel.kind, want_kind
                    )));
                }
                match config.kind {
                    SamplerKind::Leverage => {
                        let scores = leverage_scores(kernel, config.ridge)?;
                        if scores.iter().all(|&s| s < LEVERAGE_CLAMP_FLOOR) {
                            return Err(Error::DegenerateSampler(format!(
                                "layer {h}: every leverage score falls below the clamp floor"
                            )));
                        }
                        let probs =
                            scores.iter().map(|s| s.clamp(LEVERAGE_CLAMP_FLOOR, 1.0)).collect();
                        Ok(LayerPlan::Independent {
                            layer: h,
                            probs,
                            max_attempts: config.max_resample_attempts,
                        })
                    }
                    SamplerKind::Dpp => Ok(LayerPlan::Dpp(DppSampler::new(
                        h,
                        kernel,
                        config.max_resample_attempts,
                    )?)),
                    SamplerKind::Kdpp => {
                        let spectral = SpectralKernel::new(kernel)?;
                        let rank = spectral.rank();
                        if rank == 0 {
                            return Err(Error::DegenerateSampler(format!(
                                "layer {h}: kernel has numerical rank 0"
                            )));
                        }
                        let k = config.derived_k(spec.widths[h]).min(rank);
                        Ok(LayerPlan::Kdpp(KdppSampler::new(h, kernel, k)?))
                    }
                    SamplerKind::Bernoulli => unreachable!(),
                }
            })
            .collect::<Result<_>>()?
    };

    let layer_count = plans.len() as u64;
    let masks = (0..t)
        .into_par_iter()
        .map(|ti| -> Result<MaskSet> {
            let layers = plans
                .iter()
                .enumerate()
                .map(|(li, plan)| {
                    let stream = BANK_STREAM_BASE + ti as u64 * layer_count + li as u64;
                    let mut rng = RngStream::new(seed, stream);
                    plan.draw(&mut rng)
                })
                .collect::<Result<Vec<LayerMask>>>()?;
            Ok(MaskSet { kind: config.kind, layers })
        })
        .collect::<Result<Vec<MaskSet>>>()?;

    Ok(MaskBank {
        version: BANK_VERSION,
        provenance: BankProvenance { config: config.clone(), seed },
        masks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{Activation, Task};
    use crate::numerics::SymMatrix;
    use approx::assert_abs_diff_eq;

    // ---- test-side linear-algebra oracles ----

    fn determinant(mut m: Vec<Vec<f64>>) -> f64 {
        let n = m.len();
        if n == 0 {
            return 1.0;
        }
        let mut det = 1.0;
        for col in 0..n {
            let pivot = (col..n)
                .max_by(|&a, &b| m[a][col].abs().partial_cmp(&m[b][col].abs()).unwrap())
                .unwrap();
            if m[pivot][col] == 0.0 {
                return 0.0;
            }
            if pivot != col {
                m.swap(pivot, col);
                det = -det;
            }
            det *= m[col][col];
            for row in (col + 1)..n {
                let f = m[row][col] / m[col][col];
                for j in col..n {
                    m[row][j] -= f * m[col][j];
                }
            }
        }
        det
    }

    fn invert(m: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let n = m.len();
        let mut aug: Vec<Vec<f64>> = m
            .iter()
            .enumerate()
            .map(|(i, row)| {
                let mut r = row.clone();
                r.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
                r
            })
            .collect();
        for col in 0..n {
            let pivot = (col..n)
                .max_by(|&a, &b| aug[a][col].abs().partial_cmp(&aug[b][col].abs()).unwrap())
                .unwrap();
            aug.swap(pivot, col);
            let p = aug[col][col];
            assert!(p != 0.0, "singular matrix in test oracle");
            for v in &mut aug[col] {
                *v /= p;
            }
            for row in 0..n {
                if row != col {
                    let f = aug[row][col];
                    for j in 0..2 * n {
                        aug[row][j] -= f * aug[col][j];
                    }
                }
            }
        }
        aug.into_iter().map(|r| r[n..].to_vec()).collect()
    }

    fn submatrix(l: &SymMatrix, idx: &[usize]) -> Vec<Vec<f64>> {
        idx.iter().map(|&i| idx.iter().map(|&j| l[(i, j)]).collect()).collect()
    }

    fn random_psd_kernel(layer: usize, n: usize, kind: KernelKind, seed: u64) -> NeuronKernel {
        let mut rng = RngStream::new(seed, 0);
        let cols = n + 3;
        let a: Vec<Vec<f64>> =
            (0..n).map(|_| (0..cols).map(|_| rng.next_normal()).collect()).collect();
        let matrix = SymMatrix::from_fn(n, |i, j| {
            a[i].iter().zip(&a[j]).map(|(x, y)| x * y).sum::<f64>() / cols as f64
        });
        NeuronKernel { layer, kind, matrix, dead: Vec::new() }
    }

    fn kernel_from_rows(rows: &[Vec<f64>]) -> NeuronKernel {
        NeuronKernel {
            layer: 1,
            kind: KernelKind::Correlation,
            matrix: SymMatrix::from_rows(rows),
            dead: Vec::new(),
        }
    }

    fn mask_to_bits(mask: &LayerMask) -> usize {
        mask.kept
            .iter()
            .enumerate()
            .fold(0, |acc, (j, &k)| if k { acc | (1 << j) } else { acc })
    }

    /// Exact non-empty-subset DPP distribution: det(L_S)/det(L+I),
    /// renormalized over the non-empty subsets.
    fn dpp_subset_probs(l: &SymMatrix) -> Vec<f64> {
        let n = l.n();
        let mut raw = vec![0.0; 1 << n];
        for bits in 1usize..(1 << n) {
            let idx: Vec<usize> = (0..n).filter(|&j| bits & (1 << j) != 0).collect();
            raw[bits] = determinant(submatrix(l, &idx));
        }
        let total: f64 = raw.iter().sum();
        raw.iter().map(|&v| v / total).collect()
    }

    // ---- bernoulli ----

    #[test]
    fn bernoulli_near_zero_rate_keeps_everything() {
        let mut rng = RngStream::new(1, 0);
        let p = 1e-9;
        let mask = sample_bernoulli(1, 4, p, &mut rng).unwrap();
        assert_eq!(mask.kept, vec![true; 4]);
        assert_eq!(mask.marginals, vec![1.0 - p; 4]);
    }

    #[test]
    fn bernoulli_keep_frequency_matches_rate() {
        let mut rng = RngStream::new(2, 0);
        let n = 10;
        let draws = 100_000;
        let mut keeps = vec![0usize; n];
        for _ in 0..draws {
            let mask = sample_bernoulli(1, n, 0.5, &mut rng).unwrap();
            for (j, &k) in mask.kept.iter().enumerate() {
                if k {
                    keeps[j] += 1;
                }
            }
        }
        for &count in &keeps {
            let freq = count as f64 / draws as f64;
            assert!((freq - 0.5).abs() < 0.01, "keep frequency {freq}");
        }
    }

    #[test]
    fn bernoulli_marginals_are_constant_across_draws() {
        let mut rng = RngStream::new(3, 0);
        for _ in 0..50 {
            let mask = sample_bernoulli(2, 6, 0.3, &mut rng).unwrap();
            assert_eq!(mask.marginals, vec![0.7; 6]);
            assert_eq!(mask.layer, 2);
        }
    }

    #[test]
    fn bernoulli_single_neuron_is_always_kept() {
        // the only non-empty mask on one neuron keeps it, even at high p
        let mut rng = RngStream::new(4, 0);
        for _ in 0..200 {
            let mask = sample_bernoulli(1, 1, 0.9, &mut rng).unwrap();
            assert_eq!(mask.kept, vec![true]);
        }
    }

    // ---- leverage ----

    #[test]
    fn identity_kernel_scores_are_half_at_unit_ridge() {
        let kernel = kernel_from_rows(&[
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ]);
        let scores = leverage_scores(&kernel, 1.0).unwrap();
        for &s in &scores {
            assert_abs_diff_eq!(s, 0.5, epsilon = 1e-12);
        }
    }

    #[test]
    fn huge_ridge_drives_scores_to_zero() {
        let kernel = kernel_from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let scores = leverage_scores(&kernel, 1e12).unwrap();
        for &s in &scores {
            assert!(s < 1e-10, "score {s} not vanishing");
        }
    }

    #[test]
    fn leverage_scores_match_direct_inverse() {
        let kernel = random_psd_kernel(1, 5, KernelKind::Correlation, 11);
        let lambda = 0.7;
        let n = 5;
        let c: Vec<Vec<f64>> =
            (0..n).map(|i| (0..n).map(|j| kernel.matrix[(i, j)]).collect()).collect();
        let mut shifted = c.clone();
        for i in 0..n {
            shifted[i][i] += lambda;
        }
        let inv = invert(&shifted);
        let scores = leverage_scores(&kernel, lambda).unwrap();
        for j in 0..n {
            let direct: f64 = (0..n).map(|m| c[j][m] * inv[m][j]).sum();
            assert_abs_diff_eq!(scores[j], direct, epsilon = 1e-10);
        }
    }

    #[test]
    fn leverage_scores_satisfy_trace_identity() {
        let kernel = random_psd_kernel(1, 6, KernelKind::Correlation, 13);
        let lambda = 1.0;
        let scores = leverage_scores(&kernel, lambda).unwrap();
        let dec = eigh(&kernel.matrix).unwrap();
        let trace: f64 =
            dec.eigenvalues.iter().map(|&l| l.max(0.0) / (l.max(0.0) + lambda)).sum();
        assert_abs_diff_eq!(scores.iter().sum::<f64>(), trace, epsilon = 1e-10);
    }

    #[test]
    fn identity_kernel_leverage_masks_are_fair_coins() {
        let kernel = kernel_from_rows(&[
            vec![1.0, 0.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0, 0.0],
            vec![0.0, 0.0, 1.0, 0.0],
            vec![0.0, 0.0, 0.0, 1.0],
        ]);
        let mut rng = RngStream::new(5, 0);
        let draws = 100_000;
        let mut keeps = vec![0usize; 4];
        for _ in 0..draws {
            let mask = sample_leverage(1, &kernel, 1.0, 100, &mut rng).unwrap();
            assert_eq!(mask.marginals, vec![0.5; 4]);
            for (j, &k) in mask.kept.iter().enumerate() {
                if k {
                    keeps[j] += 1;
                }
            }
        }
        // conditioning on non-empty lifts 0.5 by about p_empty/2 ≈ 0.033
        for &count in &keeps {
            let freq = count as f64 / draws as f64;
            let expected = 0.5 / (1.0 - 0.5f64.powi(4));
            assert!((freq - expected).abs() < 0.01, "keep frequency {freq} vs {expected}");
        }
    }

    #[test]
    fn duplicated_cluster_gets_lower_keep_probability() {
        // five duplicated neurons plus one isolated neuron
        let mut rows = vec![vec![0.0; 6]; 6];
        for (i, row) in rows.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = if i < 5 && j < 5 {
                    1.0
                } else if i == j {
                    1.0
                } else {
                    0.0
                };
            }
        }
        let kernel = kernel_from_rows(&rows);
        let scores = leverage_scores(&kernel, 1.0).unwrap();
        // oracle via explicit inverse
        let c: Vec<Vec<f64>> = rows.clone();
        let mut shifted = c.clone();
        for i in 0..6 {
            shifted[i][i] += 1.0;
        }
        let inv = invert(&shifted);
        for j in 0..6 {
            let direct: f64 = (0..6).map(|m| c[j][m] * inv[m][j]).sum();
            assert_abs_diff_eq!(scores[j], direct, epsilon = 1e-10);
        }
        for j in 0..5 {
            assert!(
                scores[j] < scores[5],
                "cluster score {} not below isolated {}",
                scores[j],
                scores[5]
            );
        }
        // exact values: cluster 1/6·(5/6)... = (1/5)·(5/(5+1)) = 1/6; isolated 1/2
        assert_abs_diff_eq!(scores[0], 1.0 / 6.0, epsilon = 1e-10);
        assert_abs_diff_eq!(scores[5], 0.5, epsilon = 1e-10);
    }

    #[test]
    fn leverage_marginals_equal_clamped_scores() {
        let kernel = random_psd_kernel(1, 5, KernelKind::Correlation, 17);
        let scores = leverage_scores(&kernel, 1.0).unwrap();
        let mut rng = RngStream::new(6, 0);
        let mask = sample_leverage(1, &kernel, 1.0, 100, &mut rng).unwrap();
        for (pi, s) in mask.marginals.iter().zip(&scores) {
            assert_abs_diff_eq!(*pi, s.clamp(LEVERAGE_CLAMP_FLOOR, 1.0), epsilon = 0.0);
        }
    }

    // ---- dpp ----

    #[test]
    fn identity_dpp_spreads_evenly_over_nonempty_subsets() {
        let kernel = kernel_from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let sampler = DppSampler::new(1, &kernel, 100).unwrap();
        let mut rng = RngStream::new(7, 0);
        let draws = 30_000;
        let mut counts = vec![0usize; 4];
        for _ in 0..draws {
            counts[mask_to_bits(&sampler.draw(&mut rng).unwrap())] += 1;
        }
        assert_eq!(counts[0], 0);
        for &c in &counts[1..] {
            let freq = c as f64 / draws as f64;
            assert!((freq - 1.0 / 3.0).abs() < 0.015, "subset frequency {freq}");
        }
    }

    #[test]
    fn zero_eigenvalue_excludes_its_neuron() {
        let kernel = kernel_from_rows(&[vec![0.0, 0.0], vec![0.0, 3.0]]);
        let sampler = DppSampler::new(1, &kernel, 100).unwrap();
        assert_abs_diff_eq!(sampler.marginals()[0], 0.0, epsilon = 0.0);
        assert_abs_diff_eq!(sampler.marginals()[1], 0.75, epsilon = 1e-12);
        let mut rng = RngStream::new(8, 0);
        for _ in 0..10_000 {
            let mask = sampler.draw(&mut rng).unwrap();
            assert_eq!(mask.kept, vec![false, true]);
        }
    }

    #[test]
    fn dpp_subset_frequencies_match_enumeration() {
        let kernel = random_psd_kernel(1, 4, KernelKind::Correlation, 19);
        let probs = dpp_subset_probs(&kernel.matrix);
        let sampler = DppSampler::new(1, &kernel, 100).unwrap();
        let mut rng = RngStream::new(9, 0);
        let draws = 200_000;
        let mut counts = vec![0usize; 16];
        for _ in 0..draws {
            counts[mask_to_bits(&sampler.draw(&mut rng).unwrap())] += 1;
        }
        let tv: f64 = probs
            .iter()
            .zip(&counts)
            .map(|(&p, &c)| (p - c as f64 / draws as f64).abs())
            .sum::<f64>()
            / 2.0;
        assert!(tv <= 0.01, "total variation {tv}");
    }

    #[test]
    fn dpp_marginals_match_enumeration_and_leverage_at_unit_ridge() {
        for seed in [23, 29, 31] {
            let n = 3 + (seed as usize % 4); // sizes 3..6
            let kernel = random_psd_kernel(1, n, KernelKind::Correlation, seed);
            let sampler = DppSampler::new(1, &kernel, 100).unwrap();

            // enumeration over all subsets, including the empty one
            let mut total = 0.0;
            let mut incl = vec![0.0; n];
            for bits in 0usize..(1 << n) {
                let idx: Vec<usize> = (0..n).filter(|&j| bits & (1 << j) != 0).collect();
                let det = determinant(submatrix(&kernel.matrix, &idx));
                total += det;
                for &j in &idx {
                    incl[j] += det;
                }
            }
            for j in 0..n {
                assert_abs_diff_eq!(sampler.marginals()[j], incl[j] / total, epsilon = 1e-10);
            }
            let lev = leverage_scores(&kernel, 1.0).unwrap();
            for j in 0..n {
                assert_abs_diff_eq!(sampler.marginals()[j], lev[j], epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn perfectly_correlated_pair_never_coexists() {
        let kernel = kernel_from_rows(&[
            vec![1.0, 1.0, 0.3],
            vec![1.0, 1.0, 0.3],
            vec![0.3, 0.3, 1.0],
        ]);
        // the 2x2 principal minor of the pair vanishes
        assert_abs_diff_eq!(
            determinant(submatrix(&kernel.matrix, &[0, 1])),
            0.0,
            epsilon = 1e-15
        );
        let sampler = DppSampler::new(1, &kernel, 100).unwrap();
        let mut rng = RngStream::new(10, 0);
        for _ in 0..10_000 {
            let mask = sampler.draw(&mut rng).unwrap();
            assert!(
                !(mask.kept[0] && mask.kept[1]),
                "duplicated pair sampled together: {:?}",
                mask.kept
            );
        }
    }

    // ---- kdpp ----

    #[test]
    fn full_cardinality_kdpp_keeps_everything() {
        let kernel = random_psd_kernel(1, 3, KernelKind::Covariance, 37);
        let sampler = KdppSampler::new(1, &kernel, 3).unwrap();
        for pi in sampler.marginals() {
            assert_abs_diff_eq!(*pi, 1.0, epsilon = 1e-10);
        }
        let mut rng = RngStream::new(11, 0);
        for _ in 0..50 {
            let mask = sampler.draw(&mut rng).unwrap();
            assert_eq!(mask.kept, vec![true; 3]);
        }
    }

    #[test]
    fn diagonal_kdpp_at_k1_matches_eigenvalue_ratios() {
        let kernel = NeuronKernel {
            layer: 1,
            kind: KernelKind::Covariance,
            matrix: SymMatrix::diag(&[2.0, 3.0, 5.0]),
            dead: Vec::new(),
        };
        let sampler = KdppSampler::new(1, &kernel, 1).unwrap();
        assert_abs_diff_eq!(sampler.marginals()[0], 0.2, epsilon = 1e-12);
        assert_abs_diff_eq!(sampler.marginals()[1], 0.3, epsilon = 1e-12);
        assert_abs_diff_eq!(sampler.marginals()[2], 0.5, epsilon = 1e-12);
        let mut rng = RngStream::new(12, 0);
        let draws = 100_000;
        let mut counts = vec![0usize; 3];
        for _ in 0..draws {
            let mask = sampler.draw(&mut rng).unwrap();
            assert_eq!(mask.kept_count(), 1);
            counts[mask.kept.iter().position(|&k| k).unwrap()] += 1;
        }
        for (j, &expect) in [0.2, 0.3, 0.5].iter().enumerate() {
            let freq = counts[j] as f64 / draws as f64;
            assert!((freq - expect).abs() < 0.01, "frequency {freq} vs {expect}");
        }
    }

    #[test]
    fn kdpp_subset_frequencies_and_marginals_match_enumeration() {
        let kernel = random_psd_kernel(1, 5, KernelKind::Covariance, 41);
        let k = 2;
        let n = 5;
        // exact size-k distribution by enumeration
        let mut total = 0.0;
        let mut subset_prob = vec![0.0; 1 << n];
        let mut incl = vec![0.0; n];
        for bits in 1usize..(1 << n) {
            if (bits as u32).count_ones() as usize != k {
                continue;
            }
            let idx: Vec<usize> = (0..n).filter(|&j| bits & (1 << j) != 0).collect();
            let det = determinant(submatrix(&kernel.matrix, &idx));
            subset_prob[bits] = det;
            total += det;
            for &j in &idx {
                incl[j] += det;
            }
        }
        for p in &mut subset_prob {
            *p /= total;
        }

        let sampler = KdppSampler::new(1, &kernel, k).unwrap();
        for j in 0..n {
            assert_abs_diff_eq!(sampler.marginals()[j], incl[j] / total, epsilon = 1e-10);
        }

        let mut rng = RngStream::new(13, 0);
        let draws = 200_000;
        let mut counts = vec![0usize; 1 << n];
        for _ in 0..draws {
            let mask = sampler.draw(&mut rng).unwrap();
            assert_eq!(mask.kept_count(), k);
            counts[mask_to_bits(&mask)] += 1;
        }
        let tv: f64 = subset_prob
            .iter()
            .zip(&counts)
            .map(|(&p, &c)| (p - c as f64 / draws as f64).abs())
            .sum::<f64>()
            / 2.0;
        assert!(tv <= 0.01, "total variation {tv}");
    }

    #[test]
    fn kdpp_cardinality_is_exact_across_draws() {
        let kernel = random_psd_kernel(1, 6, KernelKind::Covariance, 43);
        for k in [1usize, 3, 5] {
            let sampler = KdppSampler::new(1, &kernel, k).unwrap();
            let mut rng = RngStream::new(14, k as u64);
            for _ in 0..2_000 {
                assert_eq!(sampler.draw(&mut rng).unwrap().kept_count(), k);
            }
        }
    }

    #[test]
    fn kdpp_rejects_k_above_numerical_rank() {
        // rank-1 kernel: outer product of ones
        let kernel = kernel_from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]);
        match KdppSampler::new(1, &kernel, 2) {
            Err(Error::RankDeficient { k, rank }) => {
                assert_eq!(k, 2);
                assert_eq!(rank, 1);
            }
            other => panic!("expected RankDeficient, got {other:?}"),
        }
    }

    // ---- masks, configs, banks ----

    #[test]
    fn layer_mask_validation_rejects_bad_inputs() {
        assert!(matches!(
            LayerMask::new(1, vec![false, false], vec![0.5, 0.5]),
            Err(Error::InvalidMask(_))
        ));
        assert!(matches!(
            LayerMask::new(1, vec![true, false], vec![0.0, 0.5]),
            Err(Error::InvalidMask(_))
        ));
        assert!(matches!(
            LayerMask::new(1, vec![true], vec![0.5, 0.5]),
            Err(Error::InvalidMask(_))
        ));
        assert!(matches!(
            LayerMask::new(1, vec![true, true], vec![0.5, 1.5]),
            Err(Error::InvalidMask(_))
        ));
    }

    #[test]
    fn sampler_config_defaults_follow_the_kind() {
        assert_eq!(
            SamplerConfig::new(SamplerKind::Leverage, 0.5).effective_kernel_kind(),
            KernelKind::Correlation
        );
        assert_eq!(
            SamplerConfig::new(SamplerKind::Dpp, 0.5).effective_kernel_kind(),
            KernelKind::Correlation
        );
        assert_eq!(
            SamplerConfig::new(SamplerKind::Kdpp, 0.5).effective_kernel_kind(),
            KernelKind::Covariance
        );
        let mut cfg = SamplerConfig::new(SamplerKind::Kdpp, 0.5);
        cfg.kernel_kind = Some(KernelKind::Correlation);
        assert_eq!(cfg.effective_kernel_kind(), KernelKind::Correlation);
        assert_eq!(cfg.ridge, 1.0);
        assert_eq!(cfg.max_resample_attempts, 100);
    }

    #[test]
    fn sampler_config_validation_and_serde() {
        assert!(SamplerConfig::new(SamplerKind::Dpp, 0.0).validate().is_err());
        assert!(SamplerConfig::new(SamplerKind::Dpp, 1.0).validate().is_err());
        let mut cfg = SamplerConfig::new(SamplerKind::Leverage, 0.5);
        cfg.ridge = 0.0;
        assert!(cfg.validate().is_err());

        let parsed: SamplerConfig =
            serde_json::from_str(r#"{"kind": "kdpp", "dropout-rate": 0.25}"#).unwrap();
        assert_eq!(parsed.kind, SamplerKind::Kdpp);
        assert_eq!(parsed.ridge, DEFAULT_RIDGE);
        assert_eq!(parsed.max_resample_attempts, DEFAULT_MAX_RESAMPLE_ATTEMPTS);
        assert!(parsed.kernel_kind.is_none());
        assert!(serde_json::from_str::<SamplerConfig>(
            r#"{"kind": "kdpp", "dropout-rate": 0.25, "typo": 1}"#
        )
        .is_err());
    }

    #[test]
    fn derived_k_rounds_and_clamps() {
        let cfg = SamplerConfig::new(SamplerKind::Kdpp, 0.5);
        assert_eq!(cfg.derived_k(10), 5);
        assert_eq!(cfg.derived_k(1), 1);
        let aggressive = SamplerConfig::new(SamplerKind::Kdpp, 0.999);
        assert_eq!(aggressive.derived_k(10), 1);
        let light = SamplerConfig::new(SamplerKind::Kdpp, 0.24);
        assert_eq!(light.derived_k(10), 8); // round(7.6)
    }

    fn two_layer_spec() -> NetworkSpec {
        NetworkSpec::new(
            vec![2, 6, 5, 1],
            Activation::LeakyRelu,
            0.5,
            Task::Regression,
        )
        .unwrap()
    }

    #[test]
    fn mask_bank_has_requested_shape() {
        let spec = two_layer_spec();
        let kernels = vec![
            random_psd_kernel(1, 6, KernelKind::Correlation, 51),
            random_psd_kernel(2, 5, KernelKind::Correlation, 52),
        ];
        let config = SamplerConfig::new(SamplerKind::Dpp, 0.5);
        let bank = build_mask_bank(&spec, &kernels, &config, 100, 77).unwrap();
        assert_eq!(bank.len(), 100);
        for set in &bank.masks {
            assert_eq!(set.kind, SamplerKind::Dpp);
            assert_eq!(set.layers.len(), 2);
            assert_eq!(set.layers[0].layer, 1);
            assert_eq!(set.layers[0].len(), 6);
            assert_eq!(set.layers[1].layer, 2);
            assert_eq!(set.layers[1].len(), 5);
        }
    }

    #[test]
    fn mask_bank_is_deterministic_in_config_and_seed() {
        let spec = two_layer_spec();
        let kernels = vec![
            random_psd_kernel(1, 6, KernelKind::Covariance, 53),
            random_psd_kernel(2, 5, KernelKind::Covariance, 54),
        ];
        let config = SamplerConfig::new(SamplerKind::Kdpp, 0.5);
        let a = build_mask_bank(&spec, &kernels, &config, 40, 99).unwrap();
        let b = build_mask_bank(&spec, &kernels, &config, 40, 99).unwrap();
        assert_eq!(a, b);
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        let c = build_mask_bank(&spec, &kernels, &config, 40, 100).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn bernoulli_bank_needs_no_kernels() {
        let spec = two_layer_spec();
        let config = SamplerConfig::new(SamplerKind::Bernoulli, 0.5);
        let bank = build_mask_bank(&spec, &[], &config, 5, 1).unwrap();
        assert_eq!(bank.len(), 5);
        let again = build_mask_bank(&spec, &[], &config, 5, 1).unwrap();
        assert_eq!(bank, again);
    }

    #[test]
    fn mask_bank_rejects_mismatched_kernels() {
        let spec = two_layer_spec();
        let config = SamplerConfig::new(SamplerKind::Dpp, 0.5);
        // wrong count
        let one = vec![random_psd_kernel(1, 6, KernelKind::Correlation, 55)];
        assert!(build_mask_bank(&spec, &one, &config, 3, 1).is_err());
        // wrong layer id
        let wrong_layer = vec![
            random_psd_kernel(1, 6, KernelKind::Correlation, 55),
            random_psd_kernel(3, 5, KernelKind::Correlation, 56),
        ];
        assert!(build_mask_bank(&spec, &wrong_layer, &config, 3, 1).is_err());
        // wrong width
        let wrong_width = vec![
            random_psd_kernel(1, 6, KernelKind::Correlation, 55),
            random_psd_kernel(2, 4, KernelKind::Correlation, 56),
        ];
        assert!(build_mask_bank(&spec, &wrong_width, &config, 3, 1).is_err());
        // wrong kernel kind for the sampler
        let wrong_kind = vec![
            random_psd_kernel(1, 6, KernelKind::Covariance, 55),
            random_psd_kernel(2, 5, KernelKind::Covariance, 56),
        ];
        assert!(build_mask_bank(&spec, &wrong_kind, &config, 3, 1).is_err());
    }

    #[test]
    fn mask_bank_roundtrips_through_json() {
        let spec = two_layer_spec();
        let kernels = vec![
            random_psd_kernel(1, 6, KernelKind::Correlation, 57),
            random_psd_kernel(2, 5, KernelKind::Correlation, 58),
        ];
        let config = SamplerConfig::new(SamplerKind::Leverage, 0.5);
        let bank = build_mask_bank(&spec, &kernels, &config, 7, 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bank.json");
        bank.save_json(&path).unwrap();
        let back = MaskBank::load_json(&path).unwrap();
        assert_eq!(bank, back);
        assert_eq!(back.provenance.seed, 5);
        assert_eq!(back.provenance.config.kind, SamplerKind::Leverage);
    }
}
