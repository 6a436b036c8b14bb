//! Neuron-similarity kernels: capture hidden-layer activations on a
//! calibration set and estimate the per-layer correlation (or covariance)
//! matrix that drives the diversity-aware mask samplers.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::NetworkWeights;
use crate::numerics::{project_psd, Matrix, SymMatrix};

/// Neurons whose standard deviation falls below this fraction of the layer
/// maximum are treated as dead (constant output on the calibration set).
pub const DEAD_NEURON_RELATIVE_THRESHOLD: f64 = 1e-8;

/// Which second-moment summary of the activations to use as the kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelKind {
    Correlation,
    Covariance,
}

/// Post-nonlinearity activations of one hidden layer: one row per
/// calibration point, one column per neuron.
#[derive(Debug, Clone)]
pub struct ActivationSample {
    /// Hidden layer id `h` (1-based, matching `NetworkSpec.dropout_layers`).
    pub layer: usize,
    pub rows: Matrix,
}

/// Estimated similarity kernel of one hidden layer's neurons.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuronKernel {
    pub layer: usize,
    pub kind: KernelKind,
    pub matrix: SymMatrix,
    /// Indices of dead neurons; their rows were replaced by identity rows so
    /// they stay samplable.
    pub dead: Vec<usize>,
}

/// Run the network deterministically over the calibration inputs and record
/// the activations of hidden layer `layer`.
pub fn capture_activations(
    net: &NetworkWeights,
    calibration: &[Vec<f64>],
    layer: usize,
) -> Result<ActivationSample> {
    if calibration.is_empty() {
        return Err(Error::EmptyCalibration);
    }
    if !net.spec.dropout_layers.contains(&layer) {
        return Err(Error::ConfigError(format!(
            "layer {layer} carries no dropout; kernels are only needed for dropout layers"
        )));
    }
    let width = net.spec.widths[layer];
    let mut rows = Matrix::zeros(calibration.len(), width);
    for (i, x) in calibration.iter().enumerate() {
        let hidden = net.hidden_activations(x)?;
        // hidden[0] is layer 1
        let o = &hidden[layer - 1];
        for (j, &v) in o.iter().enumerate() {
            rows[(i, j)] = v;
        }
    }
    if !(0..rows.rows()).all(|i| rows.row(i).iter().all(|v| v.is_finite())) {
        return Err(Error::InvalidMatrix);
    }
    Ok(ActivationSample { layer, rows })
}

/// Estimate the correlation or covariance kernel from captured activations.
///
/// Uses the unbiased divisor `n - 1`. Dead neurons (std below
/// [`DEAD_NEURON_RELATIVE_THRESHOLD`] of the layer maximum) get an identity
/// row. The result is projected onto the PSD cone to shed rounding noise.
pub fn estimate_kernel(sample: &ActivationSample, kind: KernelKind) -> Result<NeuronKernel> {
    let n = sample.rows.rows();
    let d = sample.rows.cols();
    if n < 2 {
        return Err(Error::DegenerateKernel(format!(
            "kernel estimation needs at least 2 calibration rows, got {n}"
        )));
    }
    let mut means = vec![0.0; d];
    for i in 0..n {
        for j in 0..d {
            means[j] += sample.rows[(i, j)];
        }
    }
    for m in &mut means {
        *m /= n as f64;
    }
    // covariance with divisor n-1
    let mut cov = SymMatrix::zeros(d);
    for j in 0..d {
        for l in j..d {
            let mut acc = 0.0;
            for i in 0..n {
                acc += (sample.rows[(i, j)] - means[j]) * (sample.rows[(i, l)] - means[l]);
            }
            cov.set(j, l, acc / (n - 1) as f64);
        }
    }
    let stds: Vec<f64> = (0..d).map(|j| cov[(j, j)].max(0.0).sqrt()).collect();
    let max_std = stds.iter().cloned().fold(0.0f64, f64::max);
    if max_std == 0.0 {
        return Err(Error::DegenerateKernel(
            "every neuron is constant on the calibration set".into(),
        ));
    }
    let dead: Vec<usize> = (0..d)
        .filter(|&j| stds[j] < DEAD_NEURON_RELATIVE_THRESHOLD * max_std)
        .collect();
    let is_dead = |j: usize| stds[j] < DEAD_NEURON_RELATIVE_THRESHOLD * max_std;

    let mut matrix = SymMatrix::zeros(d);
    for j in 0..d {
        for l in j..d {
            let value = if is_dead(j) || is_dead(l) {
                // identity row keeps dead neurons samplable
                if j == l {
                    1.0
                } else {
                    0.0
                }
            } else {
                match kind {
                    KernelKind::Covariance => cov[(j, l)],
                    KernelKind::Correlation => {
                        if j == l {
                            1.0
                        } else {
                            (cov[(j, l)] / (stds[j] * stds[l])).clamp(-1.0, 1.0)
                        }
                    }
                }
            };
            matrix.set(j, l, value);
        }
    }
    matrix.ensure_finite()?;
    let matrix = project_psd(&matrix, 0.0);
    Ok(NeuronKernel { layer: sample.layer, kind, matrix, dead })
}

impl NeuronKernel {
    pub fn size(&self) -> usize {
        self.matrix.n()
    }

    /// Write the kernel as a square CSV matrix (no header). Values use the
    /// shortest decimal form that round-trips, so export/import is lossless.
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut writer = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
        let n = self.size();
        for i in 0..n {
            let row: Vec<String> = (0..n).map(|j| self.matrix[(i, j)].to_string()).collect();
            writer.write_record(&row)?;
        }
        writer.flush()?;
        Ok(())
    }

    /// Read a kernel back from a square CSV matrix. The dead-neuron set is
    /// not part of the CSV format; it comes back empty.
    pub fn load_csv(path: &Path, layer: usize, kind: KernelKind) -> Result<NeuronKernel> {
        let mut reader = csv::ReaderBuilder::new().has_headers(false).from_path(path)?;
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (i, record) in reader.records().enumerate() {
            let record = record.map_err(|e| Error::IngestError {
                location: format!("{}:{}", path.display(), i + 1),
                message: e.to_string(),
            })?;
            let row: Vec<f64> = record
                .iter()
                .enumerate()
                .map(|(j, field)| {
                    field.trim().parse::<f64>().map_err(|e| Error::IngestError {
                        location: format!("{}:{}:{}", path.display(), i + 1, j + 1),
                        message: e.to_string(),
                    })
                })
                .collect::<Result<_>>()?;
            rows.push(row);
        }
        if rows.is_empty() {
            return Err(Error::IngestError {
                location: path.display().to_string(),
                message: "empty kernel file".into(),
            });
        }
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::IngestError {
                location: path.display().to_string(),
                message: "kernel matrix is not square".into(),
            });
        }
        let matrix = SymMatrix::from_rows(&rows);
        matrix.ensure_finite()?;
        Ok(NeuronKernel { layer, kind, matrix, dead: Vec::new() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{Activation, NetworkSpec, Task};
    use crate::numerics::{eigh, RngStream};
    use approx::assert_abs_diff_eq;

    fn sample_from_rows(rows: Vec<Vec<f64>>) -> ActivationSample {
        let n = rows.len();
        let d = rows[0].len();
        let mut m = Matrix::zeros(n, d);
        for (i, row) in rows.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                m[(i, j)] = v;
            }
        }
        ActivationSample { layer: 1, rows: m }
    }

    fn random_net(widths: Vec<usize>, seed: u64) -> NetworkWeights {
        let spec =
            NetworkSpec::new(widths, Activation::LeakyRelu, 0.3, Task::Regression).unwrap();
        let mut rng = RngStream::new(seed, 0);
        let mut net = NetworkWeights::zeros(spec);
        for layer in &mut net.layers {
            for w in &mut layer.weights {
                *w = rng.next_normal() * 0.7;
            }
            for b in &mut layer.bias {
                *b = rng.next_normal() * 0.1;
            }
        }
        net
    }

    #[test]
    fn capture_single_point_gives_single_row() {
        let net = random_net(vec![2, 3, 1], 1);
        let sample = capture_activations(&net, &[vec![0.4, -1.2]], 1).unwrap();
        assert_eq!(sample.rows.rows(), 1);
        assert_eq!(sample.rows.cols(), 3);
    }

    #[test]
    fn capture_of_positive_preactivations_is_affine() {
        // With positive pre-activations the leaky ReLU is the identity, so
        // the layer-1 activations are exactly Wx + b.
        let mut net = NetworkWeights::zeros(
            NetworkSpec::new(vec![2, 2, 1], Activation::LeakyRelu, 0.3, Task::Regression)
                .unwrap(),
        );
        net.layers[0].weights = vec![1.0, 2.0, 3.0, -1.0];
        net.layers[0].bias = vec![10.0, 10.0];
        let x = vec![0.5, 1.5];
        let sample = capture_activations(&net, std::slice::from_ref(&x), 1).unwrap();
        // row = [1*0.5 + 2*1.5 + 10, 3*0.5 - 1*1.5 + 10]
        assert_abs_diff_eq!(sample.rows[(0, 0)], 13.5, epsilon = 1e-12);
        assert_abs_diff_eq!(sample.rows[(0, 1)], 10.0, epsilon = 1e-12);
    }

    #[test]
    fn capture_rows_match_per_point_forwards() {
        let net = random_net(vec![3, 5, 4, 2], 9);
        let mut rng = RngStream::new(2, 0);
        let points: Vec<Vec<f64>> =
            (0..50).map(|_| (0..3).map(|_| rng.next_normal()).collect()).collect();
        for layer in [1usize, 2] {
            let sample = capture_activations(&net, &points, layer).unwrap();
            for (i, x) in points.iter().enumerate() {
                let oracle = net.hidden_activations(x).unwrap()[layer - 1].clone();
                for (j, &v) in oracle.iter().enumerate() {
                    assert_abs_diff_eq!(sample.rows[(i, j)], v, epsilon = 0.0);
                }
            }
        }
    }

    #[test]
    fn capture_rejects_empty_calibration() {
        let net = random_net(vec![2, 3, 1], 1);
        assert!(matches!(
            capture_activations(&net, &[], 1),
            Err(Error::EmptyCalibration)
        ));
    }

    #[test]
    fn capture_rejects_non_dropout_layer() {
        let net = random_net(vec![2, 3, 1], 1);
        assert!(capture_activations(&net, &[vec![0.0, 0.0]], 2).is_err());
    }

    #[test]
    fn duplicated_neurons_correlate_perfectly() {
        let mut rng = RngStream::new(3, 0);
        let rows: Vec<Vec<f64>> = (0..30)
            .map(|_| {
                let v = rng.next_normal();
                vec![v, v, rng.next_normal()]
            })
            .collect();
        let kernel = estimate_kernel(&sample_from_rows(rows), KernelKind::Correlation).unwrap();
        assert_abs_diff_eq!(kernel.matrix[(0, 1)], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(kernel.matrix[(0, 0)], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn constant_neuron_is_dead_with_identity_row() {
        let mut rng = RngStream::new(4, 0);
        let rows: Vec<Vec<f64>> = (0..25)
            .map(|_| vec![rng.next_normal(), 7.25, rng.next_normal()])
            .collect();
        let kernel = estimate_kernel(&sample_from_rows(rows), KernelKind::Correlation).unwrap();
        assert_eq!(kernel.dead, vec![1]);
        assert_abs_diff_eq!(kernel.matrix[(1, 1)], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(kernel.matrix[(0, 1)], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(kernel.matrix[(2, 1)], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn all_dead_neurons_are_rejected() {
        let rows: Vec<Vec<f64>> = (0..10).map(|_| vec![1.0, -2.0]).collect();
        assert!(matches!(
            estimate_kernel(&sample_from_rows(rows), KernelKind::Correlation),
            Err(Error::DegenerateKernel(_))
        ));
    }

    #[test]
    fn single_row_is_rejected() {
        let rows = vec![vec![1.0, 2.0]];
        assert!(matches!(
            estimate_kernel(&sample_from_rows(rows), KernelKind::Covariance),
            Err(Error::DegenerateKernel(_))
        ));
    }

    #[test]
    fn correlation_matches_direct_formula() {
        let mut rng = RngStream::new(5, 0);
        let rows: Vec<Vec<f64>> = (0..100)
            .map(|_| (0..5).map(|_| rng.next_normal() * 2.0 + 0.3).collect())
            .collect();
        let kernel =
            estimate_kernel(&sample_from_rows(rows.clone()), KernelKind::Correlation).unwrap();
        let n = rows.len() as f64;
        for a in 0..5 {
            for b in 0..5 {
                let ma: f64 = rows.iter().map(|r| r[a]).sum::<f64>() / n;
                let mb: f64 = rows.iter().map(|r| r[b]).sum::<f64>() / n;
                let cov: f64 = rows.iter().map(|r| (r[a] - ma) * (r[b] - mb)).sum::<f64>()
                    / (n - 1.0);
                let sa: f64 = (rows.iter().map(|r| (r[a] - ma).powi(2)).sum::<f64>()
                    / (n - 1.0))
                    .sqrt();
                let sb: f64 = (rows.iter().map(|r| (r[b] - mb).powi(2)).sum::<f64>()
                    / (n - 1.0))
                    .sqrt();
                assert_abs_diff_eq!(kernel.matrix[(a, b)], cov / (sa * sb), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn covariance_matches_direct_formula() {
        let mut rng = RngStream::new(6, 0);
        let rows: Vec<Vec<f64>> = (0..60)
            .map(|_| (0..4).map(|_| rng.next_normal() * 1.5).collect())
            .collect();
        let kernel =
            estimate_kernel(&sample_from_rows(rows.clone()), KernelKind::Covariance).unwrap();
        let n = rows.len() as f64;
        for a in 0..4 {
            for b in 0..4 {
                let ma: f64 = rows.iter().map(|r| r[a]).sum::<f64>() / n;
                let mb: f64 = rows.iter().map(|r| r[b]).sum::<f64>() / n;
                let cov: f64 = rows.iter().map(|r| (r[a] - ma) * (r[b] - mb)).sum::<f64>()
                    / (n - 1.0);
                assert_abs_diff_eq!(kernel.matrix[(a, b)], cov, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn correlation_is_invariant_to_positive_affine_rescaling() {
        let mut rng = RngStream::new(7, 0);
        let rows: Vec<Vec<f64>> = (0..80)
            .map(|_| (0..4).map(|_| rng.next_normal()).collect())
            .collect();
        let scales = [2.5, 0.03, 11.0, 0.7];
        let shifts = [-4.0, 0.5, 100.0, 0.0];
        let rescaled: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| r.iter().enumerate().map(|(j, &v)| v * scales[j] + shifts[j]).collect())
            .collect();
        let base = estimate_kernel(&sample_from_rows(rows), KernelKind::Correlation).unwrap();
        let other =
            estimate_kernel(&sample_from_rows(rescaled), KernelKind::Correlation).unwrap();
        let mut max_diff = 0.0f64;
        for a in 0..4 {
            for b in 0..4 {
                max_diff = max_diff.max((base.matrix[(a, b)] - other.matrix[(a, b)]).abs());
            }
        }
        assert!(max_diff <= 1e-10, "correlation moved by {max_diff} under rescaling");
    }

    #[test]
    fn covariance_scales_quadratically() {
        let mut rng = RngStream::new(8, 0);
        let rows: Vec<Vec<f64>> = (0..70)
            .map(|_| (0..3).map(|_| rng.next_normal() + 1.0).collect())
            .collect();
        let c = 3.5;
        let scaled: Vec<Vec<f64>> =
            rows.iter().map(|r| r.iter().map(|&v| v * c).collect()).collect();
        let base = estimate_kernel(&sample_from_rows(rows), KernelKind::Covariance).unwrap();
        let other = estimate_kernel(&sample_from_rows(scaled), KernelKind::Covariance).unwrap();
        for a in 0..3 {
            for b in 0..3 {
                let expect = base.matrix[(a, b)] * c * c;
                let rel = (other.matrix[(a, b)] - expect).abs() / expect.abs().max(1e-300);
                assert!(rel <= 1e-10, "entry ({a},{b}) off by relative {rel}");
            }
        }
    }

    #[test]
    fn kernels_are_psd_even_when_rank_deficient() {
        // more neurons than rows forces exact rank deficiency
        let mut rng = RngStream::new(9, 0);
        let rows: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..6).map(|_| rng.next_normal()).collect())
            .collect();
        for kind in [KernelKind::Correlation, KernelKind::Covariance] {
            let kernel = estimate_kernel(&sample_from_rows(rows.clone()), kind).unwrap();
            let eig = eigh(&kernel.matrix).unwrap();
            let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
            assert!(min >= -1e-12, "min eigenvalue {min} after repair");
        }
    }

    #[test]
    fn csv_roundtrip_is_lossless() {
        let mut rng = RngStream::new(10, 0);
        let rows: Vec<Vec<f64>> = (0..40)
            .map(|_| (0..5).map(|_| rng.next_normal()).collect())
            .collect();
        let kernel = estimate_kernel(&sample_from_rows(rows), KernelKind::Correlation).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("kernel.csv");
        kernel.save_csv(&path).unwrap();
        let back = NeuronKernel::load_csv(&path, kernel.layer, kernel.kind).unwrap();
        assert_eq!(kernel.matrix, back.matrix);
    }

    #[test]
    fn csv_import_rejects_ragged_matrices() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "1.0,0.5\n0.5\n").unwrap();
        assert!(matches!(
            NeuronKernel::load_csv(&path, 1, KernelKind::Correlation),
            Err(Error::IngestError { .. })
        ));
    }
}
