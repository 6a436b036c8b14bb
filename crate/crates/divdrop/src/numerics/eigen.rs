//! Cyclic Jacobi eigendecomposition for dense symmetric matrices.
//!
//! Jacobi rotations are slower than tridiagonalization-based solvers but
//! essentially foolproof and accurate to machine precision, which is what
//! the determinant ratios downstream need. Layer widths here stay at or
//! below about a thousand, where the O(n³)-per-sweep cost is acceptable.

use super::{Matrix, SymMatrix};
use crate::error::Result;

const MAX_SWEEPS: usize = 64;

/// Eigenpairs of a symmetric matrix: eigenvalues ascending, eigenvectors as
/// orthonormal columns aligned with them.
#[derive(Debug, Clone)]
pub struct EigenDecomposition {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: Matrix,
}

impl EigenDecomposition {
    pub fn n(&self) -> usize {
        self.eigenvalues.len()
    }
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues in ascending order. Errors with `InvalidMatrix`
/// if the input has non-finite entries.
pub fn eigh(a: &SymMatrix) -> Result<EigenDecomposition> {
    a.ensure_finite()?;
    let n = a.n();
    let mut m: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| a[(i, j)]).collect()).collect();
    let mut v = Matrix::identity(n);

    let scale = a.max_abs();
    if scale == 0.0 || n == 1 {
        let eigenvalues = (0..n).map(|i| m[i][i]).collect();
        return Ok(EigenDecomposition { eigenvalues, eigenvectors: v });
    }
    let tol = 1e-14 * scale;

    for _ in 0..MAX_SWEEPS {
        let mut off = 0.0f64;
        for p in 0..n {
            for q in (p + 1)..n {
                off = off.max(m[p][q].abs());
            }
        }
        if off <= tol {
            break;
        }
        for p in 0..(n - 1) {
            for q in (p + 1)..n {
                let apq = m[p][q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * apq);
                let t = if theta.abs() > 1e15 {
                    // avoid overflow in theta^2; limit of the closed form
                    0.5 / theta
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                let tau = s / (1.0 + c);

                m[p][p] -= t * apq;
                m[q][q] += t * apq;
                m[p][q] = 0.0;
                m[q][p] = 0.0;
                for r in 0..n {
                    if r == p || r == q {
                        continue;
                    }
                    let arp = m[r][p];
                    let arq = m[r][q];
                    m[r][p] = arp - s * (arq + tau * arp);
                    m[p][r] = m[r][p];
                    m[r][q] = arq + s * (arp - tau * arq);
                    m[q][r] = m[r][q];
                }
                for r in 0..n {
                    let vrp = v[(r, p)];
                    let vrq = v[(r, q)];
                    v[(r, p)] = vrp - s * (vrq + tau * vrp);
                    v[(r, q)] = vrq + s * (vrp - tau * vrq);
                }
            }
        }
    }

    // sort ascending, carrying the eigenvector columns along
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[i][i].partial_cmp(&m[j][j]).unwrap());
    let eigenvalues: Vec<f64> = order.iter().map(|&i| m[i][i]).collect();
    let eigenvectors = v.select_columns(&order);

    Ok(EigenDecomposition { eigenvalues, eigenvectors })
}

/// Clip the spectrum of `a` at `floor` (eigenvalues below it are raised to
/// it) and reconstruct. Inputs already satisfying the floor are returned
/// unchanged.
pub fn project_psd(a: &SymMatrix, floor: f64) -> SymMatrix {
    assert!(floor >= 0.0, "floor must be non-negative");
    let dec = eigh(a).expect("project_psd requires a finite matrix");
    if dec.eigenvalues.iter().all(|&l| l >= floor) {
        return a.clone();
    }
    let n = a.n();
    let v = &dec.eigenvectors;
    SymMatrix::from_fn(n, |i, j| {
        (0..n).map(|k| v[(i, k)] * dec.eigenvalues[k].max(floor) * v[(j, k)]).sum()
    })
}
