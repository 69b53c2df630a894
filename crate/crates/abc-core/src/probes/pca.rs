//! Principal component analysis via covariance eigendecomposition, using
//! an in-crate cyclic Jacobi eigensolver (the matrices here are at most
//! embedding-dimension sized).

use crate::error::{CoreError, Result};
use ndarray::{Array1, Array2};

/// Fitted principal components, sorted by decreasing eigenvalue.
#[derive(Debug, Clone)]
pub struct Pca {
    pub mean: Array1<f64>,
    /// One row per component.
    pub components: Array2<f64>,
    pub eigenvalues: Array1<f64>,
    /// Eigenvalue fractions of the total variance; sums to one.
    pub variance_fractions: Array1<f64>,
}

impl Pca {
    /// Fits on rows of `data`, keeping `k` components.
    pub fn fit(data: &Array2<f64>, k: usize) -> Result<Pca> {
        let (n, d) = data.dim();
        if n == 0 || d == 0 {
            return Err(CoreError::Contract("empty data matrix".to_string()));
        }
        let k = k.min(d);
        let mean = data.mean_axis(ndarray::Axis(0)).expect("n > 0");
        let centered = data - &mean;
        let cov = centered.t().dot(&centered) / (n as f64).max(1.0);
        let (eigenvalues, eigenvectors) = symmetric_eigen(&cov);

        // Sort descending by eigenvalue.
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| eigenvalues[b].partial_cmp(&eigenvalues[a]).unwrap());
        let clamped: Vec<f64> = order.iter().map(|&i| eigenvalues[i].max(0.0)).collect();
        let total: f64 = clamped.iter().sum();
        let fractions: Vec<f64> = if total > 0.0 {
            clamped.iter().map(|v| v / total).collect()
        } else {
            // Degenerate data (all rows identical): flat spectrum.
            vec![1.0 / d as f64; d]
        };
        let mut components = Array2::zeros((k, d));
        for (row, &i) in order.iter().take(k).enumerate() {
            for j in 0..d {
                components[[row, j]] = eigenvectors[[j, i]];
            }
        }
        Ok(Pca {
            mean,
            components,
            eigenvalues: Array1::from_vec(clamped),
            variance_fractions: Array1::from_vec(fractions),
        })
    }

    /// Projects rows onto the kept components.
    pub fn project(&self, data: &Array2<f64>) -> Array2<f64> {
        let centered = data - &self.mean;
        centered.dot(&self.components.t())
    }
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. Returns
/// `(eigenvalues, eigenvectors)` with eigenvectors in columns.
pub fn symmetric_eigen(matrix: &Array2<f64>) -> (Array1<f64>, Array2<f64>) {
    let n = matrix.nrows();
    let mut a = matrix.clone();
    let mut v: Array2<f64> = Array2::eye(n);
    let max_sweeps = 64;
    for _ in 0..max_sweeps {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += a[[p, q]] * a[[p, q]];
            }
        }
        if off.sqrt() < 1e-14 * (1.0 + a.diag().mapv(f64::abs).sum()) {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[[p, q]];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let app = a[[p, p]];
                let aqq = a[[q, q]];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[[k, p]];
                    let akq = a[[k, q]];
                    a[[k, p]] = c * akp - s * akq;
                    a[[k, q]] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[[p, k]];
                    let aqk = a[[q, k]];
                    a[[p, k]] = c * apk - s * aqk;
                    a[[q, k]] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }
    (a.diag().to_owned(), v)
}
