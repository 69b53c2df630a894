//! Similarity metrics, temperature, and the pairwise similarity kernel
//! shared by the soft nearest neighbor and the correspondence loss.

use crate::error::{CoreError, Result};
use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

/// Numerical floor used when normalizing vectors for cosine similarity.
pub const COSINE_NORM_EPS: f64 = 1e-12;

/// Similarity between two embeddings. All variants are symmetric:
/// `s(u, v) == s(v, u)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimilarityMetric {
    /// Dot product of L2-normalized vectors. Requires nonzero rows.
    Cosine,
    /// `-||u - v||`
    NegativeEuclidean,
    /// `-||u - v||^2`
    NegativeSquaredEuclidean,
}

impl SimilarityMetric {
    /// Default temperature for this metric: 1.0 for the Euclidean family,
    /// 0.1 for cosine.
    pub fn default_temperature(self) -> Temperature {
        match self {
            SimilarityMetric::Cosine => Temperature::new(0.1).unwrap(),
            _ => Temperature::new(1.0).unwrap(),
        }
    }
}

/// Softmax temperature; strictly positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Temperature(f64);

impl Temperature {
    pub fn new(tau: f64) -> Result<Self> {
        if !(tau.is_finite() && tau > 0.0) {
            return Err(CoreError::Domain(format!(
                "temperature must be finite and > 0, got {tau}"
            )));
        }
        Ok(Temperature(tau))
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

/// The scale in embedding space below which the loss treats two embeddings
/// as indistinguishable: `tau` for negative Euclidean distance, `sqrt(tau)`
/// for negative squared Euclidean distance, and `tau` (an angular scale)
/// for cosine similarity.
pub fn characteristic_scale(metric: SimilarityMetric, tau: Temperature) -> f64 {
    match metric {
        SimilarityMetric::NegativeEuclidean => tau.get(),
        SimilarityMetric::NegativeSquaredEuclidean => tau.get().sqrt(),
        SimilarityMetric::Cosine => tau.get(),
    }
}

/// A set of embeddings, one row per set element. Row order is aligned with
/// the originating `SetBatch`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingSet {
    matrix: Array2<f64>,
}

impl EmbeddingSet {
    /// Validates finiteness and non-degenerate shape (n >= 1, dim >= 1).
    pub fn new(matrix: Array2<f64>) -> Result<Self> {
        if matrix.nrows() == 0 || matrix.ncols() == 0 {
            return Err(CoreError::Contract(format!(
                "embedding set must be at least 1x1, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        if !matrix.iter().all(|v| v.is_finite()) {
            return Err(CoreError::Numerical(
                "embedding set contains non-finite entries".to_string(),
            ));
        }
        Ok(EmbeddingSet { matrix })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(CoreError::Contract("no embedding rows".to_string()));
        }
        let dim = rows[0].len();
        if rows.iter().any(|r| r.len() != dim) {
            return Err(CoreError::Contract("ragged embedding rows".to_string()));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let matrix = Array2::from_shape_vec((rows.len(), dim), flat)
            .map_err(|e| CoreError::Contract(e.to_string()))?;
        Self::new(matrix)
    }

    pub fn len(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.matrix.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.matrix
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.matrix.row(i)
    }

    pub fn into_matrix(self) -> Array2<f64> {
        self.matrix
    }
}

/// Similarity of a single pair under `metric`.
///
/// For cosine, rows are L2-normalized internally; zero rows are a domain
/// error and must be rejected by the caller (see [`pairwise_similarity`]).
pub fn similarity(u: ArrayView1<'_, f64>, v: ArrayView1<'_, f64>, metric: SimilarityMetric) -> f64 {
    match metric {
        SimilarityMetric::Cosine => {
            let nu = l2_norm(u).max(COSINE_NORM_EPS);
            let nv = l2_norm(v).max(COSINE_NORM_EPS);
            u.dot(&v) / (nu * nv)
        }
        SimilarityMetric::NegativeEuclidean => -euclidean_distance(u, v),
        SimilarityMetric::NegativeSquaredEuclidean => {
            let d = euclidean_distance(u, v);
            -(d * d)
        }
    }
}

/// Gradient of `s(u, v)` with respect to `u` and `v`.
///
/// Negative Euclidean distance is not differentiable at `u == v`; the
/// distance is floored at `eps` there, matching the forward pass convention
/// used for gradients only (the forward value itself is exact).
pub fn similarity_grad(
    u: ArrayView1<'_, f64>,
    v: ArrayView1<'_, f64>,
    metric: SimilarityMetric,
) -> (Array1<f64>, Array1<f64>) {
    match metric {
        SimilarityMetric::Cosine => {
            let nu = l2_norm(u).max(COSINE_NORM_EPS);
            let nv = l2_norm(v).max(COSINE_NORM_EPS);
            let uh = u.mapv(|x| x / nu);
            let vh = v.mapv(|x| x / nv);
            let s = uh.dot(&vh);
            let du = (&vh - &(&uh * s)) / nu;
            let dv = (&uh - &(&vh * s)) / nv;
            (du, dv)
        }
        SimilarityMetric::NegativeEuclidean => {
            let diff = &u.to_owned() - &v;
            let d = l2_norm(diff.view()).max(1e-12);
            let du = diff.mapv(|x| -x / d);
            let dv = diff.mapv(|x| x / d);
            (du, dv)
        }
        SimilarityMetric::NegativeSquaredEuclidean => {
            let diff = &u.to_owned() - &v;
            let du = diff.mapv(|x| -2.0 * x);
            let dv = diff.mapv(|x| 2.0 * x);
            (du, dv)
        }
    }
}

/// Entry `(i, j)` is `s(u_i, v_j)`. `pairwise_similarity(V, U)` is the
/// transpose of `pairwise_similarity(U, V)`.
pub fn pairwise_similarity(
    u: &EmbeddingSet,
    v: &EmbeddingSet,
    metric: SimilarityMetric,
) -> Result<Array2<f64>> {
    if u.dim() != v.dim() {
        return Err(CoreError::Contract(format!(
            "embedding dimensions differ: {} vs {}",
            u.dim(),
            v.dim()
        )));
    }
    if metric == SimilarityMetric::Cosine {
        reject_zero_rows(u)?;
        reject_zero_rows(v)?;
    }
    let mut out = Array2::zeros((u.len(), v.len()));
    for i in 0..u.len() {
        for j in 0..v.len() {
            out[[i, j]] = similarity(u.row(i), v.row(j), metric);
        }
    }
    Ok(out)
}

fn reject_zero_rows(set: &EmbeddingSet) -> Result<()> {
    for (i, row) in set.matrix().rows().into_iter().enumerate() {
        if l2_norm(row) < COSINE_NORM_EPS {
            return Err(CoreError::Domain(format!(
                "cosine similarity is undefined for the zero vector (row {i})"
            )));
        }
    }
    Ok(())
}

fn l2_norm(v: ArrayView1<'_, f64>) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn euclidean_distance(u: ArrayView1<'_, f64>, v: ArrayView1<'_, f64>) -> f64 {
    u.iter()
        .zip(v.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}
