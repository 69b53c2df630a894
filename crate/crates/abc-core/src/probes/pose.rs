//! Pose evaluation: nearest-neighbor lookup into a codebook of embeddings
//! with known rotations, geodesic angular error, and error summaries
//! (median plus accuracy at thresholds), including the averaged
//! random-codebook protocol.

use crate::error::{CoreError, Result};
use crate::metric::{similarity, SimilarityMetric};
use ndarray::{Array1, ArrayView1};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// A unit quaternion `(w, x, y, z)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quaternion(pub [f64; 4]);

impl Quaternion {
    /// Validates unit norm within 1e-6.
    pub fn new(q: [f64; 4]) -> Result<Self> {
        let norm = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
        if (norm - 1.0).abs() > 1e-6 {
            return Err(CoreError::Domain(format!(
                "quaternion norm {norm} is not 1 within 1e-6"
            )));
        }
        Ok(Quaternion(q))
    }

    /// Rotation by `degrees` about the z axis (planar rotation).
    pub fn from_planar_degrees(degrees: f64) -> Self {
        let half = degrees.to_radians() / 2.0;
        Quaternion([half.cos(), 0.0, 0.0, half.sin()])
    }

    pub fn dot(&self, other: &Quaternion) -> f64 {
        self.0.iter().zip(other.0.iter()).map(|(a, b)| a * b).sum()
    }
}

/// Minimal rotation angle between two orientations, in degrees in
/// `[0, 180]`: `2 * arccos(|<q1, q2>|) * 180 / pi`. Invariant under the
/// quaternion double cover (`q` and `-q` are the same rotation).
pub fn geodesic_error(q1: &Quaternion, q2: &Quaternion) -> Result<f64> {
    for q in [q1, q2] {
        let norm = (q.0.iter().map(|v| v * v).sum::<f64>()).sqrt();
        if (norm - 1.0).abs() > 1e-6 {
            return Err(CoreError::Domain(format!(
                "quaternion norm {norm} is not 1 within 1e-6"
            )));
        }
    }
    let d = q1.dot(q2).abs().min(1.0);
    Ok(2.0 * d.acos().to_degrees())
}

/// Reference embeddings with ground-truth rotations.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Codebook {
    pub entries: Vec<CodebookEntry>,
    pub metric: SimilarityMetric,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CodebookEntry {
    pub embedding: Array1<f64>,
    pub rotation: Quaternion,
}

impl Codebook {
    pub fn new(entries: Vec<CodebookEntry>, metric: SimilarityMetric) -> Result<Self> {
        if entries.is_empty() {
            return Err(CoreError::Contract("empty codebook".to_string()));
        }
        let dim = entries[0].embedding.len();
        for (i, entry) in entries.iter().enumerate() {
            if entry.embedding.len() != dim {
                return Err(CoreError::Contract(format!(
                    "codebook entry {i} has dimension {}, expected {dim}",
                    entry.embedding.len()
                )));
            }
            Quaternion::new(entry.rotation.0)?;
        }
        Ok(Codebook { entries, metric })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Hard nearest-neighbor lookup: the rotation of the most similar entry,
/// ties broken toward the lowest index.
pub fn codebook_lookup(query: ArrayView1<'_, f64>, codebook: &Codebook) -> Result<Quaternion> {
    if codebook.is_empty() {
        return Err(CoreError::Contract("empty codebook".to_string()));
    }
    let mut best = 0usize;
    let mut best_sim = f64::NEG_INFINITY;
    for (i, entry) in codebook.entries.iter().enumerate() {
        let s = similarity(query, entry.embedding.view(), codebook.metric);
        if s > best_sim {
            best_sim = s;
            best = i;
        }
    }
    Ok(codebook.entries[best].rotation)
}

/// Median error (midpoint convention for even counts) and the fraction of
/// errors strictly below each threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorSummary {
    pub median_degrees: f64,
    /// `(threshold, fraction strictly below)` in the input threshold order.
    pub accuracies: Vec<(f64, f64)>,
    pub count: usize,
}

pub fn summarize_errors(errors: &[f64], thresholds: &[f64]) -> Result<ErrorSummary> {
    if errors.is_empty() {
        return Err(CoreError::Contract("empty error list".to_string()));
    }
    let mut sorted = errors.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    };
    let accuracies = thresholds
        .iter()
        .map(|&t| {
            let below = sorted.iter().filter(|&&e| e < t).count();
            (t, below as f64 / n as f64)
        })
        .collect();
    Ok(ErrorSummary {
        median_degrees: median,
        accuracies,
        count: n,
    })
}

/// The averaged random-codebook protocol: draws `n_codebooks` codebooks of
/// `codebook_size` entries (without replacement) from an entry pool, runs
/// every query against each, and reports per-codebook summaries plus their
/// mean (elementwise over median and accuracies).
pub fn average_over_codebooks(
    pool: &[CodebookEntry],
    metric: SimilarityMetric,
    queries: &[(Array1<f64>, Quaternion)],
    codebook_size: usize,
    n_codebooks: usize,
    thresholds: &[f64],
    rng: &mut ChaCha8Rng,
) -> Result<(ErrorSummary, Vec<ErrorSummary>)> {
    if pool.len() < codebook_size {
        return Err(CoreError::Contract(format!(
            "pool of {} entries cannot fill a codebook of {codebook_size}",
            pool.len()
        )));
    }
    if queries.is_empty() {
        return Err(CoreError::Contract("no queries".to_string()));
    }
    let mut summaries = Vec::with_capacity(n_codebooks);
    for _ in 0..n_codebooks {
        let mut indices: Vec<usize> = (0..pool.len()).collect();
        indices.shuffle(rng);
        indices.truncate(codebook_size);
        let entries: Vec<CodebookEntry> = indices.into_iter().map(|i| pool[i].clone()).collect();
        let codebook = Codebook::new(entries, metric)?;
        let errors: Vec<f64> = queries
            .iter()
            .map(|(embedding, truth)| {
                let estimate = codebook_lookup(embedding.view(), &codebook)?;
                geodesic_error(&estimate, truth)
            })
            .collect::<Result<_>>()?;
        summaries.push(summarize_errors(&errors, thresholds)?);
    }
    let k = summaries.len() as f64;
    let mean = ErrorSummary {
        median_degrees: summaries.iter().map(|s| s.median_degrees).sum::<f64>() / k,
        accuracies: thresholds
            .iter()
            .enumerate()
            .map(|(j, &t)| {
                (
                    t,
                    summaries.iter().map(|s| s.accuracies[j].1).sum::<f64>() / k,
                )
            })
            .collect(),
        count: summaries.iter().map(|s| s.count).sum(),
    };
    Ok((mean, summaries))
}
