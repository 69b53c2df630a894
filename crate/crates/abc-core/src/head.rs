//! Spherical regression head: per Euler angle, a hidden tanh layer feeding
//! a magnitude pair through a spherical exponential activation (the square
//! root of a softmax) and four quadrant logits trained as classification.
//!
//! Input embeddings are L2-normalized onto the unit sphere before the head,
//! and gradients flow back through that normalization.

use crate::error::{CoreError, Result};
use crate::nn::layers::{Activation, Dense};
use crate::nn::mlp::softmax_cross_entropy;
use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const HEAD_HIDDEN_UNITS: usize = 128;
const NORM_EPS: f64 = 1e-12;

/// Targets for one Euler angle `phi`: unit magnitude pair and quadrant.
///
/// The magnitude target is `(|sin phi|, |cos phi|)`; the quadrant class
/// encodes `(sign sin, sign cos)` as `(+,+) -> 0, (+,-) -> 1, (-,+) -> 2,
/// (-,-) -> 3`, with `sign(0)` counting as positive.
pub fn angle_targets(phi: f64) -> ([f64; 2], usize) {
    let (s, c) = phi.sin_cos();
    let mag = [s.abs(), c.abs()];
    let quadrant = match (s >= 0.0, c >= 0.0) {
        (true, true) => 0,
        (true, false) => 1,
        (false, true) => 2,
        (false, false) => 3,
    };
    (mag, quadrant)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct AngleHead {
    hidden: Dense,
    magnitude: Dense,
    quadrant: Dense,
}

/// Three per-angle blocks sharing the normalized embedding as input.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SphericalHead {
    angles: Vec<AngleHead>,
}

/// Output of one forward pass: per angle, the unit magnitude pairs and the
/// quadrant logits for every batch row.
pub struct SphericalForward {
    /// Normalized embeddings and their pre-normalization norms.
    normalized: Array2<f64>,
    norms: Array1<f64>,
    per_angle: Vec<AngleForward>,
}

struct AngleForward {
    hidden_z: Array2<f64>,
    hidden_y: Array2<f64>,
    mag_logits: Array2<f64>,
    /// sqrt-of-softmax magnitudes, `(batch, 2)`.
    magnitudes: Array2<f64>,
    /// softmax of the magnitude logits (cached for the backward pass).
    mag_softmax: Array2<f64>,
    quad_logits: Array2<f64>,
}

/// Parameter gradients in a fixed order: for each angle, (hidden,
/// magnitude, quadrant).
pub struct SphericalGrads {
    pub per_dense: Vec<(Array2<f64>, Array1<f64>)>,
}

impl SphericalHead {
    pub fn new(embedding_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut make = |in_dim: usize, out_dim: usize, act: Activation| {
            let mut d = Dense::zeros(in_dim, out_dim, act);
            let bound = (6.0 / in_dim as f64).sqrt();
            d.w.mapv_inplace(|_| rng.gen_range(-bound..bound));
            d
        };
        let angles = (0..3)
            .map(|_| AngleHead {
                hidden: make(embedding_dim, HEAD_HIDDEN_UNITS, Activation::Tanh),
                magnitude: make(HEAD_HIDDEN_UNITS, 2, Activation::Linear),
                quadrant: make(HEAD_HIDDEN_UNITS, 4, Activation::Linear),
            })
            .collect();
        SphericalHead { angles }
    }

    /// Forward over a batch of raw embeddings `(batch, E)`.
    pub fn forward(&self, embeddings: &Array2<f64>) -> SphericalForward {
        let batch = embeddings.nrows();
        let mut norms = Array1::zeros(batch);
        let mut normalized = embeddings.clone();
        for (i, mut row) in normalized.rows_mut().into_iter().enumerate() {
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(NORM_EPS);
            norms[i] = n;
            row.mapv_inplace(|v| v / n);
        }
        let per_angle = self
            .angles
            .iter()
            .map(|angle| {
                let (hidden_z, hidden_y) = angle.hidden.forward(&normalized);
                let (mag_logits, _) = angle.magnitude.forward(&hidden_y);
                let (quad_logits, _) = angle.quadrant.forward(&hidden_y);
                let mut mag_softmax = Array2::zeros(mag_logits.dim());
                let mut magnitudes = Array2::zeros(mag_logits.dim());
                for i in 0..batch {
                    let row = mag_logits.row(i);
                    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let e0 = (row[0] - max).exp();
                    let e1 = (row[1] - max).exp();
                    let z = e0 + e1;
                    mag_softmax[[i, 0]] = e0 / z;
                    mag_softmax[[i, 1]] = e1 / z;
                    magnitudes[[i, 0]] = (e0 / z).sqrt();
                    magnitudes[[i, 1]] = (e1 / z).sqrt();
                }
                AngleForward {
                    hidden_z,
                    hidden_y,
                    mag_logits,
                    magnitudes,
                    mag_softmax,
                    quad_logits,
                }
            })
            .collect();
        SphericalForward {
            normalized,
            norms,
            per_angle,
        }
    }

    /// Unit magnitude pairs per angle for inspection: `[(batch, 2); 3]`.
    pub fn magnitudes(forward: &SphericalForward) -> Vec<Array2<f64>> {
        forward.per_angle.iter().map(|a| a.magnitudes.clone()).collect()
    }

    /// Quadrant logits per angle.
    pub fn quadrant_logits(forward: &SphericalForward) -> Vec<Array2<f64>> {
        forward.per_angle.iter().map(|a| a.quad_logits.clone()).collect()
    }

    /// Supervised loss against per-row Euler angles `(batch, 3)`, in
    /// radians: per angle, `1 - <magnitudes, (|sin|, |cos|)>` plus
    /// categorical cross-entropy on the quadrant. Returns the scalar loss,
    /// parameter gradients, and the gradient w.r.t. the raw embeddings.
    pub fn supervised_loss(
        &self,
        embeddings: &Array2<f64>,
        forward: &SphericalForward,
        angles: &Array2<f64>,
    ) -> Result<(f64, SphericalGrads, Array2<f64>)> {
        let batch = embeddings.nrows();
        if angles.dim() != (batch, 3) {
            return Err(CoreError::Contract(format!(
                "angle targets must be (batch, 3); got {:?}",
                angles.dim()
            )));
        }
        let mut total = 0.0;
        let mut d_normalized = Array2::zeros(forward.normalized.dim());
        let mut per_dense = Vec::with_capacity(9);

        for (k, (angle_head, fa)) in self.angles.iter().zip(&forward.per_angle).enumerate() {
            // Magnitude targets and quadrant labels.
            let mut mag_target = Array2::zeros((batch, 2));
            let mut quad_labels = Vec::with_capacity(batch);
            for i in 0..batch {
                let (mag, quad) = angle_targets(angles[[i, k]]);
                mag_target[[i, 0]] = mag[0];
                mag_target[[i, 1]] = mag[1];
                quad_labels.push(quad);
            }

            // Magnitude loss: mean over rows of 1 - t . a.
            let mut mag_loss = 0.0;
            let mut d_mag_logits = Array2::zeros((batch, 2));
            for i in 0..batch {
                let a = [fa.magnitudes[[i, 0]], fa.magnitudes[[i, 1]]];
                let t = [mag_target[[i, 0]], mag_target[[i, 1]]];
                mag_loss += 1.0 - (a[0] * t[0] + a[1] * t[1]);
                // dL/da = -t; da/dz = 1/(2 sqrt(z)); softmax jacobian.
                let z = [fa.mag_softmax[[i, 0]], fa.mag_softmax[[i, 1]]];
                let dz = [
                    -t[0] / (2.0 * a[0].max(1e-8)),
                    -t[1] / (2.0 * a[1].max(1e-8)),
                ];
                let weighted = z[0] * dz[0] + z[1] * dz[1];
                for j in 0..2 {
                    d_mag_logits[[i, j]] = z[j] * (dz[j] - weighted) / batch as f64;
                }
            }
            mag_loss /= batch as f64;

            let (quad_loss, d_quad_logits) = softmax_cross_entropy(&fa.quad_logits, &quad_labels)?;
            total += mag_loss + quad_loss;

            // Back through the two output heads into the shared hidden layer.
            let (dw_mag, db_mag, d_hidden_a) =
                angle_head
                    .magnitude
                    .backward(&fa.hidden_y, &fa.mag_logits, &d_mag_logits);
            let (dw_quad, db_quad, d_hidden_b) =
                angle_head
                    .quadrant
                    .backward(&fa.hidden_y, &fa.quad_logits, &d_quad_logits);
            let d_hidden = &d_hidden_a + &d_hidden_b;
            let (dw_hidden, db_hidden, d_norm) =
                angle_head
                    .hidden
                    .backward(&forward.normalized, &fa.hidden_z, &d_hidden);
            d_normalized += &d_norm;
            per_dense.push((dw_hidden, db_hidden));
            per_dense.push((dw_mag, db_mag));
            per_dense.push((dw_quad, db_quad));
        }

        // Back through the L2 normalization into the raw embeddings.
        let mut d_embeddings = Array2::zeros(embeddings.dim());
        for i in 0..batch {
            let xhat = forward.normalized.row(i);
            let g = d_normalized.row(i);
            let dot: f64 = g.iter().zip(xhat.iter()).map(|(a, b)| a * b).sum();
            for j in 0..embeddings.ncols() {
                d_embeddings[[i, j]] = (g[j] - dot * xhat[j]) / forward.norms[i];
            }
        }

        if !total.is_finite() {
            return Err(CoreError::Numerical(
                "spherical head loss is non-finite".to_string(),
            ));
        }
        Ok((total, SphericalGrads { per_dense }, d_embeddings))
    }

    fn dense_layers_mut(&mut self) -> Vec<&mut Dense> {
        let mut out = Vec::with_capacity(9);
        for angle in &mut self.angles {
            out.push(&mut angle.hidden);
            out.push(&mut angle.magnitude);
            out.push(&mut angle.quadrant);
        }
        out
    }
}

/// Adam state for the nine dense layers of a [`SphericalHead`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SphericalAdam {
    t: u64,
    m: Vec<(Array2<f64>, Array1<f64>)>,
    v: Vec<(Array2<f64>, Array1<f64>)>,
}

impl SphericalAdam {
    pub fn new(head: &SphericalHead) -> Self {
        let zeros: Vec<(Array2<f64>, Array1<f64>)> = head
            .angles
            .iter()
            .flat_map(|a| [&a.hidden, &a.magnitude, &a.quadrant])
            .map(|d| (Array2::zeros(d.w.dim()), Array1::zeros(d.b.len())))
            .collect();
        SphericalAdam {
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn apply(&mut self, head: &mut SphericalHead, grads: &SphericalGrads, lr: f64) {
        use crate::nn::adam::{DEFAULT_BETA1 as B1, DEFAULT_BETA2 as B2, DEFAULT_EPS as EPS};
        self.t += 1;
        let bc1 = 1.0 - B1.powi(self.t as i32);
        let bc2 = 1.0 - B2.powi(self.t as i32);
        for (i, dense) in head.dense_layers_mut().into_iter().enumerate() {
            let (gw, gb) = &grads.per_dense[i];
            let (mw, mb) = &mut self.m[i];
            let (vw, vb) = &mut self.v[i];
            ndarray::Zip::from(&mut dense.w).and(gw).and(mw).and(vw).for_each(
                |w, &g, m, v| {
                    *m = B1 * *m + (1.0 - B1) * g;
                    *v = B2 * *v + (1.0 - B2) * g * g;
                    *w -= lr * (*m / bc1) / ((*v / bc2).sqrt() + EPS);
                },
            );
            ndarray::Zip::from(&mut dense.b).and(gb).and(mb).and(vb).for_each(
                |w, &g, m, v| {
                    *m = B1 * *m + (1.0 - B1) * g;
                    *v = B2 * *v + (1.0 - B2) * g * g;
                    *w -= lr * (*m / bc1) / ((*v / bc2).sqrt() + EPS);
                },
            );
        }
    }
}
