//! A small dense-only stack with its own Adam state, reused by the
//! classifier probe and the mutual-information statistics network.

use super::layers::{Activation, Dense};
use crate::error::{CoreError, Result};
use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Mlp {
    layers: Vec<Dense>,
}

pub struct MlpCache {
    xs: Vec<Array2<f64>>,
    zs: Vec<Array2<f64>>,
}

impl Mlp {
    /// Hidden layers with the given activation, then a linear output layer.
    pub fn new(
        input_dim: usize,
        hidden: &[usize],
        output_dim: usize,
        activation: Activation,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let mut dims = vec![input_dim];
        dims.extend_from_slice(hidden);
        dims.push(output_dim);
        let mut layers = Vec::new();
        for i in 0..dims.len() - 1 {
            let act = if i + 2 == dims.len() {
                Activation::Linear
            } else {
                activation
            };
            let mut layer = Dense::zeros(dims[i], dims[i + 1], act);
            let bound = (6.0 / dims[i] as f64).sqrt();
            layer.w.mapv_inplace(|_| rng.gen_range(-bound..bound));
            layers.push(layer);
        }
        Mlp { layers }
    }

    /// All-zero parameters: the map is identically zero. Used by tests and
    /// probes that need a known-constant network.
    pub fn zeroed(
        input_dim: usize,
        hidden: &[usize],
        output_dim: usize,
        activation: Activation,
    ) -> Self {
        let mut dims = vec![input_dim];
        dims.extend_from_slice(hidden);
        dims.push(output_dim);
        let layers = (0..dims.len() - 1)
            .map(|i| {
                let act = if i + 2 == dims.len() {
                    Activation::Linear
                } else {
                    activation
                };
                Dense::zeros(dims[i], dims[i + 1], act)
            })
            .collect();
        Mlp { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim()
    }

    pub fn forward(&self, x: &Array2<f64>) -> (Array2<f64>, MlpCache) {
        let mut xs = Vec::with_capacity(self.layers.len());
        let mut zs = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        for layer in &self.layers {
            let (z, y) = layer.forward(&cur);
            xs.push(cur);
            zs.push(z);
            cur = y;
        }
        (cur, MlpCache { xs, zs })
    }

    /// Backward from output gradients; applies no update, just returns the
    /// per-layer gradients and the input gradient.
    pub fn backward(
        &self,
        cache: &MlpCache,
        d_out: &Array2<f64>,
    ) -> (Vec<(Array2<f64>, Array1<f64>)>, Array2<f64>) {
        let mut grads = vec![(Array2::zeros((0, 0)), Array1::zeros(0)); self.layers.len()];
        let mut d = d_out.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let (dw, db, dx) = layer.backward(&cache.xs[i], &cache.zs[i], &d);
            grads[i] = (dw, db);
            d = dx;
        }
        (grads, d)
    }
}

/// Adam state for an [`Mlp`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MlpAdam {
    t: u64,
    m: Vec<(Array2<f64>, Array1<f64>)>,
    v: Vec<(Array2<f64>, Array1<f64>)>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl MlpAdam {
    pub fn new(mlp: &Mlp) -> Self {
        let zeros: Vec<(Array2<f64>, Array1<f64>)> = mlp
            .layers
            .iter()
            .map(|l| (Array2::zeros(l.w.dim()), Array1::zeros(l.b.len())))
            .collect();
        MlpAdam {
            t: 0,
            m: zeros.clone(),
            v: zeros,
            beta1: super::adam::DEFAULT_BETA1,
            beta2: super::adam::DEFAULT_BETA2,
            eps: super::adam::DEFAULT_EPS,
        }
    }

    pub fn apply(&mut self, mlp: &mut Mlp, grads: &[(Array2<f64>, Array1<f64>)], lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, layer) in mlp.layers.iter_mut().enumerate() {
            let (gw, gb) = &grads[i];
            let (mw, mb) = &mut self.m[i];
            let (vw, vb) = &mut self.v[i];
            ndarray::Zip::from(&mut layer.w)
                .and(gw)
                .and(mw)
                .and(vw)
                .for_each(|w, &g, m, v| {
                    *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                    *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                    *w -= lr * (*m / bc1) / ((*v / bc2).sqrt() + self.eps);
                });
            ndarray::Zip::from(&mut layer.b)
                .and(gb)
                .and(mb)
                .and(vb)
                .for_each(|w, &g, m, v| {
                    *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                    *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                    *w -= lr * (*m / bc1) / ((*v / bc2).sqrt() + self.eps);
                });
        }
    }
}

/// Row-wise softmax cross-entropy: returns the mean loss and the logits
/// gradient. Labels index the logits columns.
pub fn softmax_cross_entropy(
    logits: &Array2<f64>,
    labels: &[usize],
) -> Result<(f64, Array2<f64>)> {
    let n = logits.nrows();
    if labels.len() != n {
        return Err(CoreError::Contract(format!(
            "{} labels for {n} logit rows",
            labels.len()
        )));
    }
    let mut d = Array2::zeros(logits.dim());
    let mut loss = 0.0;
    for (i, &label) in labels.iter().enumerate() {
        let row = logits.row(i);
        if label >= row.len() {
            return Err(CoreError::Contract(format!(
                "label {label} out of range for {} classes",
                row.len()
            )));
        }
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|&v| (v - max).exp()).sum();
        let lse = max + sum.ln();
        loss -= row[label] - lse;
        for j in 0..row.len() {
            let p = (row[j] - lse).exp();
            d[[i, j]] = (p - if j == label { 1.0 } else { 0.0 }) / n as f64;
        }
    }
    loss /= n as f64;
    if !loss.is_finite() {
        return Err(CoreError::Numerical("cross-entropy is non-finite".to_string()));
    }
    Ok((loss, d))
}

/// Row-wise argmax accuracy.
pub fn accuracy(logits: &Array2<f64>, labels: &[usize]) -> f64 {
    let mut correct = 0usize;
    for (i, &label) in labels.iter().enumerate() {
        let row = logits.row(i);
        let mut best = 0;
        for j in 1..row.len() {
            if row[j] > row[best] {
                best = j;
            }
        }
        if best == label {
            correct += 1;
        }
    }
    correct as f64 / labels.len() as f64
}
