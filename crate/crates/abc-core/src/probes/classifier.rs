//! Classifier probe: a small rectifier MLP trained to predict one discrete
//! factor from (noisy) embeddings, reported as held-out accuracy next to
//! the chance level.

use crate::error::{CoreError, Result};
use crate::nn::layers::Activation;
use crate::nn::mlp::{accuracy, softmax_cross_entropy, Mlp, MlpAdam};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassifierConfig {
    /// Hidden layer widths (rectifier activations).
    pub hidden: Vec<usize>,
    pub steps: u64,
    pub batch_size: usize,
    pub lr: f64,
    /// Fraction of samples held out for evaluation.
    pub test_fraction: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            hidden: vec![32, 32, 32],
            steps: 2000,
            batch_size: 128,
            lr: 1e-3,
            test_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeOutcome {
    pub accuracy: f64,
    /// `1 / k` for the factor's `k` observed classes.
    pub chance: f64,
    pub classes: usize,
    pub test_samples: usize,
}

/// Trains the probe and reports held-out accuracy. Gaussian noise of scale
/// `noise_sigma` is added once to every embedding (train and test) before
/// the split, so the probe sees the representation at the requested scale.
pub fn classifier_probe(
    embeddings: &Array2<f64>,
    labels: &[usize],
    noise_sigma: f64,
    config: &ClassifierConfig,
    rng: &mut ChaCha8Rng,
) -> Result<ProbeOutcome> {
    let n = embeddings.nrows();
    if labels.len() != n {
        return Err(CoreError::Contract(format!(
            "{} labels for {n} embedding rows",
            labels.len()
        )));
    }
    if n < 10 {
        return Err(CoreError::Probe("too few samples to split".to_string()));
    }
    let classes = labels.iter().copied().max().unwrap_or(0) + 1;
    let distinct = {
        let mut seen = vec![false; classes];
        for &l in labels {
            seen[l] = true;
        }
        seen.iter().filter(|s| **s).count()
    };
    if distinct < 2 {
        return Err(CoreError::Probe(
            "factor is degenerate: fewer than two classes observed".to_string(),
        ));
    }

    let mut noisy = embeddings.clone();
    if noise_sigma > 0.0 {
        let normal = Normal::new(0.0, noise_sigma).map_err(|e| CoreError::Probe(e.to_string()))?;
        noisy.mapv_inplace(|v| v + normal.sample(rng));
    }

    // Disjoint split.
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let test_count = ((n as f64 * config.test_fraction).round() as usize).clamp(1, n - 1);
    let (test_idx, train_idx) = order.split_at(test_count);

    let dim = embeddings.ncols();
    let mut mlp = Mlp::new(dim, &config.hidden, classes, Activation::Relu, rng);
    let mut adam = MlpAdam::new(&mlp);

    let gather = |idx: &[usize]| -> (Array2<f64>, Vec<usize>) {
        let mut x = Array2::zeros((idx.len(), dim));
        let mut y = Vec::with_capacity(idx.len());
        for (row, &i) in idx.iter().enumerate() {
            for j in 0..dim {
                x[[row, j]] = noisy[[i, j]];
            }
            y.push(labels[i]);
        }
        (x, y)
    };
    let (train_x, train_y) = gather(train_idx);
    let (test_x, test_y) = gather(test_idx);

    for _ in 0..config.steps {
        let batch: Vec<usize> = (0..config.batch_size.min(train_idx.len()))
            .map(|_| rng.gen_range(0..train_idx.len()))
            .collect();
        let mut bx = Array2::zeros((batch.len(), dim));
        let mut by = Vec::with_capacity(batch.len());
        for (row, &i) in batch.iter().enumerate() {
            for j in 0..dim {
                bx[[row, j]] = train_x[[i, j]];
            }
            by.push(train_y[i]);
        }
        let (logits, cache) = mlp.forward(&bx);
        let (loss, d_logits) = softmax_cross_entropy(&logits, &by)?;
        if !loss.is_finite() {
            return Err(CoreError::Probe("classifier diverged".to_string()));
        }
        let (grads, _) = mlp.backward(&cache, &d_logits);
        adam.apply(&mut mlp, &grads, config.lr);
    }

    let (logits, _) = mlp.forward(&test_x);
    Ok(ProbeOutcome {
        accuracy: accuracy(&logits, &test_y),
        chance: 1.0 / distinct as f64,
        classes: distinct,
        test_samples: test_y.len(),
    })
}
