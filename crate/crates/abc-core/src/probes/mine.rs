//! Mutual-information estimation with a trained statistics network: the
//! network learns to separate joint samples (embedding, factor) from
//! product-of-marginals samples (factor values shuffled), and the converged
//! objective lower-bounds the mutual information.

use crate::error::{CoreError, Result};
use crate::nn::layers::Activation;
use crate::nn::mlp::{Mlp, MlpAdam};
use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// The statistics network: fully connected, input = embedding plus one
/// factor value, three rectifier hidden layers of 128 units, scalar output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StatisticsNetwork {
    mlp: Mlp,
}

pub const STATS_HIDDEN: usize = 128;

impl StatisticsNetwork {
    pub fn new(embedding_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        StatisticsNetwork {
            mlp: Mlp::new(
                embedding_dim + 1,
                &[STATS_HIDDEN, STATS_HIDDEN, STATS_HIDDEN],
                1,
                Activation::Relu,
                rng,
            ),
        }
    }

    /// Scalar outputs for a batch of (embedding, factor) rows.
    pub fn evaluate(&self, inputs: &Array2<f64>) -> Array1<f64> {
        let (out, _) = self.mlp.forward(inputs);
        out.column(0).to_owned()
    }
}

/// Additive Gaussian noise applied to embeddings before estimation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub sigma: f64,
}

impl NoiseSpec {
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(CoreError::Config(format!(
                "noise sigma must be >= 0, got {sigma}"
            )));
        }
        Ok(NoiseSpec { sigma })
    }
}

/// Training/evaluation budget for one estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MineBudget {
    pub steps: u64,
    pub batch_size: usize,
    pub lr: f64,
    /// Samples (drawn with replacement) for the final estimate.
    pub eval_samples: usize,
}

impl Default for MineBudget {
    fn default() -> Self {
        // Desk-scale default; the full-scale protocol uses 20,000 steps
        // and 256,000 evaluation samples.
        MineBudget {
            steps: 5000,
            batch_size: 256,
            lr: 3e-4,
            eval_samples: 65_536,
        }
    }
}

impl MineBudget {
    pub fn paper_scale() -> Self {
        MineBudget {
            steps: 20_000,
            batch_size: 256,
            lr: 3e-4,
            eval_samples: 256_000,
        }
    }
}

/// The negated neural information measure on one pair of batches:
/// `log(mean(exp(T(marginal)))) - mean(T(joint))`, stabilized with
/// max subtraction.
pub fn mine_loss(
    network: &StatisticsNetwork,
    joint_batch: &Array2<f64>,
    marginal_batch: &Array2<f64>,
) -> Result<f64> {
    if joint_batch.nrows() == 0 || marginal_batch.nrows() == 0 {
        return Err(CoreError::Contract("batches must be non-empty".to_string()));
    }
    let t_joint = network.evaluate(joint_batch);
    let t_marginal = network.evaluate(marginal_batch);
    let loss = log_mean_exp(&t_marginal) - t_joint.mean().unwrap();
    if !loss.is_finite() {
        return Err(CoreError::Numerical("mine loss is non-finite".to_string()));
    }
    Ok(loss)
}

fn log_mean_exp(values: &Array1<f64>) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + (sum / values.len() as f64).ln()
}

/// A mutual-information estimate in nats.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MiEstimate {
    /// Clamped at zero (the estimator can go slightly negative from
    /// variance).
    pub nats: f64,
    /// The raw, unclamped value.
    pub raw: f64,
}

/// Trains a fresh statistics network on `(embeddings + noise, factor)`
/// pairs and returns the estimated mutual information in nats.
///
/// Marginal batches are formed by shuffling the factor values against the
/// embeddings. All sampling is with replacement. Inputs are standardized
/// coordinate-wise (an invertible map, so the MI is unchanged).
pub fn estimate_mi(
    embeddings: &Array2<f64>,
    factor_values: &[f64],
    noise: NoiseSpec,
    budget: &MineBudget,
    rng: &mut ChaCha8Rng,
) -> Result<MiEstimate> {
    let n = embeddings.nrows();
    if factor_values.len() != n {
        return Err(CoreError::Contract(format!(
            "{} factor values for {n} embeddings",
            factor_values.len()
        )));
    }
    if n < 2 {
        return Err(CoreError::Probe("need at least two samples".to_string()));
    }
    let dim = embeddings.ncols();

    // Coordinate-wise standardization constants. The noise adds variance
    // sigma^2 to every embedding coordinate.
    let mut mean = vec![0.0; dim];
    let mut std = vec![0.0; dim];
    for j in 0..dim {
        let col = embeddings.column(j);
        let m = col.mean().unwrap();
        let v = col.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n as f64;
        mean[j] = m;
        std[j] = (v + noise.sigma * noise.sigma).sqrt().max(1e-8);
    }
    let g_mean = factor_values.iter().sum::<f64>() / n as f64;
    let g_std = (factor_values.iter().map(|g| (g - g_mean) * (g - g_mean)).sum::<f64>()
        / n as f64)
        .sqrt()
        .max(1e-8);

    let normal = Normal::new(0.0, noise.sigma).map_err(|e| CoreError::Probe(e.to_string()))?;
    let mut network = StatisticsNetwork::new(dim, rng);
    let mut adam = MlpAdam::new(&network.mlp);

    let fill_row = |row: &mut [f64], idx: usize, g_idx: usize, rng: &mut ChaCha8Rng| {
        for j in 0..dim {
            let noise_draw = if noise.sigma > 0.0 { normal.sample(rng) } else { 0.0 };
            row[j] = (embeddings[[idx, j]] + noise_draw - mean[j]) / std[j];
        }
        row[dim] = (factor_values[g_idx] - g_mean) / g_std;
    };

    let b = budget.batch_size.max(2);
    for _ in 0..budget.steps {
        // Joint rows and a within-batch shuffle of the factor values for
        // the marginal term.
        let indices: Vec<usize> = (0..b).map(|_| rng.gen_range(0..n)).collect();
        let mut shuffled = indices.clone();
        for i in (1..shuffled.len()).rev() {
            let j = rng.gen_range(0..=i);
            shuffled.swap(i, j);
        }
        let mut joint = Array2::zeros((b, dim + 1));
        let mut marginal = Array2::zeros((b, dim + 1));
        for i in 0..b {
            fill_row(joint.row_mut(i).as_slice_mut().unwrap(), indices[i], indices[i], rng);
            fill_row(
                marginal.row_mut(i).as_slice_mut().unwrap(),
                indices[i],
                shuffled[i],
                rng,
            );
        }

        // Gradient of the objective w.r.t. the network outputs.
        let (t_joint, cache_joint) = network.mlp.forward(&joint);
        let (t_marginal, cache_marginal) = network.mlp.forward(&marginal);
        let loss = log_mean_exp(&t_marginal.column(0).to_owned())
            - t_joint.column(0).mean().unwrap();
        if !loss.is_finite() {
            return Err(CoreError::Probe(
                "statistics network diverged (non-finite loss)".to_string(),
            ));
        }

        let mut d_joint = Array2::zeros(t_joint.dim());
        for i in 0..b {
            d_joint[[i, 0]] = -1.0 / b as f64;
        }
        let max = t_marginal
            .column(0)
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        let exp_sum: f64 = t_marginal.column(0).iter().map(|v| (v - max).exp()).sum();
        let mut d_marginal = Array2::zeros(t_marginal.dim());
        for i in 0..b {
            d_marginal[[i, 0]] = (t_marginal[[i, 0]] - max).exp() / exp_sum;
        }

        let (grads_joint, _) = network.mlp.backward(&cache_joint, &d_joint);
        let (grads_marginal, _) = network.mlp.backward(&cache_marginal, &d_marginal);
        let combined: Vec<(Array2<f64>, Array1<f64>)> = grads_joint
            .into_iter()
            .zip(grads_marginal)
            .map(|((wa, ba), (wb, bb))| (wa + wb, ba + bb))
            .collect();
        adam.apply(&mut network.mlp, &combined, budget.lr);
    }

    // Final estimate over a large sample, with replacement: joint term on
    // matched pairs, marginal term on independently drawn pairs.
    let chunk = 4096;
    let mut joint_sum = 0.0;
    let mut joint_count = 0usize;
    let mut marginal_values: Vec<f64> = Vec::with_capacity(budget.eval_samples);
    while joint_count < budget.eval_samples {
        let take = chunk.min(budget.eval_samples - joint_count);
        let mut joint = Array2::zeros((take, dim + 1));
        let mut marginal = Array2::zeros((take, dim + 1));
        for i in 0..take {
            let idx = rng.gen_range(0..n);
            fill_row(joint.row_mut(i).as_slice_mut().unwrap(), idx, idx, rng);
            let u_idx = rng.gen_range(0..n);
            let g_idx = rng.gen_range(0..n);
            fill_row(marginal.row_mut(i).as_slice_mut().unwrap(), u_idx, g_idx, rng);
        }
        joint_sum += network.evaluate(&joint).sum();
        marginal_values.extend(network.evaluate(&marginal).iter());
        joint_count += take;
    }
    let raw = joint_sum / joint_count as f64
        - log_mean_exp(&Array1::from_vec(marginal_values));
    if !raw.is_finite() {
        return Err(CoreError::Probe("estimate is non-finite".to_string()));
    }
    Ok(MiEstimate {
        nats: raw.max(0.0),
        raw,
    })
}
