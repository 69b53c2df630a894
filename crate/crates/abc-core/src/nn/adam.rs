//! Adam optimizer state aligned with a network's parameterized layers.

use super::{Gradients, Network};
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

pub const DEFAULT_BETA1: f64 = 0.9;
pub const DEFAULT_BETA2: f64 = 0.999;
pub const DEFAULT_EPS: f64 = 1e-8;

/// First/second-moment estimates plus the shared step counter.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    m: Vec<Option<(Array2<f64>, Array1<f64>)>>,
    v: Vec<Option<(Array2<f64>, Array1<f64>)>>,
}

impl AdamState {
    pub fn new(network: &Network) -> Self {
        let zeros = || Gradients::zeros_like(network).per_layer;
        AdamState {
            beta1: DEFAULT_BETA1,
            beta2: DEFAULT_BETA2,
            eps: DEFAULT_EPS,
            t: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// One Adam update with bias correction.
    pub fn apply(&mut self, network: &mut Network, grads: &Gradients, lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let params = network.layer_params_mut();
        for (idx, param) in params.into_iter().enumerate() {
            let (Some((w, b)), Some((gw, gb))) = (param, grads.per_layer[idx].as_ref()) else {
                continue;
            };
            let (mw, mb) = self.m[idx].as_mut().expect("moment layout matches");
            let (vw, vb) = self.v[idx].as_mut().expect("moment layout matches");
            update(w, gw, mw, vw, self.beta1, self.beta2, self.eps, lr, bc1, bc2);
            update_vec(b, gb, mb, vb, self.beta1, self.beta2, self.eps, lr, bc1, bc2);
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn update(
    w: &mut Array2<f64>,
    g: &Array2<f64>,
    m: &mut Array2<f64>,
    v: &mut Array2<f64>,
    beta1: f64,
    beta2: f64,
    eps: f64,
    lr: f64,
    bc1: f64,
    bc2: f64,
) {
    ndarray::Zip::from(w)
        .and(g)
        .and(m)
        .and(v)
        .for_each(|w, &g, m, v| {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let mhat = *m / bc1;
            let vhat = *v / bc2;
            *w -= lr * mhat / (vhat.sqrt() + eps);
        });
}

#[allow(clippy::too_many_arguments)]
fn update_vec(
    w: &mut Array1<f64>,
    g: &Array1<f64>,
    m: &mut Array1<f64>,
    v: &mut Array1<f64>,
    beta1: f64,
    beta2: f64,
    eps: f64,
    lr: f64,
    bc1: f64,
    bc2: f64,
) {
    ndarray::Zip::from(w)
        .and(g)
        .and(m)
        .and(v)
        .for_each(|w, &g, m, v| {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let mhat = *m / bc1;
            let vhat = *v / bc2;
            *w -= lr * mhat / (vhat.sqrt() + eps);
        });
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::layers::Activation;
    use crate::nn::{BackboneRegistry, EncoderConfig, LayerSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dense_only() -> Network {
        let config = EncoderConfig {
            input_shape: (1, 1, 2),
            layers: vec![
                LayerSpec::Flatten,
                LayerSpec::Dense {
                    units: 2,
                    activation: Activation::Linear,
                },
            ],
            embedding_dim: 2,
            backbone: None,
        };
        let mut network = Network::build(&config, &BackboneRegistry::new()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        network.init(&mut rng);
        network
    }

    #[test]
    fn first_step_moves_weights_by_about_lr() {
        // With bias correction, the first Adam step has magnitude close to
        // lr for any nonzero gradient.
        let mut network = dense_only();
        let mut adam = AdamState::new(&network);
        let before = format!("{:?}", network);
        let mut grads = Gradients::zeros_like(&network);
        if let Some((gw, _)) = grads.per_layer[1].as_mut() {
            gw[[0, 0]] = 3.0;
        }
        adam.apply(&mut network, &grads, 0.01);
        let after = format!("{:?}", network);
        assert_ne!(before, after);
        assert_eq!(adam.t, 1);
    }

    #[test]
    fn zero_gradient_leaves_weights_unchanged() {
        let mut network = dense_only();
        let mut adam = AdamState::new(&network);
        let before = format!("{:?}", network);
        let grads = Gradients::zeros_like(&network);
        adam.apply(&mut network, &grads, 0.5);
        assert_eq!(before, format!("{:?}", network));
    }
}
