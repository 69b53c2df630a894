//! Configurable encoder networks: declarative layer specs, deterministic
//! initialization, batched forward/backward, and an optional frozen
//! pretrained-backbone stub interface.

pub mod adam;
pub mod layers;
pub mod mlp;

use crate::error::{CoreError, Result};
use crate::observation::Observation;
use layers::{col2im, conv_output_side, hwc_to_chw, im2col, Activation, Dense};
use ndarray::{Array1, Array2, Array3, Array4, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::sync::Arc;

/// One layer of an encoder, declaratively.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerSpec {
    Conv2d {
        filters: usize,
        kernel: usize,
        stride: usize,
        activation: Activation,
    },
    MaxPool2 {
        size: usize,
    },
    GlobalAvgPool,
    Flatten,
    Dense {
        units: usize,
        activation: Activation,
    },
}

/// Declared shape and identity of a frozen pretrained backbone. The model
/// itself is resolved by name from a [`BackboneRegistry`] at build time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneSpec {
    pub name: String,
    pub finetune: bool,
    /// Output shape `(channels, height, width)` the backbone produces for
    /// this config's input.
    pub output_shape: (usize, usize, usize),
}

/// Declarative encoder description. Serializable and hash-stable; the final
/// layer must be a linear dense layer with `embedding_dim` units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// Input image shape `(height, width, channels)`.
    pub input_shape: (usize, usize, usize),
    pub layers: Vec<LayerSpec>,
    pub embedding_dim: usize,
    #[serde(default)]
    pub backbone: Option<BackboneSpec>,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        match self.layers.last() {
            Some(LayerSpec::Dense {
                units,
                activation: Activation::Linear,
            }) if *units == self.embedding_dim => {}
            _ => {
                return Err(CoreError::Config(format!(
                    "final layer must be a linear dense layer with {} units",
                    self.embedding_dim
                )))
            }
        }
        self.shape_walk().map(|_| ())
    }

    /// Walks the layer stack, checking shape feasibility; returns the
    /// flattened feature size before the first dense layer.
    fn shape_walk(&self) -> Result<Vec<LayerShape>> {
        let (h, w, c) = self.input_shape;
        if h == 0 || w == 0 || c == 0 {
            return Err(CoreError::Config("input shape must be nonzero".to_string()));
        }
        let mut shapes = Vec::new();
        let mut state = match &self.backbone {
            Some(spec) => LayerShape::Spatial(spec.output_shape),
            None => LayerShape::Spatial((c, h, w)),
        };
        for (i, layer) in self.layers.iter().enumerate() {
            state = match (layer, state) {
                (
                    LayerSpec::Conv2d {
                        filters,
                        kernel,
                        stride,
                        ..
                    },
                    LayerShape::Spatial((_ci, hi, wi)),
                ) => {
                    let oh = conv_output_side(hi, *kernel, *stride);
                    let ow = conv_output_side(wi, *kernel, *stride);
                    match (oh, ow) {
                        (Some(oh), Some(ow)) if *filters > 0 => {
                            LayerShape::Spatial((*filters, oh, ow))
                        }
                        _ => {
                            return Err(CoreError::Config(format!(
                                "conv layer {i} does not fit input {hi}x{wi}"
                            )))
                        }
                    }
                }
                (LayerSpec::MaxPool2 { size }, LayerShape::Spatial((ci, hi, wi))) => {
                    if *size == 0 || hi < *size || wi < *size {
                        return Err(CoreError::Config(format!(
                            "pool layer {i} does not fit input {hi}x{wi}"
                        )));
                    }
                    LayerShape::Spatial((ci, hi / size, wi / size))
                }
                (LayerSpec::GlobalAvgPool, LayerShape::Spatial((ci, _, _))) => {
                    LayerShape::Flat(ci)
                }
                (LayerSpec::Flatten, LayerShape::Spatial((ci, hi, wi))) => {
                    LayerShape::Flat(ci * hi * wi)
                }
                // Flatten after a pooling-to-flat stage is the identity.
                (LayerSpec::Flatten, LayerShape::Flat(d)) => LayerShape::Flat(d),
                (LayerSpec::Dense { units, .. }, LayerShape::Flat(_)) if *units > 0 => {
                    LayerShape::Flat(*units)
                }
                (LayerSpec::Dense { .. }, LayerShape::Spatial(_)) => {
                    return Err(CoreError::Config(format!(
                        "dense layer {i} needs flattened input; add a flatten or pooling layer"
                    )))
                }
                (spec, LayerShape::Flat(_)) => {
                    return Err(CoreError::Config(format!(
                        "layer {i} ({spec:?}) cannot follow a flattened stage"
                    )))
                }
            };
            shapes.push(state);
        }
        match shapes.last() {
            Some(LayerShape::Flat(d)) if *d == self.embedding_dim => Ok(shapes),
            _ => Err(CoreError::Config(
                "network does not end in the declared embedding dimension".to_string(),
            )),
        }
    }

    /// Stable hash of the canonical JSON serialization.
    pub fn config_hash(&self) -> String {
        hash_json(self)
    }

    // ---- presets ----

    /// The full-scale architecture used for 64x64x3 scene experiments.
    pub fn shapes3d_paper() -> Self {
        let conv = |filters, stride| LayerSpec::Conv2d {
            filters,
            kernel: 3,
            stride,
            activation: Activation::Relu,
        };
        EncoderConfig {
            input_shape: (64, 64, 3),
            layers: vec![
                conv(32, 1),
                conv(32, 1),
                conv(64, 2),
                conv(64, 1),
                conv(128, 1),
                conv(128, 2),
                LayerSpec::Flatten,
                LayerSpec::Dense {
                    units: 128,
                    activation: Activation::Relu,
                },
                LayerSpec::Dense {
                    units: 64,
                    activation: Activation::Linear,
                },
            ],
            embedding_dim: 64,
            backbone: None,
        }
    }

    /// Compact desk-scale encoder for the 64x64x3 scene dataset.
    pub fn shapes3d_compact(embedding_dim: usize) -> Self {
        let conv = |filters| LayerSpec::Conv2d {
            filters,
            kernel: 3,
            stride: 2,
            activation: Activation::Relu,
        };
        EncoderConfig {
            input_shape: (64, 64, 3),
            layers: vec![
                conv(16),
                conv(32),
                conv(64),
                LayerSpec::Flatten,
                LayerSpec::Dense {
                    units: 64,
                    activation: Activation::Relu,
                },
                LayerSpec::Dense {
                    units: embedding_dim,
                    activation: Activation::Linear,
                },
            ],
            embedding_dim,
            backbone: None,
        }
    }

    /// The full-scale 28x28x1 digit architecture.
    pub fn mnist_paper() -> Self {
        let conv = |stride| LayerSpec::Conv2d {
            filters: 32,
            kernel: 3,
            stride,
            activation: Activation::Relu,
        };
        EncoderConfig {
            input_shape: (28, 28, 1),
            layers: vec![
                conv(1),
                conv(1),
                conv(2),
                conv(1),
                conv(1),
                LayerSpec::Flatten,
                LayerSpec::Dense {
                    units: 128,
                    activation: Activation::Relu,
                },
                LayerSpec::Dense {
                    units: 8,
                    activation: Activation::Linear,
                },
            ],
            embedding_dim: 8,
            backbone: None,
        }
    }

    /// Compact desk-scale encoder for 28x28x1 digit images.
    pub fn digits_compact(embedding_dim: usize) -> Self {
        EncoderConfig {
            input_shape: (28, 28, 1),
            layers: vec![
                LayerSpec::Conv2d {
                    filters: 16,
                    kernel: 3,
                    stride: 2,
                    activation: Activation::Relu,
                },
                LayerSpec::Conv2d {
                    filters: 32,
                    kernel: 3,
                    stride: 2,
                    activation: Activation::Relu,
                },
                LayerSpec::Flatten,
                LayerSpec::Dense {
                    units: 64,
                    activation: Activation::Relu,
                },
                LayerSpec::Dense {
                    units: embedding_dim,
                    activation: Activation::Linear,
                },
            ],
            embedding_dim,
            backbone: None,
        }
    }

    /// The pose architecture: frozen pretrained backbone, one conv block,
    /// global average pooling, and a tanh bottleneck.
    pub fn pose_paper() -> Self {
        EncoderConfig {
            input_shape: (128, 128, 3),
            layers: vec![
                LayerSpec::Conv2d {
                    filters: 256,
                    kernel: 3,
                    stride: 1,
                    activation: Activation::Relu,
                },
                LayerSpec::GlobalAvgPool,
                LayerSpec::Flatten,
                LayerSpec::Dense {
                    units: 128,
                    activation: Activation::Tanh,
                },
                LayerSpec::Dense {
                    units: 64,
                    activation: Activation::Linear,
                },
            ],
            embedding_dim: 64,
            backbone: Some(BackboneSpec {
                name: "resnet50_conv4".to_string(),
                finetune: false,
                output_shape: (1024, 8, 8),
            }),
        }
    }

    /// Compact desk-scale encoder for 32x32x3 pose glyphs.
    pub fn pose_compact(embedding_dim: usize) -> Self {
        let conv = |filters| LayerSpec::Conv2d {
            filters,
            kernel: 3,
            stride: 2,
            activation: Activation::Relu,
        };
        EncoderConfig {
            input_shape: (32, 32, 3),
            layers: vec![
                conv(16),
                conv(32),
                conv(64),
                LayerSpec::Flatten,
                LayerSpec::Dense {
                    units: 64,
                    activation: Activation::Relu,
                },
                LayerSpec::Dense {
                    units: embedding_dim,
                    activation: Activation::Linear,
                },
            ],
            embedding_dim,
            backbone: None,
        }
    }
}

/// Stable short hash of any serializable value's JSON form.
pub fn hash_json<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_string(value).expect("config serialization cannot fail");
    let digest = Sha256::digest(json.as_bytes());
    let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
    hex[..12].to_string()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum LayerShape {
    Spatial((usize, usize, usize)),
    Flat(usize),
}

/// A frozen feature extractor that can stand in front of the trainable
/// stack. Implementations are resolved by name from a registry.
pub trait Backbone: Send + Sync {
    fn forward(&self, batch: &Array4<f64>) -> Array4<f64>;
    fn output_shape(&self, input: (usize, usize, usize)) -> (usize, usize, usize);
}

pub type BackboneRegistry = BTreeMap<String, Arc<dyn Backbone>>;

/// A built network: layers with materialized parameters.
#[derive(Clone, Serialize, Deserialize)]
pub struct Network {
    pub config: EncoderConfig,
    layers: Vec<Layer>,
    #[serde(skip)]
    backbone: Option<Arc<dyn Backbone>>,
}

impl std::fmt::Debug for Network {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Network")
            .field("config", &self.config)
            .field("layers", &self.layers)
            .field("backbone", &self.config.backbone.as_ref().map(|b| &b.name))
            .finish()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
enum Layer {
    Conv2d {
        /// `(filters, kernel*kernel*in_channels)`
        w: Array2<f64>,
        b: Array1<f64>,
        kernel: usize,
        stride: usize,
        act: Activation,
        in_shape: (usize, usize, usize),
        out_shape: (usize, usize, usize),
    },
    Dense(Dense),
    MaxPool2 {
        size: usize,
        in_shape: (usize, usize, usize),
    },
    GlobalAvgPool {
        in_shape: (usize, usize, usize),
    },
    Flatten {
        in_shape: Option<(usize, usize, usize)>,
    },
}

/// Batched activations flowing between layers.
enum Feed {
    Spatial(Array4<f64>),
    Flat(Array2<f64>),
}

/// Cached forward state for one layer, enough to run its backward pass.
pub enum LayerCache {
    Conv {
        cols: Vec<Array2<f64>>,
        z: Array4<f64>,
    },
    Dense {
        x: Array2<f64>,
        z: Array2<f64>,
    },
    MaxPool {
        /// Flat input index of each pooled maximum, `(b, c, oh, ow)`.
        argmax: Array4<usize>,
    },
    GlobalAvgPool,
    FlattenSpatial,
    FlattenIdentity,
}

/// Per-layer parameter gradients, aligned with the network's layers.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub per_layer: Vec<Option<(Array2<f64>, Array1<f64>)>>,
}

impl Gradients {
    pub fn zeros_like(network: &Network) -> Self {
        let per_layer = network
            .layers
            .iter()
            .map(|layer| match layer {
                Layer::Conv2d { w, b, .. } => {
                    Some((Array2::zeros(w.dim()), Array1::zeros(b.len())))
                }
                Layer::Dense(d) => Some((Array2::zeros(d.w.dim()), Array1::zeros(d.b.len()))),
                _ => None,
            })
            .collect();
        Gradients { per_layer }
    }

    pub fn accumulate(&mut self, other: &Gradients) {
        for (mine, theirs) in self.per_layer.iter_mut().zip(&other.per_layer) {
            if let (Some((w, b)), Some((ow, ob))) = (mine.as_mut(), theirs.as_ref()) {
                *w += ow;
                *b += ob;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for entry in self.per_layer.iter_mut().flatten() {
            entry.0.mapv_inplace(|v| v * factor);
            entry.1.mapv_inplace(|v| v * factor);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.per_layer.iter().flatten().all(|(w, b)| {
            w.iter().all(|v| v.is_finite()) && b.iter().all(|v| v.is_finite())
        })
    }
}

/// Forward tape: per-layer caches for one batch.
pub struct Tape {
    caches: Vec<LayerCache>,
}

impl Network {
    /// Builds a network with all parameters zero (useful for tests; real
    /// training calls [`Network::init`] afterwards).
    pub fn build(config: &EncoderConfig, registry: &BackboneRegistry) -> Result<Self> {
        config.validate()?;
        let backbone = match &config.backbone {
            Some(spec) => {
                let implementation = registry.get(&spec.name).ok_or_else(|| {
                    CoreError::Config(format!(
                        "backbone {:?} is not registered; desk-scale configs run without one",
                        spec.name
                    ))
                })?;
                if spec.finetune {
                    return Err(CoreError::Config(
                        "registered backbones are frozen stubs; finetuning is not available"
                            .to_string(),
                    ));
                }
                let (h, w, c) = config.input_shape;
                let got = implementation.output_shape((c, h, w));
                if got != spec.output_shape {
                    return Err(CoreError::Config(format!(
                        "backbone output shape {got:?} does not match declared {:?}",
                        spec.output_shape
                    )));
                }
                Some(Arc::clone(implementation))
            }
            None => None,
        };

        let (h, w, c) = config.input_shape;
        let mut shape = match &config.backbone {
            Some(spec) => LayerShape::Spatial(spec.output_shape),
            None => LayerShape::Spatial((c, h, w)),
        };
        let mut layers = Vec::new();
        for spec in &config.layers {
            let (layer, next) = match (spec, shape) {
                (
                    LayerSpec::Conv2d {
                        filters,
                        kernel,
                        stride,
                        activation,
                    },
                    LayerShape::Spatial((ci, hi, wi)),
                ) => {
                    let oh = conv_output_side(hi, *kernel, *stride).unwrap();
                    let ow = conv_output_side(wi, *kernel, *stride).unwrap();
                    (
                        Layer::Conv2d {
                            w: Array2::zeros((*filters, ci * kernel * kernel)),
                            b: Array1::zeros(*filters),
                            kernel: *kernel,
                            stride: *stride,
                            act: *activation,
                            in_shape: (ci, hi, wi),
                            out_shape: (*filters, oh, ow),
                        },
                        LayerShape::Spatial((*filters, oh, ow)),
                    )
                }
                (LayerSpec::MaxPool2 { size }, LayerShape::Spatial((ci, hi, wi))) => (
                    Layer::MaxPool2 {
                        size: *size,
                        in_shape: (ci, hi, wi),
                    },
                    LayerShape::Spatial((ci, hi / size, wi / size)),
                ),
                (LayerSpec::GlobalAvgPool, LayerShape::Spatial(s)) => {
                    (Layer::GlobalAvgPool { in_shape: s }, LayerShape::Flat(s.0))
                }
                (LayerSpec::Flatten, LayerShape::Spatial((ci, hi, wi))) => (
                    Layer::Flatten {
                        in_shape: Some((ci, hi, wi)),
                    },
                    LayerShape::Flat(ci * hi * wi),
                ),
                (LayerSpec::Flatten, LayerShape::Flat(d)) => {
                    (Layer::Flatten { in_shape: None }, LayerShape::Flat(d))
                }
                (
                    LayerSpec::Dense { units, activation },
                    LayerShape::Flat(d),
                ) => (
                    Layer::Dense(Dense::zeros(d, *units, *activation)),
                    LayerShape::Flat(*units),
                ),
                _ => unreachable!("validated by shape_walk"),
            };
            layers.push(layer);
            shape = next;
        }
        Ok(Network {
            config: config.clone(),
            layers,
            backbone,
        })
    }

    /// Fan-in-scaled uniform initialization: `U(-sqrt(6/fan_in), +sqrt(6/fan_in))`
    /// for every weight matrix, zero biases.
    pub fn init(&mut self, rng: &mut ChaCha8Rng) {
        for layer in &mut self.layers {
            match layer {
                Layer::Conv2d { w, b, .. } | Layer::Dense(Dense { w, b, .. }) => {
                    let fan_in = w.ncols() as f64;
                    let bound = (6.0 / fan_in).sqrt();
                    w.mapv_inplace(|_| rng.gen_range(-bound..bound));
                    b.fill(0.0);
                }
                _ => {}
            }
        }
    }

    pub fn embedding_dim(&self) -> usize {
        self.config.embedding_dim
    }

    /// Expected input image shape `(height, width, channels)`.
    pub fn input_shape(&self) -> (usize, usize, usize) {
        self.config.input_shape
    }

    /// Re-attaches a backbone implementation after deserialization.
    pub fn resolve_backbone(&mut self, registry: &BackboneRegistry) -> Result<()> {
        if let Some(spec) = &self.config.backbone {
            let implementation = registry.get(&spec.name).ok_or_else(|| {
                CoreError::Config(format!("backbone {:?} is not registered", spec.name))
            })?;
            self.backbone = Some(Arc::clone(implementation));
        }
        Ok(())
    }

    /// Converts observations to the batched CHW input tensor, validating
    /// shape against the config.
    pub fn batch_input(&self, observations: &[Observation]) -> Result<Array4<f64>> {
        let (h, w, c) = self.config.input_shape;
        if observations.is_empty() {
            return Err(CoreError::Contract("empty batch".to_string()));
        }
        for (i, obs) in observations.iter().enumerate() {
            if obs.shape() != (h, w, c) {
                return Err(CoreError::Contract(format!(
                    "observation {i} has shape {:?}, expected ({h}, {w}, {c})",
                    obs.shape()
                )));
            }
        }
        let views: Vec<_> = observations.iter().map(|o| o.image.view()).collect();
        Ok(hwc_to_chw(&views))
    }

    /// Batched forward pass; returns embeddings `(batch, E)` and the tape
    /// needed for [`Network::backward`].
    pub fn forward(&self, input: Array4<f64>) -> Result<(Array2<f64>, Tape)> {
        let input = match &self.backbone {
            Some(backbone) => backbone.forward(&input),
            None => input,
        };
        let mut feed = Feed::Spatial(input);
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (next, cache) = self.forward_layer(layer, feed)?;
            feed = next;
            caches.push(cache);
        }
        match feed {
            Feed::Flat(embeddings) => {
                if !embeddings.iter().all(|v| v.is_finite()) {
                    return Err(CoreError::Numerical(
                        "network produced non-finite embeddings".to_string(),
                    ));
                }
                Ok((embeddings, Tape { caches }))
            }
            Feed::Spatial(_) => Err(CoreError::Config(
                "network output is not flattened".to_string(),
            )),
        }
    }

    fn forward_layer(&self, layer: &Layer, feed: Feed) -> Result<(Feed, LayerCache)> {
        match (layer, feed) {
            (
                Layer::Conv2d {
                    w,
                    b,
                    kernel,
                    stride,
                    act,
                    out_shape,
                    ..
                },
                Feed::Spatial(x),
            ) => {
                let batch = x.dim().0;
                let (co, oh, ow) = *out_shape;
                let mut z = Array4::zeros((batch, co, oh, ow));
                let mut cols = Vec::with_capacity(batch);
                for i in 0..batch {
                    let col = im2col(x.index_axis(Axis(0), i), *kernel, *stride, oh, ow);
                    let mut zi = w.dot(&col);
                    for (mut row, bias) in zi.rows_mut().into_iter().zip(b.iter()) {
                        row.mapv_inplace(|v| v + bias);
                    }
                    for f in 0..co {
                        for p in 0..oh * ow {
                            z[[i, f, p / ow, p % ow]] = zi[[f, p]];
                        }
                    }
                    cols.push(col);
                }
                let out = z.mapv(|v| act.apply(v));
                Ok((Feed::Spatial(out), LayerCache::Conv { cols, z }))
            }
            (Layer::Dense(dense), Feed::Flat(x)) => {
                let (z, y) = dense.forward(&x);
                Ok((Feed::Flat(y), LayerCache::Dense { x, z }))
            }
            (Layer::MaxPool2 { size, in_shape }, Feed::Spatial(x)) => {
                let batch = x.dim().0;
                let (c, h, w) = *in_shape;
                let (oh, ow) = (h / size, w / size);
                let mut out = Array4::zeros((batch, c, oh, ow));
                let mut argmax = Array4::zeros((batch, c, oh, ow));
                for i in 0..batch {
                    for ch in 0..c {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let mut best = f64::NEG_INFINITY;
                                let mut best_idx = 0;
                                for ky in 0..*size {
                                    for kx in 0..*size {
                                        let (y, xx) = (oy * size + ky, ox * size + kx);
                                        let v = x[[i, ch, y, xx]];
                                        if v > best {
                                            best = v;
                                            best_idx = y * w + xx;
                                        }
                                    }
                                }
                                out[[i, ch, oy, ox]] = best;
                                argmax[[i, ch, oy, ox]] = best_idx;
                            }
                        }
                    }
                }
                Ok((Feed::Spatial(out), LayerCache::MaxPool { argmax }))
            }
            (Layer::GlobalAvgPool { in_shape }, Feed::Spatial(x)) => {
                let batch = x.dim().0;
                let (c, h, w) = *in_shape;
                let mut out = Array2::zeros((batch, c));
                for i in 0..batch {
                    for ch in 0..c {
                        let mut sum = 0.0;
                        for y in 0..h {
                            for xx in 0..w {
                                sum += x[[i, ch, y, xx]];
                            }
                        }
                        out[[i, ch]] = sum / (h * w) as f64;
                    }
                }
                Ok((Feed::Flat(out), LayerCache::GlobalAvgPool))
            }
            (Layer::Flatten { in_shape: Some(_) }, Feed::Spatial(x)) => {
                let batch = x.dim().0;
                let flat_len = x.len() / batch;
                let flat = x
                    .into_shape((batch, flat_len))
                    .map_err(|e| CoreError::Contract(e.to_string()))?;
                Ok((Feed::Flat(flat), LayerCache::FlattenSpatial))
            }
            (Layer::Flatten { in_shape: None }, Feed::Flat(x)) => {
                Ok((Feed::Flat(x), LayerCache::FlattenIdentity))
            }
            _ => Err(CoreError::Contract(
                "layer/feed kind mismatch; config validation should have caught this".to_string(),
            )),
        }
    }

    /// Backward pass from embedding gradients; returns parameter gradients.
    pub fn backward(&self, tape: &Tape, d_embeddings: &Array2<f64>) -> Result<Gradients> {
        let mut grads = Gradients::zeros_like(self);
        let mut d_feed = FeedGrad::Flat(d_embeddings.clone());
        for (idx, layer) in self.layers.iter().enumerate().rev() {
            d_feed = self.backward_layer(layer, &tape.caches[idx], d_feed, &mut grads, idx)?;
        }
        Ok(grads)
    }

    fn backward_layer(
        &self,
        layer: &Layer,
        cache: &LayerCache,
        d_out: FeedGrad,
        grads: &mut Gradients,
        idx: usize,
    ) -> Result<FeedGrad> {
        match (layer, cache, d_out) {
            (
                Layer::Conv2d {
                    w,
                    kernel,
                    stride,
                    act,
                    in_shape,
                    out_shape,
                    ..
                },
                LayerCache::Conv { cols, z },
                FeedGrad::Spatial(d_y),
            ) => {
                let batch = d_y.dim().0;
                let (ci, hi, wi) = *in_shape;
                let (co, oh, ow) = *out_shape;
                let mut d_in = Array4::zeros((batch, ci, hi, wi));
                let (dw_acc, db_acc) = grads.per_layer[idx].as_mut().expect("conv has params");
                for i in 0..batch {
                    let mut dz = Array2::zeros((co, oh * ow));
                    for f in 0..co {
                        for p in 0..oh * ow {
                            let zv = z[[i, f, p / ow, p % ow]];
                            dz[[f, p]] = d_y[[i, f, p / ow, p % ow]] * act.derivative(zv);
                        }
                    }
                    *dw_acc += &dz.dot(&cols[i].t());
                    *db_acc += &dz.sum_axis(Axis(1));
                    let d_col = w.t().dot(&dz);
                    let d_img = col2im(&d_col, ci, hi, wi, *kernel, *stride, oh, ow);
                    for ch in 0..ci {
                        for y in 0..hi {
                            for x in 0..wi {
                                d_in[[i, ch, y, x]] = d_img[[ch, y, x]];
                            }
                        }
                    }
                }
                Ok(FeedGrad::Spatial(d_in))
            }
            (Layer::Dense(dense), LayerCache::Dense { x, z }, FeedGrad::Flat(d_y)) => {
                let (dw, db, dx) = dense.backward(x, z, &d_y);
                let (dw_acc, db_acc) = grads.per_layer[idx].as_mut().expect("dense has params");
                *dw_acc += &dw;
                *db_acc += &db;
                Ok(FeedGrad::Flat(dx))
            }
            (
                Layer::MaxPool2 { in_shape, .. },
                LayerCache::MaxPool { argmax },
                FeedGrad::Spatial(d_y),
            ) => {
                let batch = d_y.dim().0;
                let (c, h, w) = *in_shape;
                let (_, _, oh, ow) = argmax.dim();
                let mut d_in = Array4::zeros((batch, c, h, w));
                for i in 0..batch {
                    for ch in 0..c {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let flat = argmax[[i, ch, oy, ox]];
                                d_in[[i, ch, flat / w, flat % w]] += d_y[[i, ch, oy, ox]];
                            }
                        }
                    }
                }
                Ok(FeedGrad::Spatial(d_in))
            }
            (
                Layer::GlobalAvgPool { in_shape },
                LayerCache::GlobalAvgPool,
                FeedGrad::Flat(d_y),
            ) => {
                let batch = d_y.dim().0;
                let (c, h, w) = *in_shape;
                let scale = 1.0 / (h * w) as f64;
                let mut d_in = Array4::zeros((batch, c, h, w));
                for i in 0..batch {
                    for ch in 0..c {
                        let g = d_y[[i, ch]] * scale;
                        for y in 0..h {
                            for x in 0..w {
                                d_in[[i, ch, y, x]] = g;
                            }
                        }
                    }
                }
                Ok(FeedGrad::Spatial(d_in))
            }
            (
                Layer::Flatten {
                    in_shape: Some((c, h, w)),
                },
                LayerCache::FlattenSpatial,
                FeedGrad::Flat(d_y),
            ) => {
                let batch = d_y.dim().0;
                let d_in = d_y
                    .into_shape((batch, *c, *h, *w))
                    .map_err(|e| CoreError::Contract(e.to_string()))?;
                Ok(FeedGrad::Spatial(d_in))
            }
            (Layer::Flatten { in_shape: None }, LayerCache::FlattenIdentity, d) => Ok(d),
            _ => Err(CoreError::Contract(
                "tape does not match network structure".to_string(),
            )),
        }
    }

    /// Applies an SGD-style in-place parameter update (used by Adam).
    pub(crate) fn layer_params_mut(
        &mut self,
    ) -> Vec<Option<(&mut Array2<f64>, &mut Array1<f64>)>> {
        self.layers
            .iter_mut()
            .map(|layer| match layer {
                Layer::Conv2d { w, b, .. } => Some((w, b)),
                Layer::Dense(Dense { w, b, .. }) => Some((&mut *w, &mut *b)),
                _ => None,
            })
            .collect()
    }

    /// Total parameter count.
    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|layer| match layer {
                Layer::Conv2d { w, b, .. } => w.len() + b.len(),
                Layer::Dense(d) => d.w.len() + d.b.len(),
                _ => 0,
            })
            .sum()
    }
}

enum FeedGrad {
    Spatial(Array4<f64>),
    Flat(Array2<f64>),
}

/// An `Array3`-backed helper available to tests and the CLI for building
/// spatial inputs directly.
pub fn single_image_input(image: &Array3<f64>) -> Array4<f64> {
    hwc_to_chw(&[image.view()])
}
