//! The training loop: embeds curated set pairs, evaluates the
//! correspondence loss (plain or double-augmentation, optionally combined
//! with the spherical regression loss), and updates the encoder with Adam.
//! Runs are reproducible from the run seed; checkpoints resume
//! bit-compatibly on the same platform.

use crate::augment::Augmenter;
use crate::curation::{BatchSource, SetBatch};
use crate::error::{CoreError, Result};
use crate::head::{SphericalAdam, SphericalGrads, SphericalHead};
use crate::loss::{abc_loss_double_aug_grad, abc_loss_grad};
use crate::metric::{EmbeddingSet, SimilarityMetric, Temperature};
use crate::nn::adam::AdamState;
use crate::nn::{BackboneRegistry, EncoderConfig, Gradients, Network};
use crate::observation::Observation;
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

/// Derives an independent deterministic RNG stream from a run seed and a
/// role tag.
pub fn sub_rng(seed: u64, tag: &str) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(tag.as_bytes());
    let digest = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest[..32]);
    ChaCha8Rng::from_seed(key)
}

/// Relative weights of the correspondence loss and a supervised loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub abc_weight: f64,
    pub supervised_weight: f64,
}

impl LossWeights {
    pub fn new(abc_weight: f64, supervised_weight: f64) -> Result<Self> {
        if abc_weight < 0.0 || supervised_weight < 0.0 {
            return Err(CoreError::Config("loss weights must be >= 0".to_string()));
        }
        if abc_weight == 0.0 && supervised_weight == 0.0 {
            return Err(CoreError::Config(
                "at least one loss weight must be positive".to_string(),
            ));
        }
        Ok(LossWeights {
            abc_weight,
            supervised_weight,
        })
    }

    pub fn abc_only() -> Self {
        LossWeights {
            abc_weight: 1.0,
            supervised_weight: 0.0,
        }
    }
}

/// `abc_weight * abc + supervised_weight * supervised`.
pub fn combined_loss(abc_value: f64, supervised_value: f64, weights: LossWeights) -> f64 {
    weights.abc_weight * abc_value + weights.supervised_weight * supervised_value
}

/// Base learning rate with an optional staircase decay
/// (`base * factor^(step / interval)`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base: f64,
    pub decay: Option<StaircaseDecay>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StaircaseDecay {
    pub factor: f64,
    pub interval: u64,
}

impl LrSchedule {
    pub fn constant(base: f64) -> Self {
        LrSchedule { base, decay: None }
    }

    pub fn staircase(base: f64, factor: f64, interval: u64) -> Self {
        LrSchedule {
            base,
            decay: Some(StaircaseDecay { factor, interval }),
        }
    }

    pub fn at(&self, step: u64) -> f64 {
        match self.decay {
            Some(StaircaseDecay { factor, interval }) if interval > 0 => {
                self.base * factor.powi((step / interval) as i32)
            }
            _ => self.base,
        }
    }
}

/// Everything the training loop needs beyond the data source.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainerOptions {
    pub steps: u64,
    pub lr: LrSchedule,
    pub metric: SimilarityMetric,
    pub tau: f64,
    pub double_aug: bool,
    pub loss_weights: LossWeights,
    /// Factor (in degrees) supplying the regression angle for the
    /// spherical head; required when `supervised_weight > 0`.
    pub pose_factor: Option<String>,
    /// Set pairs per mini-batch; the loss is the mean over pairs.
    pub group_count: usize,
    pub checkpoint_interval: Option<u64>,
}

impl TrainerOptions {
    pub fn abc(steps: u64, lr: f64, metric: SimilarityMetric, tau: f64) -> Self {
        TrainerOptions {
            steps,
            lr: LrSchedule::constant(lr),
            metric,
            tau,
            double_aug: false,
            loss_weights: LossWeights::abc_only(),
            pose_factor: None,
            group_count: 1,
            checkpoint_interval: None,
        }
    }

    pub fn validate(&self) -> Result<Temperature> {
        if self.group_count == 0 {
            return Err(CoreError::Config("group_count must be >= 1".to_string()));
        }
        if self.loss_weights.supervised_weight > 0.0 && self.pose_factor.is_none() {
            return Err(CoreError::Config(
                "supervised loss weight set but no pose factor named".to_string(),
            ));
        }
        LossWeights::new(
            self.loss_weights.abc_weight,
            self.loss_weights.supervised_weight,
        )?;
        Temperature::new(self.tau)
    }
}

/// Mutable training state: encoder weights, optimizer moments, optional
/// regression head, step counter, and the RNG streams that make resumed
/// runs identical to uninterrupted ones.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainState {
    pub network: Network,
    pub adam: AdamState,
    pub head: Option<(SphericalHead, SphericalAdam)>,
    pub step: u64,
    pub run_seed: u64,
    pub curation_rng: ChaCha8Rng,
    pub augment_rng: ChaCha8Rng,
}

impl TrainState {
    /// Fresh state with fan-in-scaled uniform initialization.
    pub fn new(
        config: &EncoderConfig,
        registry: &BackboneRegistry,
        seed: u64,
        with_head: bool,
    ) -> Result<Self> {
        let mut network = Network::build(config, registry)?;
        let mut init_rng = sub_rng(seed, "init");
        network.init(&mut init_rng);
        let adam = AdamState::new(&network);
        let head = if with_head {
            let mut head_rng = sub_rng(seed, "head");
            let head = SphericalHead::new(config.embedding_dim, &mut head_rng);
            let adam = SphericalAdam::new(&head);
            Some((head, adam))
        } else {
            None
        };
        Ok(TrainState {
            network,
            adam,
            head,
            step: 0,
            run_seed: seed,
            curation_rng: sub_rng(seed, "curation"),
            augment_rng: sub_rng(seed, "augment"),
        })
    }
}

/// One line of the metrics stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub loss: f64,
    pub abc_loss: f64,
    pub supervised_loss: f64,
    pub lr: f64,
    pub extraneous_fraction: f64,
    pub wall_ms: f64,
}

/// Self-describing checkpoint container.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub magic: String,
    pub version: u32,
    pub config_hash: String,
    pub step: u64,
    pub seed: u64,
    pub state: TrainState,
}

pub const CHECKPOINT_MAGIC: &str = "abc-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn save_checkpoint(state: &TrainState, config_hash: &str, path: &Path) -> Result<()> {
    let checkpoint = Checkpoint {
        magic: CHECKPOINT_MAGIC.to_string(),
        version: CHECKPOINT_VERSION,
        config_hash: config_hash.to_string(),
        step: state.step,
        seed: state.run_seed,
        state: state.clone(),
    };
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let bytes = bincode::serialize(&checkpoint)?;
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path, registry: &BackboneRegistry) -> Result<Checkpoint> {
    let bytes = std::fs::read(path)?;
    let mut checkpoint: Checkpoint = bincode::deserialize(&bytes)?;
    if checkpoint.magic != CHECKPOINT_MAGIC {
        return Err(CoreError::Parse {
            offset: 0,
            message: "not a checkpoint file".to_string(),
        });
    }
    if checkpoint.version != CHECKPOINT_VERSION {
        return Err(CoreError::Parse {
            offset: 0,
            message: format!("unsupported checkpoint version {}", checkpoint.version),
        });
    }
    checkpoint.state.network.resolve_backbone(registry)?;
    Ok(checkpoint)
}

/// Embeds a batch of observations with the current weights (no stochastic
/// layers; deterministic given the weights).
pub fn embed_batch(state: &TrainState, observations: &[Observation]) -> Result<EmbeddingSet> {
    let input = state.network.batch_input(observations)?;
    let (embeddings, _) = state.network.forward(input)?;
    EmbeddingSet::new(embeddings)
}

/// Runs `options.steps` training steps, mutating `state` and returning the
/// per-step metrics stream. On a non-finite loss the run aborts with the
/// last periodic checkpoint left intact on disk.
pub fn train(
    state: &mut TrainState,
    source: &dyn BatchSource,
    augmenter: Option<&Augmenter>,
    options: &TrainerOptions,
    checkpoint_dir: Option<&Path>,
) -> Result<Vec<StepRecord>> {
    let tau = options.validate()?;
    if options.double_aug && augmenter.is_none() {
        return Err(CoreError::Config(
            "double augmentation requires an augmenter".to_string(),
        ));
    }
    if options.loss_weights.supervised_weight > 0.0 && state.head.is_none() {
        return Err(CoreError::Config(
            "supervised loss requires a state built with a spherical head".to_string(),
        ));
    }
    let pose_index = match &options.pose_factor {
        Some(name) => {
            let spec = source.spec().ok_or_else(|| {
                CoreError::Config(format!(
                    "pose factor {name:?} requires a source with factor ground truth"
                ))
            })?;
            Some(spec.index_of(name)?)
        }
        None => None,
    };
    let config_hash = state.network.config.config_hash();
    let mut records = Vec::with_capacity(options.steps as usize);
    let started = std::time::Instant::now();

    let end_step = state.step + options.steps;
    while state.step < end_step {
        let step = state.step;
        let lr = options.lr.at(step);

        // Split borrows: curation and augmentation advance their own RNG
        // streams while the network is read, then Adam mutates the network.
        let TrainState {
            network,
            adam,
            head,
            curation_rng,
            augment_rng,
            ..
        } = &mut *state;

        let mut grads = Gradients::zeros_like(network);
        let mut head_grads: Option<SphericalGrads> = None;
        let mut abc_total = 0.0;
        let mut sup_total = 0.0;
        let mut extraneous = 0.0;

        for _ in 0..options.group_count {
            let batch = source.next_batch(step, curation_rng)?;
            extraneous += batch.extraneous_count as f64 / batch.set_b.len() as f64;
            let outcome = match evaluate_pair(
                network,
                head.as_ref().map(|(h, _)| h),
                augment_rng,
                &batch,
                augmenter,
                options,
                tau,
                pose_index,
            ) {
                Ok(outcome) => outcome,
                // Non-finite values anywhere in the loss path abort the
                // run; periodic checkpoints on disk stay untouched.
                Err(CoreError::Numerical(message)) => {
                    return Err(CoreError::TrainAbort { step, message })
                }
                Err(other) => return Err(other),
            };
            abc_total += outcome.abc_loss;
            sup_total += outcome.supervised_loss;
            grads.accumulate(&outcome.grads);
            match (&mut head_grads, outcome.head_grads) {
                (Some(acc), Some(new)) => {
                    for (a, n) in acc.per_dense.iter_mut().zip(new.per_dense) {
                        a.0 += &n.0;
                        a.1 += &n.1;
                    }
                }
                (slot @ None, new @ Some(_)) => *slot = new,
                _ => {}
            }
        }

        let scale = 1.0 / options.group_count as f64;
        grads.scale(scale);
        abc_total *= scale;
        sup_total *= scale;
        extraneous *= scale;
        let loss = combined_loss(abc_total, sup_total, options.loss_weights);

        if !loss.is_finite() || !grads.is_finite() {
            return Err(CoreError::TrainAbort {
                step,
                message: format!("non-finite loss ({loss}); last good checkpoint retained"),
            });
        }

        adam.apply(network, &grads, lr);
        if let (Some((head, head_adam)), Some(hg)) = (head.as_mut(), &head_grads) {
            let w = options.loss_weights.supervised_weight * scale;
            let scaled = SphericalGrads {
                per_dense: hg.per_dense.iter().map(|(gw, gb)| (gw * w, gb * w)).collect(),
            };
            head_adam.apply(head, &scaled, lr);
        }

        state.step += 1;
        records.push(StepRecord {
            step,
            loss,
            abc_loss: abc_total,
            supervised_loss: sup_total,
            lr,
            extraneous_fraction: extraneous,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
        });

        if let (Some(dir), Some(interval)) = (checkpoint_dir, options.checkpoint_interval) {
            if interval > 0 && state.step % interval == 0 {
                save_checkpoint(
                    state,
                    &config_hash,
                    &dir.join(format!("step_{:07}.ckpt", state.step)),
                )?;
            }
        }
    }

    if let Some(dir) = checkpoint_dir {
        save_checkpoint(state, &config_hash, &dir.join("final.ckpt"))?;
    }
    Ok(records)
}

struct PairOutcome {
    abc_loss: f64,
    supervised_loss: f64,
    grads: Gradients,
    head_grads: Option<SphericalGrads>,
}

#[allow(clippy::too_many_arguments)]
fn evaluate_pair(
    network: &Network,
    head: Option<&SphericalHead>,
    augment_rng: &mut ChaCha8Rng,
    batch: &SetBatch,
    augmenter: Option<&Augmenter>,
    options: &TrainerOptions,
    tau: Temperature,
    pose_index: Option<usize>,
) -> Result<PairOutcome> {
    let weights = options.loss_weights;
    let metric = options.metric;

    if options.double_aug {
        let augmenter = augmenter.expect("presence checked by train()");
        let (a1, a2) = augment_set(augmenter, &batch.set_a, augment_rng)?;
        let (b1, b2) = augment_set(augmenter, &batch.set_b, augment_rng)?;
        let (emb_a1, tape_a1) = network.forward(network.batch_input(&a1)?)?;
        let (emb_a2, tape_a2) = network.forward(network.batch_input(&a2)?)?;
        let (emb_b1, tape_b1) = network.forward(network.batch_input(&b1)?)?;
        let (emb_b2, tape_b2) = network.forward(network.batch_input(&b2)?)?;
        let u1 = EmbeddingSet::new(emb_a1)?;
        let u2 = EmbeddingSet::new(emb_a2)?;
        let v1 = EmbeddingSet::new(emb_b1)?;
        let v2 = EmbeddingSet::new(emb_b2)?;
        let g = abc_loss_double_aug_grad(&u1, &u2, &v1, &v2, metric, tau)?;

        // Supervised head runs on the first augmentation of set A.
        let (sup_loss, head_grads, d_head) =
            supervised_term(head, weights, &batch.set_a, u1.matrix(), pose_index)?;

        let mut d_a1 = &g.d_u1 * weights.abc_weight;
        if let Some(dh) = d_head {
            d_a1 += &(&dh * weights.supervised_weight);
        }
        let mut grads = network.backward(&tape_a1, &d_a1)?;
        grads.accumulate(&network.backward(&tape_a2, &(&g.d_u2 * weights.abc_weight))?);
        grads.accumulate(&network.backward(&tape_b1, &(&g.d_v1 * weights.abc_weight))?);
        grads.accumulate(&network.backward(&tape_b2, &(&g.d_v2 * weights.abc_weight))?);
        Ok(PairOutcome {
            abc_loss: g.loss,
            supervised_loss: sup_loss,
            grads,
            head_grads,
        })
    } else {
        let (emb_a, tape_a) = network.forward(network.batch_input(&batch.set_a)?)?;
        let (emb_b, tape_b) = network.forward(network.batch_input(&batch.set_b)?)?;
        let u = EmbeddingSet::new(emb_a)?;
        let v = EmbeddingSet::new(emb_b)?;
        let g = abc_loss_grad(&u, &v, metric, tau)?;

        let (sup_loss, head_grads, d_head) =
            supervised_term(head, weights, &batch.set_a, u.matrix(), pose_index)?;

        let mut d_a = &g.d_u * weights.abc_weight;
        if let Some(dh) = d_head {
            d_a += &(&dh * weights.supervised_weight);
        }
        let mut grads = network.backward(&tape_a, &d_a)?;
        grads.accumulate(&network.backward(&tape_b, &(&g.d_v * weights.abc_weight))?);
        Ok(PairOutcome {
            abc_loss: g.loss,
            supervised_loss: sup_loss,
            grads,
            head_grads,
        })
    }
}

fn supervised_term(
    head: Option<&SphericalHead>,
    weights: LossWeights,
    set_a: &[Observation],
    embeddings: &Array2<f64>,
    pose_index: Option<usize>,
) -> Result<(f64, Option<SphericalGrads>, Option<Array2<f64>>)> {
    if weights.supervised_weight == 0.0 {
        return Ok((0.0, None, None));
    }
    let head = head.expect("presence checked by train()");
    let index = pose_index.expect("resolved by train()");
    let mut angles = Array2::zeros((set_a.len(), 3));
    for (i, obs) in set_a.iter().enumerate() {
        let latent = obs.source_latent.as_ref().ok_or_else(|| {
            CoreError::Contract(format!("observation {i} lacks factor ground truth"))
        })?;
        angles[[i, 0]] = latent.value(index).as_f64().to_radians();
    }
    let fwd = head.forward(embeddings);
    let (loss, grads, d_emb) = head.supervised_loss(embeddings, &fwd, &angles)?;
    Ok((loss, Some(grads), Some(d_emb)))
}

fn augment_set(
    augmenter: &Augmenter,
    set: &[Observation],
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<Observation>, Vec<Observation>)> {
    let mut first = Vec::with_capacity(set.len());
    let mut second = Vec::with_capacity(set.len());
    for obs in set {
        let (s1, s2) = augmenter.sample_pair(rng);
        first.push(augmenter.apply(&s1, obs)?);
        second.push(augmenter.apply(&s2, obs)?);
    }
    Ok((first, second))
}

/// Writes the metrics stream as JSON lines, one record per step, with the
/// config hash stamped on every line.
pub fn write_metrics_jsonl(records: &[StepRecord], config_hash: &str, path: &Path) -> Result<()> {
    use std::io::Write;
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    for record in records {
        let mut value = serde_json::to_value(record)?;
        if let serde_json::Value::Object(map) = &mut value {
            map.insert(
                "config_hash".to_string(),
                serde_json::Value::String(config_hash.to_string()),
            );
        }
        writeln!(file, "{}", serde_json::to_string(&value)?)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curation::PairSource;
    use crate::dataset::DataPool;
    use crate::render::RenderedDataset;

    fn tiny_source() -> PairSource {
        PairSource {
            pool: DataPool::generative(RenderedDataset::digit_glyphs(0)),
            inactive_factors: vec!["digit".to_string()],
            set_size: 4,
        }
    }

    fn tiny_options(steps: u64) -> TrainerOptions {
        TrainerOptions::abc(
            steps,
            1e-3,
            SimilarityMetric::NegativeSquaredEuclidean,
            1.0,
        )
    }

    #[test]
    fn zero_steps_returns_initial_weights() {
        let config = EncoderConfig::digits_compact(4);
        let registry = BackboneRegistry::new();
        let mut state = TrainState::new(&config, &registry, 7, false).unwrap();
        let before = bincode::serialize(&state.network).unwrap();
        let records = train(&mut state, &tiny_source(), None, &tiny_options(0), None).unwrap();
        assert!(records.is_empty());
        assert_eq!(before, bincode::serialize(&state.network).unwrap());
    }

    #[test]
    fn identical_seeds_produce_identical_metric_streams() {
        let config = EncoderConfig::digits_compact(4);
        let registry = BackboneRegistry::new();
        let run = || {
            let mut state = TrainState::new(&config, &registry, 11, false).unwrap();
            train(&mut state, &tiny_source(), None, &tiny_options(5), None).unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.len(), b.len());
        for (ra, rb) in a.iter().zip(&b) {
            assert_eq!(ra.step, rb.step);
            assert_eq!(ra.loss.to_bits(), rb.loss.to_bits(), "losses must match bit-for-bit");
            assert_eq!(ra.lr, rb.lr);
        }
    }

    #[test]
    fn checkpoint_roundtrip_matches_uninterrupted_run() {
        let config = EncoderConfig::digits_compact(4);
        let registry = BackboneRegistry::new();
        let dir = tempfile::tempdir().unwrap();

        // Uninterrupted: 6 steps.
        let mut full_state = TrainState::new(&config, &registry, 13, false).unwrap();
        let full = train(&mut full_state, &tiny_source(), None, &tiny_options(6), None).unwrap();

        // Interrupted: 3 steps, save, load, 3 more.
        let mut state = TrainState::new(&config, &registry, 13, false).unwrap();
        let _ = train(&mut state, &tiny_source(), None, &tiny_options(3), None).unwrap();
        let ckpt_path = dir.path().join("mid.ckpt");
        save_checkpoint(&state, "testhash", &ckpt_path).unwrap();
        let loaded = load_checkpoint(&ckpt_path, &registry).unwrap();
        assert_eq!(loaded.step, 3);
        assert_eq!(loaded.config_hash, "testhash");
        let mut resumed = loaded.state;
        let rest = train(&mut resumed, &tiny_source(), None, &tiny_options(3), None).unwrap();

        for (a, b) in full[3..].iter().zip(&rest) {
            assert_eq!(a.step, b.step);
            assert!(
                (a.loss - b.loss).abs() < 1e-10,
                "resumed step {} loss {} vs {}",
                b.step,
                b.loss,
                a.loss
            );
        }
    }

    #[test]
    fn non_finite_loss_aborts_with_checkpoint_retained() {
        let config = EncoderConfig::digits_compact(4);
        let registry = BackboneRegistry::new();
        let dir = tempfile::tempdir().unwrap();
        let mut state = TrainState::new(&config, &registry, 17, false).unwrap();
        // An absurd learning rate overflows the embeddings within a couple
        // of steps (each Adam step moves weights by about lr).
        let mut options = tiny_options(200);
        options.lr = LrSchedule::constant(1e80);
        options.checkpoint_interval = Some(1);
        let err = train(
            &mut state,
            &tiny_source(),
            None,
            &options,
            Some(dir.path()),
        )
        .unwrap_err();
        match err {
            CoreError::TrainAbort { step, .. } => {
                // A checkpoint from before the failing step survives.
                let kept: Vec<_> = std::fs::read_dir(dir.path())
                    .unwrap()
                    .filter_map(|e| e.ok())
                    .collect();
                assert!(
                    !kept.is_empty(),
                    "expected retained checkpoints before step {step}"
                );
                for entry in kept {
                    let loaded = load_checkpoint(&entry.path(), &registry).unwrap();
                    assert!(loaded.step <= step);
                }
            }
            other => panic!("expected TrainAbort, got {other:?}"),
        }
    }

    #[test]
    fn combined_loss_arithmetic() {
        assert_eq!(
            combined_loss(3.0, 9.0, LossWeights::new(1.0, 0.0).unwrap()),
            3.0
        );
        assert_eq!(
            combined_loss(3.0, 9.0, LossWeights::new(0.0, 1.0).unwrap()),
            9.0
        );
        assert_eq!(
            combined_loss(1.0, 0.25, LossWeights::new(0.5, 2.0).unwrap()),
            1.0
        );
        assert!(LossWeights::new(0.0, 0.0).is_err());
    }

    #[test]
    fn staircase_schedule_halves_on_interval() {
        let lr = LrSchedule::staircase(1e-4, 0.5, 10_000);
        assert_eq!(lr.at(0), 1e-4);
        assert_eq!(lr.at(9_999), 1e-4);
        assert_eq!(lr.at(10_000), 5e-5);
        assert_eq!(lr.at(25_000), 2.5e-5);
    }

    #[test]
    fn embed_batch_shape_mismatch_is_contract_error() {
        let config = EncoderConfig::digits_compact(4);
        let registry = BackboneRegistry::new();
        let state = TrainState::new(&config, &registry, 3, false).unwrap();
        let wrong = Observation::new(ndarray::Array3::zeros((8, 8, 1)), None, "t").unwrap();
        let err = embed_batch(&state, &[wrong]).unwrap_err();
        assert!(matches!(err, CoreError::Contract(_)));
    }
}
