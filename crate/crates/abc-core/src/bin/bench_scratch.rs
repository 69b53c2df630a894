use abc_core::curation::PairSource;
use abc_core::dataset::DataPool;
use abc_core::factor::{sample_latent, PartialAssignment};
use abc_core::metric::{characteristic_scale, SimilarityMetric, Temperature};
use abc_core::nn::{BackboneRegistry, EncoderConfig};
use abc_core::probes::classifier::{classifier_probe, ClassifierConfig};
use abc_core::render::RenderedDataset;
use abc_core::trainer::{embed_batch, sub_rng, train, TrainState, TrainerOptions};
use ndarray::Array2;

fn main() {
    let steps: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(2000);
    let dataset = RenderedDataset::scene(1);
    let spec = dataset.spec.clone();
    let source = PairSource {
        pool: DataPool::generative(dataset.clone()),
        inactive_factors: vec!["wall_hue".to_string()],
        set_size: 32,
    };
    let config = EncoderConfig::shapes3d_compact(32);
    let registry = BackboneRegistry::new();
    let mut state = TrainState::new(&config, &registry, 1, false).unwrap();
    let options = TrainerOptions::abc(steps, 3e-5, SimilarityMetric::NegativeSquaredEuclidean, 1.0);
    let t0 = std::time::Instant::now();
    let records = train(&mut state, &source, None, &options, None).unwrap();
    eprintln!("trained {} steps in {:.1}s; loss {:.3} -> {:.3}",
        steps, t0.elapsed().as_secs_f64(),
        records.first().map(|r| r.loss).unwrap_or(0.0),
        records.last().map(|r| r.loss).unwrap_or(0.0));

    // Probe dataset: 3000 unconstrained samples.
    let mut probe_rng = sub_rng(999, "probe-data");
    let n = 3000;
    let mut observations = Vec::with_capacity(n);
    for _ in 0..n {
        let code = sample_latent(&spec, &mut probe_rng, &PartialAssignment::new()).unwrap();
        observations.push(dataset.render(&code).unwrap());
    }
    let t1 = std::time::Instant::now();
    let embeddings = {
        // embed in chunks to bound memory
        let mut rows = Vec::new();
        for chunk in observations.chunks(256) {
            let set = embed_batch(&state, chunk).unwrap();
            rows.push(set.into_matrix());
        }
        ndarray::concatenate(ndarray::Axis(0), &rows.iter().map(|r| r.view()).collect::<Vec<_>>()).unwrap()
    };
    eprintln!("embedded {} in {:.1}s; emb std {:.3}", n, t1.elapsed().as_secs_f64(),
        embeddings.std(0.0));

    let sigma = characteristic_scale(SimilarityMetric::NegativeSquaredEuclidean, Temperature::new(1.0).unwrap());
    for factor in ["wall_hue", "object_hue", "floor_hue", "scale", "shape", "orientation"] {
        let idx = spec.index_of(factor).unwrap();
        let labels: Vec<usize> = observations.iter()
            .map(|o| spec.domain(idx).key_bin(o.source_latent.as_ref().unwrap().value(idx)).unwrap())
            .collect();
        let mut rng = sub_rng(1234, factor);
        let outcome = classifier_probe(&embeddings as &Array2<f64>, &labels, sigma, &ClassifierConfig::default(), &mut rng).unwrap();
        println!("{factor:12} acc {:.3} (chance {:.3})", outcome.accuracy, outcome.chance);
    }
}
