//! Builds the pairs of sets consumed by training, for all three
//! supervision regimes: both sets curated, one set unconstrained, and one
//! set unconstrained with a titrated fraction of extraneous-domain data.

use crate::dataset::{sample_restricted_latent, DataPool, FiniteDataset};
use crate::error::{CoreError, Result};
use crate::factor::{FactorValue, PartialAssignment};
use crate::observation::Observation;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// How a set's membership was constrained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SetAssignment {
    /// Every element matches this inactive-factor assignment exactly.
    Fixed(PartialAssignment),
    /// Free samples over the whole pool.
    Unconstrained,
}

/// A pair of element sets, the unit of training.
#[derive(Debug, Clone)]
pub struct SetBatch {
    pub set_a: Vec<Observation>,
    pub set_b: Vec<Observation>,
    pub inactive_assignment_a: SetAssignment,
    pub inactive_assignment_b: SetAssignment,
    /// Domain tag of each element of set B, in order.
    pub provenance_b: Vec<String>,
    /// Number of set-B elements drawn from the extraneous pool.
    pub extraneous_count: usize,
    /// Whether either set had to fall back to drawing with replacement.
    pub with_replacement_a: bool,
    pub with_replacement_b: bool,
}

impl SetBatch {
    fn assemble(
        set_a: CuratedSet,
        set_b: CuratedSet,
        extraneous_count: usize,
    ) -> Result<SetBatch> {
        if set_a.elements.len() < 2 || set_b.elements.len() < 2 {
            return Err(CoreError::Contract(format!(
                "sets need at least 2 elements (the loss is degenerate below), got {} and {}",
                set_a.elements.len(),
                set_b.elements.len()
            )));
        }
        let provenance_b = set_b.elements.iter().map(|o| o.domain_tag.clone()).collect();
        Ok(SetBatch {
            set_a: set_a.elements,
            set_b: set_b.elements,
            inactive_assignment_a: set_a.assignment,
            inactive_assignment_b: set_b.assignment,
            provenance_b,
            extraneous_count,
            with_replacement_a: set_a.with_replacement,
            with_replacement_b: set_b.with_replacement,
        })
    }
}

/// Linear ramp of the extraneous fraction, stepped every `step_interval`
/// training steps up to `final_fraction` at `ramp_steps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TitrationSchedule {
    pub final_fraction: f64,
    pub ramp_steps: u64,
    pub step_interval: u64,
}

impl TitrationSchedule {
    pub fn new(final_fraction: f64, ramp_steps: u64, step_interval: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&final_fraction) {
            return Err(CoreError::Config(format!(
                "final_fraction must be in [0, 1], got {final_fraction}"
            )));
        }
        if step_interval == 0 {
            return Err(CoreError::Config("step_interval must be >= 1".to_string()));
        }
        Ok(TitrationSchedule {
            final_fraction,
            ramp_steps,
            step_interval,
        })
    }

    /// `final_fraction * min(1, floor(step / interval) * interval / ramp_steps)`;
    /// non-decreasing in `step`.
    pub fn fraction(&self, step: u64) -> f64 {
        if self.ramp_steps == 0 {
            return self.final_fraction;
        }
        let quantized = (step / self.step_interval) * self.step_interval;
        let progress = (quantized as f64 / self.ramp_steps as f64).min(1.0);
        self.final_fraction * progress
    }
}

/// A curated set plus its metadata.
#[derive(Debug, Clone)]
pub struct CuratedSet {
    pub elements: Vec<Observation>,
    pub assignment: SetAssignment,
    pub with_replacement: bool,
}

/// Draws `size` elements all matching `inactive_assignment` exactly; active
/// factors vary freely. Finite pools are filtered and drawn without
/// replacement when possible (with replacement otherwise, flagged).
pub fn curate_set(
    pool: &DataPool,
    inactive_assignment: &PartialAssignment,
    size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<CuratedSet> {
    if size == 0 {
        return Err(CoreError::Contract("cannot curate an empty set".to_string()));
    }
    match pool {
        DataPool::Generative {
            dataset,
            restrictions,
        } => {
            let mut elements = Vec::with_capacity(size);
            for _ in 0..size {
                let code =
                    sample_restricted_latent(&dataset.spec, rng, inactive_assignment, restrictions)?;
                elements.push(dataset.render(&code)?);
            }
            Ok(CuratedSet {
                elements,
                assignment: assignment_of(inactive_assignment),
                with_replacement: false,
            })
        }
        DataPool::Finite(finite) => {
            let pool_indices = finite.matching_indices(inactive_assignment)?;
            if pool_indices.is_empty() {
                return Err(CoreError::Curation(format!(
                    "no elements match the inactive assignment {inactive_assignment:?}"
                )));
            }
            let (picks, with_replacement) = FiniteDataset::draw(&pool_indices, size, rng);
            let elements = picks
                .into_iter()
                .map(|i| finite.observations[i].clone())
                .collect();
            Ok(CuratedSet {
                elements,
                assignment: assignment_of(inactive_assignment),
                with_replacement,
            })
        }
    }
}

fn assignment_of(assignment: &PartialAssignment) -> SetAssignment {
    if assignment.is_empty() {
        SetAssignment::Unconstrained
    } else {
        SetAssignment::Fixed(assignment.clone())
    }
}

/// Samples one inactive assignment: an independent uniform choice over the
/// key values of each named factor.
pub fn sample_assignment(
    pool: &DataPool,
    inactive_factors: &[String],
    rng: &mut ChaCha8Rng,
) -> Result<PartialAssignment> {
    let mut assignment = PartialAssignment::new();
    for name in inactive_factors {
        let values = pool.key_values(name)?;
        if values.is_empty() {
            return Err(CoreError::Curation(format!(
                "factor {name:?} has no available key values"
            )));
        }
        assignment.insert(name.clone(), values[rng.gen_range(0..values.len())]);
    }
    Ok(assignment)
}

/// Samples a training pair: two independently sampled inactive assignments,
/// one curated set each. Assignment collisions between A and B are allowed.
pub fn sample_pair(
    pool: &DataPool,
    inactive_factors: &[String],
    size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<SetBatch> {
    let assignment_a = sample_assignment(pool, inactive_factors, rng)?;
    let assignment_b = sample_assignment(pool, inactive_factors, rng)?;
    let set_a = curate_set(pool, &assignment_a, size, rng)?;
    let set_b = curate_set(pool, &assignment_b, size, rng)?;
    SetBatch::assemble(set_a, set_b, 0)
}

/// Samples a semi-supervised pair: set A curated as in [`sample_pair`];
/// set B is a mix of unconstrained in-domain samples and
/// `round_ties_even(fraction(step) * size)` extraneous-domain samples.
pub fn sample_pair_x(
    pool: &DataPool,
    extraneous: &DataPool,
    inactive_factors: &[String],
    size: usize,
    schedule: &TitrationSchedule,
    step: u64,
    rng: &mut ChaCha8Rng,
) -> Result<SetBatch> {
    let assignment_a = sample_assignment(pool, inactive_factors, rng)?;
    let set_a = curate_set(pool, &assignment_a, size, rng)?;

    let fraction = schedule.fraction(step);
    let extraneous_count = (fraction * size as f64).round_ties_even() as usize;
    let extraneous_count = extraneous_count.min(size);
    if extraneous_count > 0 && extraneous.is_empty() {
        return Err(CoreError::Curation(
            "extraneous pool is empty but the titration fraction is positive".to_string(),
        ));
    }

    let mut elements = Vec::with_capacity(size);
    for _ in 0..size - extraneous_count {
        elements.push(pool.sample_unconstrained(rng)?);
    }
    for _ in 0..extraneous_count {
        elements.push(extraneous.sample_unconstrained(rng)?);
    }
    elements.shuffle(rng);
    let set_b = CuratedSet {
        elements,
        assignment: SetAssignment::Unconstrained,
        with_replacement: false,
    };
    SetBatch::assemble(set_a, set_b, extraneous_count)
}

/// Per-step provider of training batches. Implementations own no RNG; the
/// trainer passes its curation stream explicitly so runs are reproducible
/// from the run seed.
pub trait BatchSource {
    fn next_batch(&self, step: u64, rng: &mut ChaCha8Rng) -> Result<SetBatch>;

    /// Factor ground truth of the primary pool, when available.
    fn spec(&self) -> Option<&crate::factor::FactorSpec> {
        None
    }
}

/// Plain set-supervised pairs (both sets curated).
#[derive(Debug, Clone)]
pub struct PairSource {
    pub pool: DataPool,
    pub inactive_factors: Vec<String>,
    pub set_size: usize,
}

impl BatchSource for PairSource {
    fn next_batch(&self, _step: u64, rng: &mut ChaCha8Rng) -> Result<SetBatch> {
        sample_pair(&self.pool, &self.inactive_factors, self.set_size, rng)
    }

    fn spec(&self) -> Option<&crate::factor::FactorSpec> {
        self.pool.spec()
    }
}

/// Pairs with an unconstrained set B and optional extraneous titration.
#[derive(Debug, Clone)]
pub struct XPairSource {
    pub pool: DataPool,
    pub extraneous: DataPool,
    pub inactive_factors: Vec<String>,
    pub set_size: usize,
    pub schedule: TitrationSchedule,
}

impl BatchSource for XPairSource {
    fn next_batch(&self, step: u64, rng: &mut ChaCha8Rng) -> Result<SetBatch> {
        sample_pair_x(
            &self.pool,
            &self.extraneous,
            &self.inactive_factors,
            self.set_size,
            &self.schedule,
            step,
            rng,
        )
    }

    fn spec(&self) -> Option<&crate::factor::FactorSpec> {
        self.pool.spec()
    }
}

/// Extracts the value of `factor` from an assignment, for tests and
/// homogeneity checks.
pub fn assignment_value(assignment: &SetAssignment, factor: &str) -> Option<FactorValue> {
    match assignment {
        SetAssignment::Fixed(map) => map.get(factor).copied(),
        SetAssignment::Unconstrained => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factor::{Activity, FactorSpec, LatentCode};
    use crate::render::RenderedDataset;
    use ndarray::Array3;
    use rand::SeedableRng;

    fn scene_pool() -> DataPool {
        DataPool::generative(RenderedDataset::scene(3))
    }

    fn homogeneity_check(batch: &[Observation], spec: &FactorSpec, factor: &str, expected: &FactorValue) {
        let idx = spec.index_of(factor).unwrap();
        for obs in batch {
            let latent = obs.source_latent.as_ref().expect("generative pool keeps latents");
            assert_eq!(latent.value(idx), expected, "inactive factor must match exactly");
            assert_eq!(latent.partition[idx], Activity::Inactive);
        }
    }

    #[test]
    fn curated_set_matches_the_inactive_assignment() {
        let pool = scene_pool();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut assignment = PartialAssignment::new();
        assignment.insert("wall_hue".into(), FactorValue::Discrete(7));
        let set = curate_set(&pool, &assignment, 32, &mut rng).unwrap();
        assert_eq!(set.elements.len(), 32);
        assert!(!set.with_replacement);
        homogeneity_check(
            &set.elements,
            pool.spec().unwrap(),
            "wall_hue",
            &FactorValue::Discrete(7),
        );
    }

    #[test]
    fn fully_constrained_finite_pool_returns_the_single_match() {
        // A finite pool where exactly one element matches the assignment.
        let spec = FactorSpec::new(vec![(
            "id".into(),
            crate::factor::FactorDomain::discrete(4),
        )])
        .unwrap();
        let observations: Vec<Observation> = (0..4)
            .map(|i| {
                let code = LatentCode {
                    values: vec![FactorValue::Discrete(i)],
                    partition: vec![Activity::Active],
                };
                Observation::new(Array3::from_elem((2, 2, 1), i as f64 / 4.0), Some(code), "t")
                    .unwrap()
            })
            .collect();
        let target = observations[2].clone();
        let pool = DataPool::Finite(FiniteDataset::from_observations(observations, Some(spec)));
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut assignment = PartialAssignment::new();
        assignment.insert("id".into(), FactorValue::Discrete(2));
        let set = curate_set(&pool, &assignment, 1, &mut rng).unwrap();
        assert_eq!(set.elements.len(), 1);
        assert_eq!(set.elements[0].image, target.image);
    }

    #[test]
    fn thin_pool_draws_with_replacement_and_flags_it() {
        let spec = FactorSpec::new(vec![(
            "id".into(),
            crate::factor::FactorDomain::discrete(2),
        )])
        .unwrap();
        // 10 elements match id=0.
        let observations: Vec<Observation> = (0..20)
            .map(|i| {
                let code = LatentCode {
                    values: vec![FactorValue::Discrete(i % 2)],
                    partition: vec![Activity::Active],
                };
                Observation::new(
                    Array3::from_elem((2, 2, 1), i as f64 / 20.0),
                    Some(code),
                    "t",
                )
                .unwrap()
            })
            .collect();
        let matching: Vec<_> = observations
            .iter()
            .filter(|o| {
                matches!(
                    o.source_latent.as_ref().unwrap().value(0),
                    FactorValue::Discrete(0)
                )
            })
            .map(|o| o.image.clone())
            .collect();
        let pool = DataPool::Finite(FiniteDataset::from_observations(observations, Some(spec)));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut assignment = PartialAssignment::new();
        assignment.insert("id".into(), FactorValue::Discrete(0));
        let set = curate_set(&pool, &assignment, 32, &mut rng).unwrap();
        assert_eq!(set.elements.len(), 32);
        assert!(set.with_replacement);
        // Multiset membership: every drawn element is from the matching pool.
        for obs in &set.elements {
            assert!(matching.iter().any(|m| m == &obs.image));
        }
    }

    #[test]
    fn empty_matching_pool_is_a_curation_error_naming_the_assignment() {
        let spec = FactorSpec::new(vec![(
            "id".into(),
            crate::factor::FactorDomain::discrete(3),
        )])
        .unwrap();
        let observations: Vec<Observation> = (0..4)
            .map(|_| {
                let code = LatentCode {
                    values: vec![FactorValue::Discrete(0)],
                    partition: vec![Activity::Active],
                };
                Observation::new(Array3::zeros((2, 2, 1)), Some(code), "t").unwrap()
            })
            .collect();
        let pool = DataPool::Finite(FiniteDataset::from_observations(observations, Some(spec)));
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut assignment = PartialAssignment::new();
        assignment.insert("id".into(), FactorValue::Discrete(2));
        let err = curate_set(&pool, &assignment, 4, &mut rng).unwrap_err();
        match err {
            CoreError::Curation(msg) => assert!(msg.contains("id")),
            other => panic!("expected curation error, got {other:?}"),
        }
    }

    #[test]
    fn five_inactive_factors_leave_one_varying() {
        let pool = scene_pool();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let inactive: Vec<String> = ["floor_hue", "wall_hue", "scale", "shape", "orientation"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let batch = sample_pair(&pool, &inactive, 8, &mut rng).unwrap();
        let spec = pool.spec().unwrap();
        for (set, assignment) in [
            (&batch.set_a, &batch.inactive_assignment_a),
            (&batch.set_b, &batch.inactive_assignment_b),
        ] {
            for name in &inactive {
                let expected = assignment_value(assignment, name).unwrap();
                homogeneity_check(set, spec, name, &expected);
            }
            // Only object_hue remains active.
            let obj = spec.index_of("object_hue").unwrap();
            for obs in set.iter() {
                assert_eq!(
                    obs.source_latent.as_ref().unwrap().partition[obj],
                    Activity::Active
                );
            }
        }
    }

    #[test]
    fn zero_inactive_factors_degenerates_to_unconstrained() {
        let pool = scene_pool();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let batch = sample_pair(&pool, &[], 4, &mut rng).unwrap();
        assert_eq!(batch.inactive_assignment_a, SetAssignment::Unconstrained);
        assert_eq!(batch.inactive_assignment_b, SetAssignment::Unconstrained);
        assert_eq!(batch.set_a.len(), 4);
        assert_eq!(batch.set_b.len(), 4);
    }

    #[test]
    fn assignment_collision_rate_matches_one_over_k() {
        // One inactive factor with k = 10: P(A and B collide) = 1/k.
        let pool = scene_pool();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let inactive = vec!["wall_hue".to_string()];
        let trials = 1000;
        let mut collisions = 0;
        for _ in 0..trials {
            let batch = sample_pair(&pool, &inactive, 2, &mut rng).unwrap();
            let a = assignment_value(&batch.inactive_assignment_a, "wall_hue").unwrap();
            let b = assignment_value(&batch.inactive_assignment_b, "wall_hue").unwrap();
            if a == b {
                collisions += 1;
            }
        }
        let p = 0.1;
        let sigma = (trials as f64 * p * (1.0 - p)).sqrt();
        let expected = trials as f64 * p;
        assert!(
            (collisions as f64 - expected).abs() < 3.0 * sigma,
            "collisions {collisions} outside 3 sigma of {expected}"
        );
    }

    #[test]
    fn assignments_are_independent_across_the_pair() {
        let pool = scene_pool();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let inactive = vec!["wall_hue".to_string()];
        let n = 2000;
        let (mut xs, mut ys) = (Vec::new(), Vec::new());
        for _ in 0..n {
            let batch = sample_pair(&pool, &inactive, 2, &mut rng).unwrap();
            let a = assignment_value(&batch.inactive_assignment_a, "wall_hue").unwrap();
            let b = assignment_value(&batch.inactive_assignment_b, "wall_hue").unwrap();
            xs.push(a.as_f64());
            ys.push(b.as_f64());
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let mx = mean(&xs);
        let my = mean(&ys);
        let cov: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / n as f64;
        let sx = (xs.iter().map(|x| (x - mx) * (x - mx)).sum::<f64>() / n as f64).sqrt();
        let sy = (ys.iter().map(|y| (y - my) * (y - my)).sum::<f64>() / n as f64).sqrt();
        let corr = cov / (sx * sy);
        assert!(
            corr.abs() < 3.0 / (n as f64).sqrt(),
            "assignment correlation {corr} is not near zero"
        );
    }

    #[test]
    fn titration_fraction_formula_and_monotonicity() {
        let schedule = TitrationSchedule::new(0.10, 4000, 1000).unwrap();
        assert_eq!(schedule.fraction(0), 0.0);
        assert_eq!(schedule.fraction(999), 0.0);
        assert!((schedule.fraction(1000) - 0.025).abs() < 1e-12);
        assert!((schedule.fraction(3999) - 0.075).abs() < 1e-12);
        assert!((schedule.fraction(4000) - 0.10).abs() < 1e-12);
        assert!((schedule.fraction(1_000_000) - 0.10).abs() < 1e-12);
        let mut last = 0.0;
        for step in 0..10_000 {
            let f = schedule.fraction(step);
            assert!(f >= last, "titration must be non-decreasing");
            last = f;
        }
    }

    #[test]
    fn step_zero_has_no_extraneous_elements() {
        let pool = scene_pool();
        let extraneous = DataPool::generative(RenderedDataset::pose_glyphs(9));
        let schedule = TitrationSchedule::new(0.10, 4000, 1000).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let batch = sample_pair_x(
            &pool,
            &extraneous,
            &["wall_hue".to_string()],
            8,
            &schedule,
            0,
            &mut rng,
        )
        .unwrap();
        assert_eq!(batch.extraneous_count, 0);
        assert!(batch.provenance_b.iter().all(|t| t == "procedural"));
    }

    #[test]
    fn final_step_rounds_half_to_even() {
        // 0.10 * 32 = 3.2 -> 3 extraneous elements, visible in provenance.
        let pool = scene_pool();
        let extraneous = DataPool::generative(RenderedDataset::pose_glyphs(9));
        let schedule = TitrationSchedule::new(0.10, 4000, 1000).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let batch = sample_pair_x(
            &pool,
            &extraneous,
            &["wall_hue".to_string()],
            32,
            &schedule,
            4000,
            &mut rng,
        )
        .unwrap();
        assert_eq!(batch.extraneous_count, 3);
        let foreign = batch
            .provenance_b
            .iter()
            .filter(|t| *t == "glyph_pose")
            .count();
        assert_eq!(foreign, 3);
        assert_eq!(batch.set_b.len(), 32);
    }

    #[test]
    fn zero_fraction_never_touches_the_extraneous_pool() {
        let pool = scene_pool();
        // An empty extraneous pool is fine as long as the fraction is zero.
        let extraneous = DataPool::Finite(FiniteDataset::from_observations(vec![], None));
        let schedule = TitrationSchedule::new(0.0, 0, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let batch = sample_pair_x(
            &pool,
            &extraneous,
            &["wall_hue".to_string()],
            8,
            &schedule,
            50_000,
            &mut rng,
        )
        .unwrap();
        assert_eq!(batch.extraneous_count, 0);
        assert_eq!(batch.inactive_assignment_b, SetAssignment::Unconstrained);
    }

    #[test]
    fn positive_fraction_with_empty_extraneous_pool_errors() {
        let pool = scene_pool();
        let extraneous = DataPool::Finite(FiniteDataset::from_observations(vec![], None));
        let schedule = TitrationSchedule::new(0.5, 0, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let err = sample_pair_x(
            &pool,
            &extraneous,
            &["wall_hue".to_string()],
            8,
            &schedule,
            100,
            &mut rng,
        )
        .unwrap_err();
        assert!(matches!(err, CoreError::Curation(_)));
    }

    #[test]
    fn sets_below_two_elements_are_rejected() {
        let pool = scene_pool();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let err = sample_pair(&pool, &[], 1, &mut rng).unwrap_err();
        assert!(matches!(err, CoreError::Contract(_)));
    }
}
