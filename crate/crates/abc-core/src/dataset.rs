//! Data pools behind set curation: generative procedural datasets sampled
//! on demand, and finite datasets (ingested or pre-rendered) filtered by
//! ground-truth factors or a pre-grouped key.

use crate::error::{CoreError, Result};
use crate::factor::{FactorSpec, FactorValue, LatentCode, PartialAssignment};
use crate::observation::Observation;
use crate::render::RenderedDataset;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Restricts which values selected factors may take when sampling from a
/// generative pool (both for curation keys and free sampling). Used to
/// withhold values during training, e.g. hold out glyph instances.
pub type ValueRestrictions = BTreeMap<String, Vec<FactorValue>>;

/// A source of observations for curation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum DataPool {
    /// Infinite pool: sample a latent (under optional value restrictions),
    /// render deterministically.
    Generative {
        dataset: RenderedDataset,
        restrictions: ValueRestrictions,
    },
    /// Finite pool with optional ground-truth latents and optional
    /// label groups.
    Finite(FiniteDataset),
}

impl DataPool {
    pub fn generative(dataset: RenderedDataset) -> Self {
        DataPool::Generative {
            dataset,
            restrictions: ValueRestrictions::new(),
        }
    }

    pub fn generative_restricted(dataset: RenderedDataset, restrictions: ValueRestrictions) -> Self {
        DataPool::Generative {
            dataset,
            restrictions,
        }
    }

    pub fn spec(&self) -> Option<&FactorSpec> {
        match self {
            DataPool::Generative { dataset, .. } => Some(&dataset.spec),
            DataPool::Finite(f) => f.spec.as_ref(),
        }
    }

    /// One unconstrained draw (free values for every factor, subject to
    /// generative restrictions).
    pub fn sample_unconstrained(&self, rng: &mut ChaCha8Rng) -> Result<Observation> {
        match self {
            DataPool::Generative {
                dataset,
                restrictions,
            } => {
                let code = sample_restricted_latent(
                    &dataset.spec,
                    rng,
                    &PartialAssignment::new(),
                    restrictions,
                )?;
                dataset.render(&code)
            }
            DataPool::Finite(f) => {
                if f.observations.is_empty() {
                    return Err(CoreError::Curation("finite dataset is empty".to_string()));
                }
                let idx = rng.gen_range(0..f.observations.len());
                Ok(f.observations[idx].clone())
            }
        }
    }

    pub fn is_empty(&self) -> bool {
        match self {
            DataPool::Generative { .. } => false,
            DataPool::Finite(f) => f.observations.is_empty(),
        }
    }

    /// Values an inactive-factor curation key may take (restricted to the
    /// allowed list for generative pools, to observed bins for finite ones).
    pub fn key_values(&self, factor: &str) -> Result<Vec<FactorValue>> {
        match self {
            DataPool::Generative {
                dataset,
                restrictions,
            } => {
                let idx = dataset.spec.index_of(factor)?;
                match restrictions.get(factor) {
                    Some(allowed) if !allowed.is_empty() => Ok(allowed.clone()),
                    _ => Ok(dataset.spec.domain(idx).key_values()),
                }
            }
            DataPool::Finite(f) => f.key_values(factor),
        }
    }
}

/// Samples a latent with `fixed` assignments, uniform draws elsewhere, and
/// uniform choice from `restrictions` where present.
pub fn sample_restricted_latent(
    spec: &FactorSpec,
    rng: &mut ChaCha8Rng,
    fixed: &PartialAssignment,
    restrictions: &ValueRestrictions,
) -> Result<LatentCode> {
    if restrictions.is_empty() {
        return crate::factor::sample_latent(spec, rng, fixed);
    }
    let mut full = fixed.clone();
    for (name, allowed) in restrictions {
        if full.contains_key(name) {
            continue;
        }
        if allowed.is_empty() {
            return Err(CoreError::Contract(format!(
                "empty value restriction for factor {name:?}"
            )));
        }
        let idx = spec.index_of(name)?;
        let value = allowed[rng.gen_range(0..allowed.len())];
        if !spec.domain(idx).contains(&value) {
            return Err(CoreError::Domain(format!(
                "restricted value {value:?} outside the domain of {name:?}"
            )));
        }
        full.insert(name.clone(), value);
    }
    let mut code = crate::factor::sample_latent(spec, rng, &full)?;
    // Restriction-sampled factors are still active: they vary freely across
    // elements, they just avoid withheld values.
    for (i, name) in spec.names().enumerate().map(|(i, n)| (i, n.to_string())) {
        if restrictions.contains_key(&name) && !fixed.contains_key(&name) {
            code.partition[i] = crate::factor::Activity::Active;
        }
    }
    Ok(code)
}

/// A finite dataset: observations plus whatever grouping structure is
/// available for curation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FiniteDataset {
    pub observations: Vec<Observation>,
    /// Present when observations carry ground-truth latents.
    pub spec: Option<FactorSpec>,
    /// Pre-grouped key (e.g. class label, instance id): name plus a map
    /// from label to member indices.
    pub group_key: Option<String>,
    pub groups: BTreeMap<usize, Vec<usize>>,
}

impl FiniteDataset {
    pub fn from_observations(observations: Vec<Observation>, spec: Option<FactorSpec>) -> Self {
        FiniteDataset {
            observations,
            spec,
            group_key: None,
            groups: BTreeMap::new(),
        }
    }

    pub fn with_groups(mut self, key: &str, groups: BTreeMap<usize, Vec<usize>>) -> Self {
        self.group_key = Some(key.to_string());
        self.groups = groups;
        self
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    fn key_values(&self, factor: &str) -> Result<Vec<FactorValue>> {
        if let Some(key) = &self.group_key {
            if key == factor {
                return Ok(self.groups.keys().map(|k| FactorValue::Discrete(*k)).collect());
            }
        }
        let spec = self.spec.as_ref().ok_or_else(|| {
            CoreError::Curation(format!(
                "finite dataset has neither latents nor a group key for factor {factor:?}"
            ))
        })?;
        let idx = spec.index_of(factor)?;
        Ok(spec.domain(idx).key_values())
    }

    /// Indices whose elements match the assignment: group lookup when the
    /// assignment is exactly the group key, otherwise a latent filter
    /// (continuous factors match by curation-key bin).
    pub fn matching_indices(&self, assignment: &PartialAssignment) -> Result<Vec<usize>> {
        if assignment.is_empty() {
            return Ok((0..self.observations.len()).collect());
        }
        if let (Some(key), 1) = (&self.group_key, assignment.len()) {
            if let Some(value) = assignment.get(key) {
                let label = match value {
                    FactorValue::Discrete(v) => *v,
                    FactorValue::Continuous(_) => {
                        return Err(CoreError::Curation(format!(
                            "group key {key:?} requires a discrete label"
                        )))
                    }
                };
                return Ok(self.groups.get(&label).cloned().unwrap_or_default());
            }
        }
        let spec = self.spec.as_ref().ok_or_else(|| {
            CoreError::Curation(
                "finite dataset lacks ground-truth latents for factor filtering".to_string(),
            )
        })?;
        let mut targets = Vec::new();
        for (name, value) in assignment {
            let idx = spec.index_of(name)?;
            let bin = spec.domain(idx).key_bin(value)?;
            targets.push((idx, bin));
        }
        let mut out = Vec::new();
        'obs: for (i, obs) in self.observations.iter().enumerate() {
            let Some(latent) = &obs.source_latent else {
                continue;
            };
            for (idx, bin) in &targets {
                if spec.domain(*idx).key_bin(latent.value(*idx))? != *bin {
                    continue 'obs;
                }
            }
            out.push(i);
        }
        Ok(out)
    }

    /// Draws `size` indices from `pool`, without replacement when the pool
    /// is large enough, with replacement (flagged) otherwise.
    pub fn draw(
        pool: &[usize],
        size: usize,
        rng: &mut ChaCha8Rng,
    ) -> (Vec<usize>, bool) {
        if pool.len() >= size {
            let mut indices: Vec<usize> = pool.to_vec();
            indices.shuffle(rng);
            indices.truncate(size);
            (indices, false)
        } else {
            let picks = (0..size).map(|_| pool[rng.gen_range(0..pool.len())]).collect();
            (picks, true)
        }
    }
}
