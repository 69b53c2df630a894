//! Generative-factor abstractions: factor specifications, latent codes with
//! an active/inactive partition, and uniform latent sampling.

use crate::error::{CoreError, Result};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Number of levels continuous factors are discretized to when they are
/// used as exact-match inactive keys during set curation.
pub const CONTINUOUS_KEY_LEVELS: usize = 15;

/// Domain of a single generative factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FactorDomain {
    /// `k` discrete values `0..k`, `k >= 2`.
    Discrete { cardinality: usize },
    /// A non-degenerate real interval `[lo, hi]`.
    Continuous { lo: f64, hi: f64 },
}

impl FactorDomain {
    pub fn discrete(cardinality: usize) -> Self {
        FactorDomain::Discrete { cardinality }
    }

    pub fn continuous(lo: f64, hi: f64) -> Self {
        FactorDomain::Continuous { lo, hi }
    }

    /// Whether `value` lies inside this domain.
    pub fn contains(&self, value: &FactorValue) -> bool {
        match (self, value) {
            (FactorDomain::Discrete { cardinality }, FactorValue::Discrete(v)) => v < cardinality,
            (FactorDomain::Continuous { lo, hi }, FactorValue::Continuous(v)) => {
                v.is_finite() && *v >= *lo && *v <= *hi
            }
            _ => false,
        }
    }

    /// Values a curation key may take: every discrete value, or the bin
    /// centers of a fixed discretization for continuous factors.
    pub fn key_values(&self) -> Vec<FactorValue> {
        match self {
            FactorDomain::Discrete { cardinality } => {
                (0..*cardinality).map(FactorValue::Discrete).collect()
            }
            FactorDomain::Continuous { lo, hi } => (0..CONTINUOUS_KEY_LEVELS)
                .map(|i| {
                    let f = (i as f64 + 0.5) / CONTINUOUS_KEY_LEVELS as f64;
                    FactorValue::Continuous(lo + f * (hi - lo))
                })
                .collect(),
        }
    }

    /// Bin index of `value` under the curation-key discretization. Discrete
    /// values map to themselves.
    pub fn key_bin(&self, value: &FactorValue) -> Result<usize> {
        match (self, value) {
            (FactorDomain::Discrete { cardinality }, FactorValue::Discrete(v)) => {
                if v < cardinality {
                    Ok(*v)
                } else {
                    Err(CoreError::Domain(format!(
                        "discrete value {v} out of range 0..{cardinality}"
                    )))
                }
            }
            (FactorDomain::Continuous { lo, hi }, FactorValue::Continuous(v)) => {
                let f = (v - lo) / (hi - lo);
                let bin = (f * CONTINUOUS_KEY_LEVELS as f64).floor() as isize;
                Ok(bin.clamp(0, CONTINUOUS_KEY_LEVELS as isize - 1) as usize)
            }
            _ => Err(CoreError::Domain(
                "factor value kind does not match its domain".to_string(),
            )),
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> FactorValue {
        match self {
            FactorDomain::Discrete { cardinality } => {
                FactorValue::Discrete(rng.gen_range(0..*cardinality))
            }
            FactorDomain::Continuous { lo, hi } => {
                FactorValue::Continuous(rng.gen_range(*lo..*hi))
            }
        }
    }
}

/// A single factor value, aligned with a [`FactorDomain`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FactorValue {
    Discrete(usize),
    Continuous(f64),
}

impl FactorValue {
    /// The value as a real number (discrete values cast to their index).
    pub fn as_f64(&self) -> f64 {
        match self {
            FactorValue::Discrete(v) => *v as f64,
            FactorValue::Continuous(v) => *v,
        }
    }
}

/// Ordered list of named factors with their domains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorSpec {
    factors: Vec<(String, FactorDomain)>,
}

impl FactorSpec {
    /// Validates name uniqueness, cardinalities >= 2, and non-degenerate
    /// intervals.
    pub fn new(factors: Vec<(String, FactorDomain)>) -> Result<Self> {
        let mut seen = std::collections::BTreeSet::new();
        for (name, domain) in &factors {
            if !seen.insert(name.clone()) {
                return Err(CoreError::Contract(format!("duplicate factor name {name:?}")));
            }
            match domain {
                FactorDomain::Discrete { cardinality } if *cardinality < 2 => {
                    return Err(CoreError::Contract(format!(
                        "factor {name:?} needs cardinality >= 2, got {cardinality}"
                    )));
                }
                FactorDomain::Continuous { lo, hi } if !(lo.is_finite() && hi.is_finite() && lo < hi) => {
                    return Err(CoreError::Contract(format!(
                        "factor {name:?} needs a non-degenerate interval, got [{lo}, {hi}]"
                    )));
                }
                _ => {}
            }
        }
        Ok(FactorSpec { factors })
    }

    pub fn len(&self) -> usize {
        self.factors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.factors.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.factors.iter().map(|(n, _)| n.as_str())
    }

    pub fn factors(&self) -> &[(String, FactorDomain)] {
        &self.factors
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.factors
            .iter()
            .position(|(n, _)| n == name)
            .ok_or_else(|| CoreError::Contract(format!("unknown factor {name:?}")))
    }

    pub fn domain(&self, index: usize) -> &FactorDomain {
        &self.factors[index].1
    }

    pub fn name(&self, index: usize) -> &str {
        &self.factors[index].0
    }
}

/// Whether a factor was held fixed (inactive) or sampled freely (active)
/// for a particular latent code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activity {
    Active,
    Inactive,
}

/// A full assignment of factor values with an active/inactive partition,
/// aligned with a [`FactorSpec`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentCode {
    pub values: Vec<FactorValue>,
    pub partition: Vec<Activity>,
}

impl LatentCode {
    pub fn value(&self, index: usize) -> &FactorValue {
        &self.values[index]
    }

    /// Checks alignment with `spec`: length, value kinds, and ranges.
    pub fn validate(&self, spec: &FactorSpec) -> Result<()> {
        if self.values.len() != spec.len() || self.partition.len() != spec.len() {
            return Err(CoreError::Contract(format!(
                "latent code length {} does not match spec length {}",
                self.values.len(),
                spec.len()
            )));
        }
        for (i, value) in self.values.iter().enumerate() {
            if !spec.domain(i).contains(value) {
                return Err(CoreError::Domain(format!(
                    "value {value:?} outside the domain of factor {:?}",
                    spec.name(i)
                )));
            }
        }
        Ok(())
    }
}

/// Partial assignment of factor values by name; the unit of curation keys.
pub type PartialAssignment = BTreeMap<String, FactorValue>;

/// Samples a latent code: factors named in `fixed` take the given values
/// and are flagged inactive; every other factor is drawn uniformly over its
/// domain and flagged active.
pub fn sample_latent(
    spec: &FactorSpec,
    rng: &mut ChaCha8Rng,
    fixed: &PartialAssignment,
) -> Result<LatentCode> {
    for (name, value) in fixed {
        let idx = spec.index_of(name)?;
        if !spec.domain(idx).contains(value) {
            return Err(CoreError::Domain(format!(
                "fixed value {value:?} outside the domain of factor {name:?}"
            )));
        }
    }
    let mut values = Vec::with_capacity(spec.len());
    let mut partition = Vec::with_capacity(spec.len());
    for (name, domain) in spec.factors() {
        match fixed.get(name) {
            Some(value) => {
                values.push(*value);
                partition.push(Activity::Inactive);
            }
            None => {
                values.push(domain.sample(rng));
                partition.push(Activity::Active);
            }
        }
    }
    Ok(LatentCode { values, partition })
}
