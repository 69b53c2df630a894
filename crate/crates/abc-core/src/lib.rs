//! Set-supervised contrastive learning that isolates active factors of
//! variation by seeking approximate bijective correspondence between pairs
//! of sets, plus the machinery needed to run and evaluate it end to end:
//! procedural datasets with exact factor ground truth, set curation with
//! extraneous-data titration, paired random augmentations, a small
//! deterministic neural-network substrate with hand-verified gradients,
//! and evaluation probes (mutual-information estimation, classifier
//! probes, retrieval, pose codebook lookup).

#![deny(unsafe_code)]

pub mod augment;
pub mod curation;
pub mod dataset;
pub mod error;
pub mod factor;
pub mod idx;
pub mod loss;
pub mod metric;
pub mod head;
pub mod nn;
pub mod observation;
pub mod probes;
pub mod render;
#[cfg(feature = "shapes3d")]
pub mod shapes3d;
pub mod trainer;

pub use error::{CoreError, Result};
