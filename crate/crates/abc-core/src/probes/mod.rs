//! Evaluation probes over frozen embeddings: mutual-information
//! estimation, classifier probes, per-class retrieval, pose codebook
//! lookup, and PCA for the scatter plots.
//!
//! Probes are read-only over the representations; independent probes may
//! run concurrently and each owns its RNG.

pub mod classifier;
pub mod mine;
pub mod pca;
pub mod pose;
pub mod retrieval;

pub use classifier::{classifier_probe, ClassifierConfig, ProbeOutcome};
pub use mine::{estimate_mi, mine_loss, MiEstimate, MineBudget, NoiseSpec, StatisticsNetwork};
pub use pca::Pca;
pub use pose::{
    average_over_codebooks, codebook_lookup, geodesic_error, summarize_errors, Codebook,
    CodebookEntry, ErrorSummary, Quaternion,
};
pub use retrieval::retrieve_per_class;
