//! Observations: images with optional ground-truth latents, a domain tag,
//! and an optional foreground mask for synthetic renders.

use crate::error::{CoreError, Result};
use crate::factor::LatentCode;
use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

/// A single observed image. Pixels are `H x W x C` reals in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub image: Array3<f64>,
    pub source_latent: Option<LatentCode>,
    pub domain_tag: String,
    /// Foreground coverage in `[0, 1]`; present only for synthetic renders
    /// that support background replacement.
    pub mask: Option<Array2<f64>>,
}

impl Observation {
    pub fn new(image: Array3<f64>, source_latent: Option<LatentCode>, domain_tag: &str) -> Result<Self> {
        if !image.iter().all(|&v| (0.0..=1.0).contains(&v)) {
            return Err(CoreError::Domain(
                "pixel values must lie in [0, 1]".to_string(),
            ));
        }
        Ok(Observation {
            image,
            source_latent,
            domain_tag: domain_tag.to_string(),
            mask: None,
        })
    }

    pub fn with_mask(mut self, mask: Array2<f64>) -> Result<Self> {
        let (h, w, _) = self.shape();
        if mask.dim() != (h, w) {
            return Err(CoreError::Contract(format!(
                "mask shape {:?} does not match image {h}x{w}",
                mask.dim()
            )));
        }
        self.mask = Some(mask);
        Ok(self)
    }

    /// `(height, width, channels)`.
    pub fn shape(&self) -> (usize, usize, usize) {
        let d = self.image.dim();
        (d.0, d.1, d.2)
    }
}
