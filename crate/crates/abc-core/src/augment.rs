//! Paired random image transforms used by the double-augmentation loss to
//! suppress nuisance factors: crop translation, brightness, hue, per-pixel
//! Gaussian noise, Sobel edge mixing, and background replacement for
//! synthetic images with a foreground mask.
//!
//! Randomness lives entirely in sampling. A `TransformSample` is a concrete
//! parameter draw; applying the same sample twice is deterministic
//! (per-sample noise is keyed by a stored seed).

use crate::error::{CoreError, Result};
use crate::observation::Observation;
use crate::render::{hsv_to_rgb, rgb_to_hsv};
use ndarray::{Array2, Array3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Pool of background images used to repaint synthetic foregrounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackgroundPool {
    images: Vec<Array3<f64>>,
}

impl BackgroundPool {
    pub fn new(images: Vec<Array3<f64>>) -> Result<Self> {
        if images.is_empty() {
            return Err(CoreError::Config("background pool is empty".to_string()));
        }
        Ok(BackgroundPool { images })
    }

    /// Loads every raster image in `dir` (sorted by file name for
    /// determinism), scaled to `[0, 1]` RGB.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let mut paths: Vec<_> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .collect();
        paths.sort();
        let mut images = Vec::new();
        for path in paths {
            let Ok(img) = image::open(&path) else {
                continue;
            };
            let rgb = img.to_rgb8();
            let (w, h) = rgb.dimensions();
            let mut arr = Array3::zeros((h as usize, w as usize, 3));
            for (x, y, pixel) in rgb.enumerate_pixels() {
                for c in 0..3 {
                    arr[[y as usize, x as usize, c]] = pixel[c] as f64 / 255.0;
                }
            }
            images.push(arr);
        }
        Self::new(images)
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

/// Which transforms are enabled and how strong they are. Disabled stages
/// are `None`; a spec with everything disabled samples identity transforms.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TransformSpec {
    /// Translation amplitude as a fraction of each image dimension.
    pub crop_translate_amplitude: Option<f64>,
    /// Additive brightness delta range.
    pub brightness_delta: Option<(f64, f64)>,
    /// Hue rotation range, in fractions of the color wheel.
    pub hue_delta: Option<(f64, f64)>,
    /// Standard deviation of per-pixel Gaussian noise.
    pub pixel_noise_std: Option<f64>,
    /// Sobel edge mixing weight range.
    pub edge_mix_weight: Option<(f64, f64)>,
    /// Whether to repaint backgrounds of masked observations.
    pub paint_background: bool,
    /// Background source, required when `paint_background` is set.
    #[serde(skip)]
    pub background_pool: Option<BackgroundPool>,
}

impl TransformSpec {
    /// Identity: every transform disabled.
    pub fn disabled() -> Self {
        TransformSpec::default()
    }

    /// Default Sobel mixing range when enabled without an explicit range.
    pub const DEFAULT_EDGE_MIX: (f64, f64) = (0.0, 0.3);

    pub fn validate(&self) -> Result<()> {
        if let Some(a) = self.crop_translate_amplitude {
            if !(a >= 0.0 && a.is_finite()) {
                return Err(CoreError::Config(format!(
                    "crop amplitude must be >= 0, got {a}"
                )));
            }
        }
        if let Some(s) = self.pixel_noise_std {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(CoreError::Config(format!("noise std must be >= 0, got {s}")));
            }
        }
        for (name, range) in [
            ("brightness_delta", self.brightness_delta),
            ("hue_delta", self.hue_delta),
            ("edge_mix_weight", self.edge_mix_weight),
        ] {
            if let Some((lo, hi)) = range {
                if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                    return Err(CoreError::Config(format!(
                        "{name} range [{lo}, {hi}] is invalid"
                    )));
                }
            }
        }
        if self.paint_background && self.background_pool.is_none() {
            return Err(CoreError::Config(
                "background paint requested without a background pool".to_string(),
            ));
        }
        Ok(())
    }
}

/// A concrete draw of every enabled transform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformSample {
    /// Translation as a fraction of (height, width); applied as whole-pixel
    /// shifts with edge replication.
    pub translate: Option<(f64, f64)>,
    pub brightness: Option<f64>,
    pub hue: Option<f64>,
    /// `(std, seed)`: the per-pixel noise field is regenerated from the
    /// seed on every application.
    pub noise: Option<(f64, u64)>,
    pub edge_mix: Option<f64>,
    /// `(pool index, offset fraction y, offset fraction x)` of the
    /// background crop.
    pub background: Option<(usize, f64, f64)>,
}

impl TransformSample {
    pub fn identity() -> Self {
        TransformSample {
            translate: None,
            brightness: None,
            hue: None,
            noise: None,
            edge_mix: None,
            background: None,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.translate.is_none()
            && self.brightness.is_none()
            && self.hue.is_none()
            && self.noise.is_none()
            && self.edge_mix.is_none()
            && self.background.is_none()
    }
}

fn sample_one(spec: &TransformSpec, rng: &mut ChaCha8Rng) -> TransformSample {
    TransformSample {
        translate: spec
            .crop_translate_amplitude
            .map(|a| (rng.gen_range(-a..=a), rng.gen_range(-a..=a))),
        brightness: spec.brightness_delta.map(|(lo, hi)| range_draw(rng, lo, hi)),
        hue: spec.hue_delta.map(|(lo, hi)| range_draw(rng, lo, hi)),
        noise: spec.pixel_noise_std.map(|s| (s, rng.gen::<u64>())),
        edge_mix: spec.edge_mix_weight.map(|(lo, hi)| range_draw(rng, lo, hi)),
        background: if spec.paint_background {
            let pool = spec.background_pool.as_ref().expect("validated");
            Some((
                rng.gen_range(0..pool.len()),
                rng.gen::<f64>(),
                rng.gen::<f64>(),
            ))
        } else {
            None
        },
    }
}

fn range_draw(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..hi)
    }
}

/// Draws the two independent transforms used per image per training step.
pub fn sample_transform_pair(
    spec: &TransformSpec,
    rng: &mut ChaCha8Rng,
) -> Result<(TransformSample, TransformSample)> {
    spec.validate()?;
    Ok((sample_one(spec, rng), sample_one(spec, rng)))
}

/// Applies a transform sample without a background pool; painting samples
/// applied to masked observations are a config error here. Training code
/// goes through [`Augmenter::apply`], which supplies the pool.
pub fn apply(sample: &TransformSample, obs: &Observation) -> Result<Observation> {
    apply_with_pool(sample, obs, None)
}

/// Applies a transform sample. Stages run in a fixed order: background
/// paint (masked observations only), crop translation, brightness, hue,
/// Sobel edge mixing, pixel noise; the image is clamped to `[0, 1]` after
/// every stage and the output shape equals the input shape.
pub fn apply_with_pool(
    sample: &TransformSample,
    obs: &Observation,
    pool: Option<&BackgroundPool>,
) -> Result<Observation> {
    if sample.is_identity() {
        return Ok(obs.clone());
    }
    let (h, w, c) = obs.shape();
    let mut image = obs.image.clone();
    let mut mask = obs.mask.clone();

    if let Some((pool_idx, oy, ox)) = sample.background {
        // Paint applies only to synthetic observations carrying a mask.
        if let Some(m) = &obs.mask {
            let pool = pool.ok_or_else(|| {
                CoreError::Config(
                    "background paint requested without a background pool".to_string(),
                )
            })?;
            let crop = background_crop(pool, pool_idx, oy, ox, h, w, c);
            for y in 0..h {
                for x in 0..w {
                    let alpha = m[[y, x]];
                    for ch in 0..c {
                        image[[y, x, ch]] =
                            alpha * image[[y, x, ch]] + (1.0 - alpha) * crop[[y, x, ch]];
                    }
                }
            }
        }
    }

    if let Some((fy, fx)) = sample.translate {
        let dy = (fy * h as f64).round() as i64;
        let dx = (fx * w as f64).round() as i64;
        image = shift_replicate(&image, dy, dx);
        if let Some(m) = mask.take() {
            mask = Some(shift_replicate_2d(&m, dy, dx));
        }
    }

    if let Some(delta) = sample.brightness {
        image.mapv_inplace(|v| (v + delta).clamp(0.0, 1.0));
    }

    if let Some(delta) = sample.hue {
        // Hue rotation only makes sense for 3-channel images; grayscale
        // observations pass through unchanged.
        if c == 3 {
            for y in 0..h {
                for x in 0..w {
                    let (hh, ss, vv) = rgb_to_hsv(
                        image[[y, x, 0]],
                        image[[y, x, 1]],
                        image[[y, x, 2]],
                    );
                    let rgb = hsv_to_rgb(hh + delta, ss, vv);
                    for ch in 0..3 {
                        image[[y, x, ch]] = rgb[ch].clamp(0.0, 1.0);
                    }
                }
            }
        }
    }

    if let Some(weight) = sample.edge_mix {
        let edges = sobel_magnitude(&image);
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    image[[y, x, ch]] =
                        (image[[y, x, ch]] + weight * edges[[y, x, ch]]).clamp(0.0, 1.0);
                }
            }
        }
    }

    if let Some((std, seed)) = sample.noise {
        if std > 0.0 {
            let mut noise_rng = ChaCha8Rng::seed_from_u64(seed);
            let normal = Normal::new(0.0, std).map_err(|e| CoreError::Config(e.to_string()))?;
            image.mapv_inplace(|v| (v + normal.sample(&mut noise_rng)).clamp(0.0, 1.0));
        }
    }

    let mut out = Observation::new(image, obs.source_latent.clone(), &obs.domain_tag)?;
    if let Some(m) = mask {
        out = out.with_mask(m)?;
    }
    Ok(out)
}

fn background_crop(
    pool: &BackgroundPool,
    pool_idx: usize,
    oy: f64,
    ox: f64,
    h: usize,
    w: usize,
    c: usize,
) -> Array3<f64> {
    let src = &pool.images[pool_idx % pool.images.len()];
    let (sh, sw, sc) = (src.dim().0, src.dim().1, src.dim().2);
    let y0 = ((sh.saturating_sub(h)) as f64 * oy) as usize;
    let x0 = ((sw.saturating_sub(w)) as f64 * ox) as usize;
    let mut out = Array3::zeros((h, w, c));
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let sy = (y0 + y).min(sh - 1);
                let sx = (x0 + x).min(sw - 1);
                out[[y, x, ch]] = src[[sy, sx, ch.min(sc - 1)]];
            }
        }
    }
    out
}

/// Couples a [`TransformSpec`] with its background pool for application.
/// Sampling and application both go through this wrapper in training code.
#[derive(Debug, Clone)]
pub struct Augmenter {
    pub spec: TransformSpec,
}

impl Augmenter {
    pub fn new(spec: TransformSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Augmenter { spec })
    }

    pub fn sample_pair(&self, rng: &mut ChaCha8Rng) -> (TransformSample, TransformSample) {
        (sample_one(&self.spec, rng), sample_one(&self.spec, rng))
    }

    pub fn apply(&self, sample: &TransformSample, obs: &Observation) -> Result<Observation> {
        apply_with_pool(sample, obs, self.spec.background_pool.as_ref())
    }
}

fn shift_replicate(image: &Array3<f64>, dy: i64, dx: i64) -> Array3<f64> {
    let (h, w, c) = image.dim();
    let mut out = Array3::zeros((h, w, c));
    for y in 0..h {
        for x in 0..w {
            let sy = (y as i64 - dy).clamp(0, h as i64 - 1) as usize;
            let sx = (x as i64 - dx).clamp(0, w as i64 - 1) as usize;
            for ch in 0..c {
                out[[y, x, ch]] = image[[sy, sx, ch]];
            }
        }
    }
    out
}

fn shift_replicate_2d(mask: &Array2<f64>, dy: i64, dx: i64) -> Array2<f64> {
    let (h, w) = mask.dim();
    let mut out = Array2::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let sy = (y as i64 - dy).clamp(0, h as i64 - 1) as usize;
            let sx = (x as i64 - dx).clamp(0, w as i64 - 1) as usize;
            out[[y, x]] = mask[[sy, sx]];
        }
    }
    out
}

/// Per-channel Sobel gradient magnitude with replicate borders, scaled by
/// 1/8 so a unit step edge has magnitude about one.
fn sobel_magnitude(image: &Array3<f64>) -> Array3<f64> {
    let (h, w, c) = image.dim();
    let mut out = Array3::zeros((h, w, c));
    let at = |y: i64, x: i64, ch: usize| -> f64 {
        let yy = y.clamp(0, h as i64 - 1) as usize;
        let xx = x.clamp(0, w as i64 - 1) as usize;
        image[[yy, xx, ch]]
    };
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            for ch in 0..c {
                let gx = at(y - 1, x + 1, ch) + 2.0 * at(y, x + 1, ch) + at(y + 1, x + 1, ch)
                    - at(y - 1, x - 1, ch)
                    - 2.0 * at(y, x - 1, ch)
                    - at(y + 1, x - 1, ch);
                let gy = at(y + 1, x - 1, ch) + 2.0 * at(y + 1, x, ch) + at(y + 1, x + 1, ch)
                    - at(y - 1, x - 1, ch)
                    - 2.0 * at(y - 1, x, ch)
                    - at(y - 1, x + 1, ch);
                out[[y as usize, x as usize, ch]] = (gx * gx + gy * gy).sqrt() / 8.0;
            }
        }
    }
    out
}
