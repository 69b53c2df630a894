//! Deterministic procedural renderers with exact factor ground truth.
//!
//! Three desk-scale datasets share the same interface:
//! - a six-factor scene (hue bands plus a centered geometric shape),
//! - handwritten-style digit glyphs (class / stroke thickness / slant),
//! - colored asymmetric glyphs at arbitrary planar rotation, for pose work.

pub mod glyphs;

use crate::error::{CoreError, Result};
use crate::factor::{FactorDomain, FactorSpec, FactorValue, LatentCode};
use crate::observation::Observation;
use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

/// Canvas side for the six-factor scene.
pub const SCENE_CANVAS: usize = 64;
/// Band layout: top quarter wall, middle half scene, bottom quarter floor.
pub const WALL_BAND_FRACTION: f64 = 0.25;
pub const FLOOR_BAND_FRACTION: f64 = 0.25;
/// Shape radius in pixels at scale factor 1.0; bounded so no rotation can
/// spill out of the middle band.
pub const SCENE_MAX_SHAPE_RADIUS: f64 = 14.0;
/// Background gray of the middle band, before the seed dither.
pub const SCENE_BACKGROUND: f64 = 0.42;
/// Amplitude of the deterministic per-pixel dither keyed by the dataset
/// seed (applied to the middle-band background only).
pub const SCENE_DITHER: f64 = 1.0 / 512.0;

/// The six-factor scene specification: three hue factors, a continuous
/// scale, four shape kinds, and a continuous orientation in degrees.
pub fn scene_spec() -> FactorSpec {
    FactorSpec::new(vec![
        ("floor_hue".into(), FactorDomain::discrete(10)),
        ("wall_hue".into(), FactorDomain::discrete(10)),
        ("object_hue".into(), FactorDomain::discrete(10)),
        ("scale".into(), FactorDomain::continuous(0.5, 1.0)),
        ("shape".into(), FactorDomain::discrete(4)),
        ("orientation".into(), FactorDomain::continuous(-30.0, 30.0)),
    ])
    .unwrap()
}

/// Which procedural renderer a [`RenderedDataset`] uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Renderer {
    Scene,
    DigitGlyphs,
    PoseGlyphs,
}

/// A deterministic map from latent codes to observations: the same code and
/// seed always produce a bit-identical image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderedDataset {
    pub spec: FactorSpec,
    pub renderer: Renderer,
    pub rng_seed: u64,
}

impl RenderedDataset {
    pub fn scene(rng_seed: u64) -> Self {
        RenderedDataset {
            spec: scene_spec(),
            renderer: Renderer::Scene,
            rng_seed,
        }
    }

    pub fn digit_glyphs(rng_seed: u64) -> Self {
        RenderedDataset {
            spec: glyphs::digit_spec(),
            renderer: Renderer::DigitGlyphs,
            rng_seed,
        }
    }

    pub fn pose_glyphs(rng_seed: u64) -> Self {
        RenderedDataset {
            spec: glyphs::pose_spec(),
            renderer: Renderer::PoseGlyphs,
            rng_seed,
        }
    }

    pub fn render(&self, code: &LatentCode) -> Result<Observation> {
        code.validate(&self.spec)
            .map_err(|e| CoreError::Contract(format!("latent code does not match dataset spec: {e}")))?;
        match self.renderer {
            Renderer::Scene => render_scene(&self.spec, code, self.rng_seed),
            Renderer::DigitGlyphs => glyphs::render_digit(&self.spec, code),
            Renderer::PoseGlyphs => glyphs::render_pose_glyph(&self.spec, code),
        }
    }
}

/// Renders the six-factor scene. Accepts any spec with the canonical six
/// factors (domains may be smaller, e.g. three levels per factor in tests);
/// factor values are mapped to fractions of their domain.
pub fn render_procedural(code: &LatentCode, seed: u64) -> Result<Observation> {
    let spec = scene_spec();
    code.validate(&spec)
        .map_err(|e| CoreError::Contract(format!("latent code does not match the scene spec: {e}")))?;
    render_scene(&spec, code, seed)
}

fn render_scene(spec: &FactorSpec, code: &LatentCode, seed: u64) -> Result<Observation> {
    if spec.len() != 6 {
        return Err(CoreError::Contract(format!(
            "scene renderer needs exactly 6 factors, got {}",
            spec.len()
        )));
    }
    let n = SCENE_CANVAS;
    let wall_rows = (n as f64 * WALL_BAND_FRACTION) as usize;
    let floor_rows = (n as f64 * FLOOR_BAND_FRACTION) as usize;
    let floor_start = n - floor_rows;

    let frac = |idx: usize| domain_fraction(spec.domain(idx), code.value(idx));
    let floor_color = hsv_to_rgb(frac(0), 0.60, 0.70);
    let wall_color = hsv_to_rgb(frac(1), 0.55, 0.78);
    let object_color = hsv_to_rgb(frac(2), 0.85, 0.90);
    let radius = (0.5 + 0.5 * frac(3)) * SCENE_MAX_SHAPE_RADIUS;
    let shape = match code.value(4) {
        FactorValue::Discrete(v) => ShapeKind::from_index(*v),
        _ => return Err(CoreError::Contract("shape factor must be discrete".into())),
    };
    let theta = (-30.0 + 60.0 * frac(5)).to_radians();

    let mut image = Array3::zeros((n, n, 3));
    let mut mask = Array2::zeros((n, n));
    let (cy, cx) = (n as f64 / 2.0, n as f64 / 2.0);
    let (sin_t, cos_t) = theta.sin_cos();

    for y in 0..n {
        for x in 0..n {
            let base = if y < wall_rows {
                wall_color
            } else if y >= floor_start {
                floor_color
            } else {
                let d = SCENE_DITHER * (hash_unit(seed, x as u64, y as u64) * 2.0 - 1.0);
                let g = (SCENE_BACKGROUND + d).clamp(0.0, 1.0);
                [g, g, g]
            };
            let coverage = if y >= wall_rows && y < floor_start {
                // 2x2 supersampled inside test in shape-local coordinates.
                let mut hits = 0;
                for (sy, sx) in [(0.25, 0.25), (0.25, 0.75), (0.75, 0.25), (0.75, 0.75)] {
                    let dy = y as f64 + sy - cy;
                    let dx = x as f64 + sx - cx;
                    // Rotate by -theta, then scale to unit coordinates.
                    let ux = (dx * cos_t + dy * sin_t) / radius;
                    let uy = (-dx * sin_t + dy * cos_t) / radius;
                    if shape.contains(ux, uy) {
                        hits += 1;
                    }
                }
                hits as f64 / 4.0
            } else {
                0.0
            };
            for c in 0..3 {
                image[[y, x, c]] = base[c] * (1.0 - coverage) + object_color[c] * coverage;
            }
            mask[[y, x]] = coverage;
        }
    }
    Observation::new(image, Some(code.clone()), "procedural")?.with_mask(mask)
}

#[derive(Debug, Clone, Copy)]
enum ShapeKind {
    Square,
    Triangle,
    Bar,
    Cross,
}

impl ShapeKind {
    fn from_index(v: usize) -> Self {
        match v % 4 {
            0 => ShapeKind::Square,
            1 => ShapeKind::Triangle,
            2 => ShapeKind::Bar,
            _ => ShapeKind::Cross,
        }
    }

    /// Inside test in unit coordinates; every shape fits the unit disk so
    /// rotation never spills outside the scaled radius.
    fn contains(self, x: f64, y: f64) -> bool {
        match self {
            ShapeKind::Square => x.abs() <= 0.70 && y.abs() <= 0.70,
            ShapeKind::Triangle => {
                // Equilateral triangle inscribed in the unit circle,
                // apex pointing up (negative y is up in image space).
                let v = [
                    (0.0, -1.0),
                    (0.866_025_403_784_438_6, 0.5),
                    (-0.866_025_403_784_438_6, 0.5),
                ];
                let mut inside = true;
                for i in 0..3 {
                    let (x1, y1) = v[i];
                    let (x2, y2) = v[(i + 1) % 3];
                    let cross = (x2 - x1) * (y - y1) - (y2 - y1) * (x - x1);
                    inside &= cross >= 0.0;
                }
                inside
            }
            ShapeKind::Bar => x.abs() <= 0.90 && y.abs() <= 0.28,
            ShapeKind::Cross => {
                (x.abs() <= 0.28 && y.abs() <= 0.90) || (y.abs() <= 0.28 && x.abs() <= 0.90)
            }
        }
    }
}

/// Maps a factor value to a fraction of its domain in `[0, 1)` for discrete
/// factors (`v / k`) and `[0, 1]` for continuous ones.
pub(crate) fn domain_fraction(domain: &FactorDomain, value: &FactorValue) -> f64 {
    match (domain, value) {
        (FactorDomain::Discrete { cardinality }, FactorValue::Discrete(v)) => {
            *v as f64 / *cardinality as f64
        }
        (FactorDomain::Continuous { lo, hi }, FactorValue::Continuous(v)) => (v - lo) / (hi - lo),
        _ => 0.0,
    }
}

/// HSV to RGB with h in [0, 1) (wrapping), s and v in [0, 1].
pub(crate) fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h = (h.rem_euclid(1.0)) * 6.0;
    let i = h.floor() as i64;
    let f = h - i as f64;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match i.rem_euclid(6) {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// RGB to HSV, the inverse of [`hsv_to_rgb`] up to hue wrap-around.
pub(crate) fn rgb_to_hsv(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let h = if delta < 1e-12 {
        0.0
    } else if (max - r).abs() < 1e-12 {
        (((g - b) / delta).rem_euclid(6.0)) / 6.0
    } else if (max - g).abs() < 1e-12 {
        ((b - r) / delta + 2.0) / 6.0
    } else {
        ((r - g) / delta + 4.0) / 6.0
    };
    let s = if max < 1e-12 { 0.0 } else { delta / max };
    (h, s, max)
}

/// SplitMix64-style integer hash mapped to [0, 1). Deterministic across
/// platforms; used for the scene background dither.
fn hash_unit(seed: u64, x: u64, y: u64) -> f64 {
    let mut z = seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(x.wrapping_mul(0xBF58_476D_1CE4_E5B9))
        .wrapping_add(y.wrapping_mul(0x94D0_49BB_1331_11EB));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    (z >> 11) as f64 / (1u64 << 53) as f64
}
