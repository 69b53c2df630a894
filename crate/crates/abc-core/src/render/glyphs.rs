//! Stroke-based glyph renderers: handwritten-style digits with variable
//! stroke thickness and slant, and asymmetric glyphs at arbitrary planar
//! rotation for pose experiments.
//!
//! Glyph skeletons are polylines in a [-1, 1] box (y grows downward).
//! Strokes are rasterized as distance fields with a one-pixel soft edge,
//! so every continuous factor change moves pixel values.

use crate::error::{CoreError, Result};
use crate::factor::{FactorDomain, FactorSpec, FactorValue, LatentCode};
use crate::observation::Observation;
use crate::render::{domain_fraction, hsv_to_rgb};
use ndarray::{Array2, Array3};

/// Digit dataset canvas side (grayscale).
pub const DIGIT_CANVAS: usize = 28;
/// Pose dataset canvas side (RGB).
pub const POSE_CANVAS: usize = 32;
/// Number of distinct pose glyph instances.
pub const POSE_INSTANCES: usize = 13;
/// Fixed stroke half-width of pose glyphs, as a fraction of the canvas.
pub const POSE_STROKE_HALFWIDTH: f64 = 0.055;
/// Background gray of pose renders.
pub const POSE_BACKGROUND: f64 = 0.06;

/// Digit glyphs: class, stroke thickness (full width as a canvas fraction),
/// and slant (shear of x per unit y).
pub fn digit_spec() -> FactorSpec {
    FactorSpec::new(vec![
        ("digit".into(), FactorDomain::discrete(10)),
        ("thickness".into(), FactorDomain::continuous(0.05, 0.16)),
        ("slant".into(), FactorDomain::continuous(-0.45, 0.45)),
    ])
    .unwrap()
}

/// Pose glyphs: instance identity, planar rotation in degrees, ink hue.
pub fn pose_spec() -> FactorSpec {
    FactorSpec::new(vec![
        ("instance".into(), FactorDomain::discrete(POSE_INSTANCES)),
        ("rotation".into(), FactorDomain::continuous(0.0, 360.0)),
        ("hue".into(), FactorDomain::discrete(10)),
    ])
    .unwrap()
}

type Polyline = Vec<(f64, f64)>;

fn digit_strokes(digit: usize) -> Vec<Polyline> {
    match digit {
        0 => vec![ring(0.0, 0.0, 0.62, 0.88, 16)],
        1 => vec![
            vec![(0.1, -0.9), (0.1, 0.9)],
            vec![(-0.3, -0.5), (0.1, -0.9)],
        ],
        2 => vec![vec![
            (-0.5, -0.45),
            (-0.25, -0.82),
            (0.1, -0.9),
            (0.42, -0.72),
            (0.5, -0.45),
            (-0.5, 0.9),
            (0.55, 0.9),
        ]],
        3 => vec![vec![
            (-0.5, -0.75),
            (-0.1, -0.93),
            (0.35, -0.8),
            (0.5, -0.45),
            (0.2, -0.1),
            (-0.1, 0.0),
            (0.3, 0.12),
            (0.55, 0.45),
            (0.35, 0.82),
            (-0.1, 0.93),
            (-0.5, 0.75),
        ]],
        4 => vec![
            vec![(0.35, -0.9), (-0.55, 0.25), (0.55, 0.25)],
            vec![(0.3, -0.45), (0.3, 0.9)],
        ],
        5 => vec![vec![
            (0.5, -0.9),
            (-0.45, -0.9),
            (-0.45, -0.05),
            (0.1, -0.15),
            (0.5, 0.2),
            (0.45, 0.6),
            (0.05, 0.9),
            (-0.45, 0.72),
        ]],
        6 => vec![vec![
            (0.4, -0.9),
            (-0.1, -0.5),
            (-0.45, 0.1),
            (-0.45, 0.5),
            (-0.1, 0.9),
            (0.3, 0.85),
            (0.5, 0.5),
            (0.4, 0.15),
            (0.0, 0.05),
            (-0.4, 0.25),
        ]],
        7 => vec![
            vec![(-0.5, -0.9), (0.5, -0.9), (-0.15, 0.9)],
            vec![(-0.2, 0.0), (0.3, 0.0)],
        ],
        8 => vec![
            ring(0.0, -0.47, 0.42, 0.42, 12),
            ring(0.0, 0.45, 0.5, 0.46, 12),
        ],
        _ => vec![
            ring(0.0, -0.4, 0.45, 0.46, 12),
            vec![(0.44, -0.4), (0.38, 0.3), (0.2, 0.9)],
        ],
    }
}

fn pose_strokes(instance: usize) -> Vec<Polyline> {
    match instance {
        0 => vec![
            // F
            vec![(-0.4, 0.9), (-0.4, -0.9), (0.5, -0.9)],
            vec![(-0.4, 0.0), (0.3, 0.0)],
        ],
        1 => vec![vec![(-0.4, -0.9), (-0.4, 0.9), (0.5, 0.9)]], // L
        2 => vec![vec![
            // P
            (-0.4, 0.9),
            (-0.4, -0.9),
            (0.3, -0.9),
            (0.5, -0.7),
            (0.5, -0.35),
            (0.3, -0.15),
            (-0.4, -0.15),
        ]],
        3 => vec![
            // R
            vec![
                (-0.4, 0.9),
                (-0.4, -0.9),
                (0.3, -0.9),
                (0.5, -0.7),
                (0.5, -0.35),
                (0.3, -0.15),
                (-0.4, -0.15),
            ],
            vec![(-0.05, -0.15), (0.5, 0.9)],
        ],
        4 => vec![
            // J
            vec![(-0.5, -0.9), (0.45, -0.9)],
            vec![(0.2, -0.9), (0.2, 0.5), (0.05, 0.85), (-0.3, 0.9), (-0.5, 0.6)],
        ],
        5 => vec![vec![
            // G
            (0.5, -0.7),
            (0.1, -0.92),
            (-0.35, -0.7),
            (-0.52, -0.1),
            (-0.35, 0.6),
            (0.05, 0.9),
            (0.45, 0.7),
            (0.5, 0.25),
            (0.1, 0.25),
        ]],
        6 => vec![vec![
            // e
            (-0.45, 0.1),
            (0.5, 0.1),
            (0.45, -0.35),
            (0.05, -0.55),
            (-0.4, -0.3),
            (-0.5, 0.2),
            (-0.3, 0.7),
            (0.15, 0.85),
            (0.5, 0.65),
        ]],
        7 => vec![
            // h
            vec![(-0.45, -0.9), (-0.45, 0.9)],
            vec![(-0.45, 0.1), (0.0, -0.25), (0.4, -0.1), (0.45, 0.9)],
        ],
        8 => vec![
            // k
            vec![(-0.45, -0.9), (-0.45, 0.9)],
            vec![(0.45, -0.5), (-0.45, 0.25)],
            vec![(-0.1, 0.0), (0.5, 0.9)],
        ],
        9 => digit_strokes(2),
        10 => digit_strokes(4),
        11 => digit_strokes(5),
        12 => digit_strokes(7),
        _ => digit_strokes(instance % 10),
    }
}

fn ring(cx: f64, cy: f64, rx: f64, ry: f64, sides: usize) -> Polyline {
    (0..=sides)
        .map(|i| {
            let a = i as f64 / sides as f64 * std::f64::consts::TAU;
            (cx + rx * a.cos(), cy + ry * a.sin())
        })
        .collect()
}

pub(crate) fn render_digit(spec: &FactorSpec, code: &LatentCode) -> Result<Observation> {
    let digit = match code.value(0) {
        FactorValue::Discrete(d) => *d,
        _ => return Err(CoreError::Contract("digit factor must be discrete".into())),
    };
    let thickness = domain_value(spec, code, 1);
    let slant = domain_value(spec, code, 2);
    let n = DIGIT_CANVAS;
    let scale = n as f64 / 2.0 * 0.78;
    let center = n as f64 / 2.0;

    let strokes: Vec<Polyline> = digit_strokes(digit)
        .into_iter()
        .map(|line| {
            line.into_iter()
                .map(|(x, y)| {
                    let sheared = x - slant * y;
                    (center + sheared * scale, center + y * scale)
                })
                .collect()
        })
        .collect();

    let halfwidth = thickness * n as f64 / 2.0;
    let coverage = rasterize(n, &strokes, halfwidth);
    let mut image = Array3::zeros((n, n, 1));
    for y in 0..n {
        for x in 0..n {
            image[[y, x, 0]] = coverage[[y, x]];
        }
    }
    Observation::new(image, Some(code.clone()), "glyph_digits")
}

pub(crate) fn render_pose_glyph(spec: &FactorSpec, code: &LatentCode) -> Result<Observation> {
    let instance = match code.value(0) {
        FactorValue::Discrete(d) => *d,
        _ => return Err(CoreError::Contract("instance factor must be discrete".into())),
    };
    let rotation = domain_value(spec, code, 1).to_radians();
    let hue = domain_fraction(spec.domain(2), code.value(2));
    let n = POSE_CANVAS;
    let scale = n as f64 / 2.0 * 0.72;
    let center = n as f64 / 2.0;
    let (sin_t, cos_t) = rotation.sin_cos();

    let strokes: Vec<Polyline> = pose_strokes(instance)
        .into_iter()
        .map(|line| {
            line.into_iter()
                .map(|(x, y)| {
                    let rx = x * cos_t - y * sin_t;
                    let ry = x * sin_t + y * cos_t;
                    (center + rx * scale, center + ry * scale)
                })
                .collect()
        })
        .collect();

    let coverage = rasterize(n, &strokes, POSE_STROKE_HALFWIDTH * n as f64);
    let ink = hsv_to_rgb(hue, 0.85, 0.95);
    let mut image = Array3::zeros((n, n, 3));
    for y in 0..n {
        for x in 0..n {
            let c = coverage[[y, x]];
            for ch in 0..3 {
                image[[y, x, ch]] = POSE_BACKGROUND * (1.0 - c) + ink[ch] * c;
            }
        }
    }
    Observation::new(image, Some(code.clone()), "glyph_pose")?.with_mask(coverage)
}

fn domain_value(spec: &FactorSpec, code: &LatentCode, index: usize) -> f64 {
    let _ = spec;
    code.value(index).as_f64()
}

/// Distance-field rasterization with a one-pixel linear edge.
fn rasterize(n: usize, strokes: &[Polyline], halfwidth: f64) -> Array2<f64> {
    let mut out = Array2::zeros((n, n));
    for y in 0..n {
        for x in 0..n {
            let px = x as f64 + 0.5;
            let py = y as f64 + 0.5;
            let mut dist = f64::INFINITY;
            for line in strokes {
                for seg in line.windows(2) {
                    dist = dist.min(point_segment_distance(px, py, seg[0], seg[1]));
                }
            }
            out[[y, x]] = ((halfwidth + 0.5 - dist).clamp(0.0, 1.0)).min(1.0);
        }
    }
    out
}

fn point_segment_distance(px: f64, py: f64, a: (f64, f64), b: (f64, f64)) -> f64 {
    let (ax, ay) = a;
    let (bx, by) = b;
    let (dx, dy) = (bx - ax, by - ay);
    let len2 = dx * dx + dy * dy;
    let t = if len2 < 1e-18 {
        0.0
    } else {
        (((px - ax) * dx + (py - ay) * dy) / len2).clamp(0.0, 1.0)
    };
    let (cx, cy) = (ax + t * dx, ay + t * dy);
    ((px - cx) * (px - cx) + (py - cy) * (py - cy)).sqrt()
}
