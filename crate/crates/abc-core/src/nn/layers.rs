//! Layer primitives: activations, dense, and im2col-based convolution.
//! Everything is f64 and deterministic; backward passes are verified by
//! finite differences in the crate's gradient tests.

use ndarray::{Array1, Array2, Array3, Array4, ArrayView3, Axis};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Linear,
    Relu,
    Tanh,
}

impl Activation {
    pub fn apply(&self, z: f64) -> f64 {
        match self {
            Activation::Linear => z,
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative at pre-activation `z`.
    pub fn derivative(&self, z: f64) -> f64 {
        match self {
            Activation::Linear => 1.0,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
        }
    }
}

/// Fully connected layer over batched rows: `y = act(x W^T + b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    /// `(out, in)`
    pub w: Array2<f64>,
    pub b: Array1<f64>,
    pub act: Activation,
}

impl Dense {
    pub fn zeros(in_dim: usize, out_dim: usize, act: Activation) -> Self {
        Dense {
            w: Array2::zeros((out_dim, in_dim)),
            b: Array1::zeros(out_dim),
            act,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.w.nrows()
    }

    /// Returns `(z, y)`: pre-activation and output, both `(batch, out)`.
    pub fn forward(&self, x: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
        let mut z = x.dot(&self.w.t());
        for mut row in z.rows_mut() {
            row += &self.b;
        }
        let y = z.mapv(|v| self.act.apply(v));
        (z, y)
    }

    /// Backward pass: returns `(dw, db, dx)`.
    pub fn backward(
        &self,
        x: &Array2<f64>,
        z: &Array2<f64>,
        d_out: &Array2<f64>,
    ) -> (Array2<f64>, Array1<f64>, Array2<f64>) {
        let dz = d_out * &z.mapv(|v| self.act.derivative(v));
        let dw = dz.t().dot(x);
        let db = dz.sum_axis(Axis(0));
        let dx = dz.dot(&self.w);
        (dw, db, dx)
    }
}

/// Valid-padding convolution geometry.
pub fn conv_output_side(input: usize, kernel: usize, stride: usize) -> Option<usize> {
    if kernel == 0 || stride == 0 || kernel > input {
        return None;
    }
    Some((input - kernel) / stride + 1)
}

/// Unrolls an image `(c, h, w)` into a `(k*k*c, oh*ow)` matrix of patches.
pub fn im2col(
    input: ArrayView3<'_, f64>,
    kernel: usize,
    stride: usize,
    oh: usize,
    ow: usize,
) -> Array2<f64> {
    let (c, _h, _w) = input.dim();
    let mut col = Array2::zeros((c * kernel * kernel, oh * ow));
    for ch in 0..c {
        for ky in 0..kernel {
            for kx in 0..kernel {
                let row = (ch * kernel + ky) * kernel + kx;
                for oy in 0..oh {
                    let iy = oy * stride + ky;
                    for ox in 0..ow {
                        col[[row, oy * ow + ox]] = input[[ch, iy, ox * stride + kx]];
                    }
                }
            }
        }
    }
    col
}

/// Scatter-add inverse of [`im2col`].
pub fn col2im(
    d_col: &Array2<f64>,
    c: usize,
    h: usize,
    w: usize,
    kernel: usize,
    stride: usize,
    oh: usize,
    ow: usize,
) -> Array3<f64> {
    let mut out = Array3::zeros((c, h, w));
    for ch in 0..c {
        for ky in 0..kernel {
            for kx in 0..kernel {
                let row = (ch * kernel + ky) * kernel + kx;
                for oy in 0..oh {
                    let iy = oy * stride + ky;
                    for ox in 0..ow {
                        out[[ch, iy, ox * stride + kx]] += d_col[[row, oy * ow + ox]];
                    }
                }
            }
        }
    }
    out
}

/// Converts a batch of HWC images to the CHW layout used by the layers.
pub fn hwc_to_chw(batch: &[ndarray::ArrayView3<'_, f64>]) -> Array4<f64> {
    let (h, w, c) = batch[0].dim();
    let mut out = Array4::zeros((batch.len(), c, h, w));
    for (i, img) in batch.iter().enumerate() {
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    out[[i, ch, y, x]] = img[[y, x, ch]];
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::Array3;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn conv_geometry_matches_valid_padding() {
        assert_eq!(conv_output_side(64, 3, 1), Some(62));
        assert_eq!(conv_output_side(62, 3, 2), Some(30));
        assert_eq!(conv_output_side(3, 3, 1), Some(1));
        assert_eq!(conv_output_side(2, 3, 1), None);
    }

    #[test]
    fn im2col_col2im_are_adjoint() {
        // <im2col(x), y> == <x, col2im(y)> for random x, y: the pair is a
        // linear map and its transpose.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (c, h, w, k, s) = (2, 5, 6, 3, 2);
        let oh = conv_output_side(h, k, s).unwrap();
        let ow = conv_output_side(w, k, s).unwrap();
        let x = Array3::from_shape_fn((c, h, w), |_| rng.gen_range(-1.0..1.0));
        let y = Array2::from_shape_fn((c * k * k, oh * ow), |_| rng.gen_range(-1.0..1.0));
        let lhs: f64 = (&im2col(x.view(), k, s, oh, ow) * &y).sum();
        let rhs: f64 = (&x * &col2im(&y, c, h, w, k, s, oh, ow)).sum();
        assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-10);
    }

    #[test]
    fn dense_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for act in [Activation::Linear, Activation::Relu, Activation::Tanh] {
            let mut layer = Dense::zeros(4, 3, act);
            layer.w.mapv_inplace(|_| rng.gen_range(-0.8..0.8));
            layer.b.mapv_inplace(|_| rng.gen_range(-0.5..0.5));
            let x = Array2::from_shape_fn((2, 4), |_| rng.gen_range(-1.0..1.0));
            // Scalar objective: sum of outputs weighted by fixed coefficients.
            let coeff = Array2::from_shape_fn((2, 3), |_| rng.gen_range(-1.0..1.0));
            let (z, _y) = layer.forward(&x);
            let (dw, db, dx) = layer.backward(&x, &z, &coeff);
            let h = 1e-6;
            let objective = |layer: &Dense, x: &Array2<f64>| -> f64 {
                let (_, y) = layer.forward(x);
                (&y * &coeff).sum()
            };
            for idx in [(0, 0), (1, 2), (2, 3)] {
                let mut lp = layer.clone();
                let mut lm = layer.clone();
                lp.w[idx] += h;
                lm.w[idx] -= h;
                let fd = (objective(&lp, &x) - objective(&lm, &x)) / (2.0 * h);
                assert_abs_diff_eq!(dw[idx], fd, epsilon = 1e-5);
            }
            for i in 0..3 {
                let mut lp = layer.clone();
                let mut lm = layer.clone();
                lp.b[i] += h;
                lm.b[i] -= h;
                let fd = (objective(&lp, &x) - objective(&lm, &x)) / (2.0 * h);
                assert_abs_diff_eq!(db[i], fd, epsilon = 1e-5);
            }
            for idx in [(0, 0), (1, 3)] {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[idx] += h;
                xm[idx] -= h;
                let fd = (objective(&layer, &xp) - objective(&layer, &xm)) / (2.0 * h);
                assert_abs_diff_eq!(dx[idx], fd, epsilon = 1e-5);
            }
        }
    }
}
