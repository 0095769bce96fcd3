use nalgebra::{DMatrix, DVector};

use super::mlp::{Activation, Layer, MlpParams};
use crate::error::{dim_check, Error, Result};

fn block(rows: usize, cols: usize, kappa: usize, entries: &[(usize, usize, f64)]) -> DMatrix<f64> {
    let mut w = DMatrix::zeros(rows * kappa, cols * kappa);
    for &(r, c, v) in entries {
        for i in 0..kappa {
            w[(r * kappa + i, c * kappa + i)] = v;
        }
    }
    w
}

fn repeat(values: &[f64], kappa: usize) -> DVector<f64> {
    DVector::from_iterator(values.len() * kappa, values.iter().flat_map(|v| std::iter::repeat_n(*v, kappa)))
}

/// Five-layer relu network clamping every coordinate to `[−B, B]`, `B = M + 2δ`.
///
/// Each of the two stages computes `ReLU(x) − ReLU(−x) − ReLU(x − B) + ReLU(−x − B)`. On
/// `[−2B, 2B]` every difference it forms is exact in floating point, so the first stage
/// already returns the clamp bit for bit; the second stage re-clamps the first stage's
/// rounding excess for inputs far outside the box. The result satisfies
/// `‖f(x)‖_∞ ≤ B` for `‖x‖_∞ ≤ 2^53 B` and `f(x) = x` whenever `‖x‖_∞ ≤ B`.
pub fn build_clipping(kappa: usize, m: f64, delta: f64) -> Result<MlpParams> {
    if kappa == 0 || !(m > 0.0) || !(delta > 0.0) || !m.is_finite() || !delta.is_finite() {
        return Err(Error::Argument(format!("clipping needs kappa ≥ 1, M > 0, delta > 0 (got {kappa}, {m}, {delta})")));
    }
    let b = m + 2.0 * delta;
    // slots: 0 = x, 1 = −x, 2 = x − B, 3 = −x − B
    let spread = |src: &[(usize, f64)]| {
        let mut e = Vec::new();
        for &(c, s) in src {
            e.extend([(0, c, s), (1, c, -s), (2, c, s), (3, c, -s)]);
        }
        e
    };
    // z = h0 − h1 − h2 + h3, emitted as [z, −z]
    let split_fold =
        [(0, 0, 1.0), (0, 1, -1.0), (0, 2, -1.0), (0, 3, 1.0), (1, 0, -1.0), (1, 1, 1.0), (1, 2, 1.0), (1, 3, -1.0)];
    let offsets = repeat(&[0.0, 0.0, -b, -b], kappa);
    let layers = vec![
        Layer::new(block(4, 1, kappa, &spread(&[(0, 1.0)])), offsets.clone())?,
        Layer::new(block(2, 4, kappa, &split_fold), DVector::zeros(2 * kappa))?,
        Layer::new(block(4, 2, kappa, &spread(&[(0, 1.0), (1, -1.0)])), offsets)?,
        Layer::new(block(2, 4, kappa, &split_fold), DVector::zeros(2 * kappa))?,
        Layer::new(block(1, 2, kappa, &[(0, 0, 1.0), (0, 1, -1.0)]), DVector::zeros(kappa))?,
    ];
    MlpParams::new(layers, Activation::Relu)
}

/// A network computing `f^{θ2} ∘ f^{θ1}` with `L1 + L2` layers.
///
/// The interface is kept as two layers: the last map of `θ1` is emitted as `[A; −A]`, and
/// the first map of `θ2` reads `W (y⁺ − y⁻)`, which reproduces `W y` because
/// `ReLU(y) − ReLU(−y) = y`. Only relu networks admit this exact splice.
pub fn compose(theta2: &MlpParams, theta1: &MlpParams) -> Result<MlpParams> {
    dim_check(theta1.output_width() == theta2.input_width(), || {
        format!(
            "inner network outputs {} values, outer network expects {}",
            theta1.output_width(),
            theta2.input_width()
        )
    })?;
    if theta1.activation() != theta2.activation() {
        return Err(Error::Argument("composed networks must share the activation".into()));
    }
    if theta1.activation() != Activation::Relu {
        return Err(Error::Argument(
            "exact composition with an unfused interface is only available for relu networks".into(),
        ));
    }
    let n = theta1.output_width();
    let mut layers: Vec<Layer> = theta1.layers()[..theta1.depth() - 1].to_vec();
    let last = &theta1.layers()[theta1.depth() - 1];
    let mut w = DMatrix::zeros(2 * n, last.input_width());
    w.rows_mut(0, n).copy_from(&last.w);
    w.rows_mut(n, n).copy_from(&(-&last.w));
    let mut b = DVector::zeros(2 * n);
    b.rows_mut(0, n).copy_from(&last.b);
    b.rows_mut(n, n).copy_from(&(-&last.b));
    layers.push(Layer::new(w, b)?);
    let first = &theta2.layers()[0];
    let mut w = DMatrix::zeros(first.output_width(), 2 * n);
    w.columns_mut(0, n).copy_from(&first.w);
    w.columns_mut(n, n).copy_from(&(-&first.w));
    layers.push(Layer::new(w, first.b.clone())?);
    layers.extend_from_slice(&theta2.layers()[1..]);
    MlpParams::new(layers, Activation::Relu)
}
