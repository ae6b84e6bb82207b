//! Differentiable building blocks shared by the architectures. Activations
//! are row-major `rows x features` matrices.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::params::ParamSet;

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

/// `x Wᵀ + b` with `w` shaped `out x in`.
pub fn linear(x: ArrayView2<'_, f64>, w: ArrayView2<'_, f64>, b: ArrayView1<'_, f64>) -> Array2<f64> {
    let mut y = Array2::zeros((x.nrows(), w.nrows()));
    for mut row in y.rows_mut() {
        row.assign(&b);
    }
    general_mat_mul(1.0, &x, &w.t(), 1.0, &mut y);
    y
}

/// Accumulates `dW += dyᵀ x` and `db += Σ dy` into `grads`; returns `dy W`
/// when the input gradient is needed.
pub fn linear_backward(
    x: ArrayView2<'_, f64>,
    dy: ArrayView2<'_, f64>,
    params: &ParamSet,
    grads: &mut ParamSet,
    w_name: &str,
    b_name: &str,
    need_dx: bool,
) -> Option<Array2<f64>> {
    let w = params.mat(w_name);
    let dw = dy.t().dot(&x);
    grads.accumulate(w_name, &dw);
    grads.accumulate(b_name, &dy.sum_axis(Axis(0)));
    need_dx.then(|| dy.dot(&w))
}

pub struct LayerNormCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

/// Normalizes each row to zero mean and unit variance, then scales and shifts.
pub fn layer_norm(
    x: ArrayView2<'_, f64>,
    gamma: ArrayView1<'_, f64>,
    beta: ArrayView1<'_, f64>,
) -> (Array2<f64>, LayerNormCache) {
    let n = x.ncols() as f64;
    let mut xhat = x.to_owned();
    let mut inv_std = Array1::zeros(x.nrows());
    for (mut row, is) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
        let mean = row.sum() / n;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        *is = 1.0 / (var + LN_EPS).sqrt();
        row.mapv_inplace(|v| (v - mean) * *is);
    }
    let mut y = xhat.clone();
    for mut row in y.rows_mut() {
        Zip::from(&mut row)
            .and(&gamma)
            .and(&beta)
            .for_each(|v, &g, &b| *v = *v * g + b);
    }
    (y, LayerNormCache { xhat, inv_std })
}

pub fn layer_norm_backward(
    dy: ArrayView2<'_, f64>,
    cache: &LayerNormCache,
    params: &ParamSet,
    grads: &mut ParamSet,
    g_name: &str,
    b_name: &str,
) -> Array2<f64> {
    let gamma = params.vec1(g_name);
    grads.accumulate(g_name, &(&dy * &cache.xhat).sum_axis(Axis(0)));
    grads.accumulate(b_name, &dy.sum_axis(Axis(0)));
    let n = dy.ncols() as f64;
    let mut dx = Array2::zeros(dy.raw_dim());
    for (((dy_row, xh), &is), mut dx_row) in dy
        .rows()
        .into_iter()
        .zip(cache.xhat.rows())
        .zip(cache.inv_std.iter())
        .zip(dx.rows_mut())
    {
        let mut sum_d = 0.0;
        let mut sum_dx = 0.0;
        for ((&d, &g), &h) in dy_row.iter().zip(gamma.iter()).zip(xh.iter()) {
            let dxh = d * g;
            sum_d += dxh;
            sum_dx += dxh * h;
        }
        let mean_d = sum_d / n;
        let mean_dx = sum_dx / n;
        for (((o, &d), &g), &h) in dx_row.iter_mut().zip(dy_row.iter()).zip(gamma.iter()).zip(xh.iter()) {
            *o = is * (d * g - mean_d - h * mean_dx);
        }
    }
    dx
}

/// GELU, tanh approximation.
pub fn gelu(x: ArrayView2<'_, f64>) -> Array2<f64> {
    x.mapv(|v| 0.5 * v * (1.0 + (GELU_C * (v + GELU_A * v * v * v)).tanh()))
}

pub fn gelu_backward(x: ArrayView2<'_, f64>, dy: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut dx = Array2::zeros(x.raw_dim());
    Zip::from(&mut dx).and(&x).and(&dy).for_each(|o, &v, &d| {
        let t = (GELU_C * (v + GELU_A * v * v * v)).tanh();
        let deriv = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * v * v);
        *o = d * deriv;
    });
    dx
}

/// Inverted dropout mask: each entry is `0` with probability `rate`,
/// otherwise `1 / (1 - rate)`.
pub fn dropout_mask(rows: usize, cols: usize, rate: f64, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keep = 1.0 / (1.0 - rate);
    Array2::from_shape_simple_fn((rows, cols), || if rng.gen::<f64>() < rate { 0.0 } else { keep })
}

/// Row-wise softmax, stabilized by the row maximum.
pub fn softmax_rows(x: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut out = x.to_owned();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// Fixed sine/cosine table: even columns `sin(t / 10000^(2i/d))`, odd
/// columns the matching cosine.
pub fn sinusoidal_encoding(len: usize, dim: usize) -> Array2<f64> {
    Array2::from_shape_fn((len, dim), |(t, j)| {
        let pair = (j / 2) as f64;
        let angle = t as f64 / 10000f64.powf(2.0 * pair / dim as f64);
        if j % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}
