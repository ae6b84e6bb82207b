//! Temporal convolutional network: a 1x1 input projection followed by
//! residual blocks `z + GELU(LayerNorm(conv_d(z)))` with dilation `2^block`.
//! Convolutions are zero-padded so every block preserves the sequence
//! length; causal padding (the default) only looks at the current and past
//! frames, symmetric padding centers the kernel.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, Array3, Axis};
use rand::Rng;

use super::ops::{gelu, gelu_backward, layer_norm, layer_norm_backward, linear, linear_backward, LayerNormCache};
use super::params::ParamSet;
use super::{uniform, TcnConfig};

pub(crate) struct BlockCache {
    input: Array2<f64>,
    ln: LayerNormCache,
    normed: Array2<f64>,
}

pub(crate) struct TcnCache {
    x: Array2<f64>,
    blocks: Vec<BlockCache>,
}

pub(crate) fn init(cfg: &TcnConfig, input_dim: usize, params: &mut ParamSet, rng: &mut impl Rng) {
    let c = cfg.channels;
    params.insert("tcn.proj.w", uniform(rng, (c, input_dim), input_dim));
    params.insert("tcn.proj.b", Array1::<f64>::zeros(c));
    for b in 0..cfg.blocks {
        let fan_in = cfg.kernel * c;
        let bound = 1.0 / (fan_in as f64).sqrt();
        let w = Array3::from_shape_simple_fn((cfg.kernel, c, c), || rng.gen_range(-bound..bound));
        params.insert(format!("tcn.{b}.conv.w"), w);
        params.insert(format!("tcn.{b}.conv.b"), Array1::<f64>::zeros(c));
        params.insert(format!("tcn.{b}.ln.g"), Array1::<f64>::ones(c));
        params.insert(format!("tcn.{b}.ln.b"), Array1::<f64>::zeros(c));
    }
}

/// Time offset of tap `k` relative to the output frame.
fn tap_offset(k: usize, kernel: usize, dilation: usize, causal: bool) -> isize {
    let anchor = if causal { kernel as isize - 1 } else { (kernel as isize - 1) / 2 };
    (k as isize - anchor) * dilation as isize
}

/// Output time range for which `t + offset` is a valid input time.
fn valid_range(offset: isize, steps: usize) -> (usize, usize) {
    let lo = (-offset).max(0) as usize;
    let hi = (steps as isize - offset.max(0)).max(0) as usize;
    (lo.min(steps), hi)
}

struct ConvShape {
    dilation: usize,
    causal: bool,
    steps: usize,
    batch: usize,
}

fn conv(z: &Array2<f64>, w: ndarray::ArrayView3<'_, f64>, bias: ndarray::ArrayView1<'_, f64>, shape: &ConvShape) -> Array2<f64> {
    let ConvShape {
        dilation,
        causal,
        steps,
        batch,
    } = *shape;
    let kernel = w.shape()[0];
    let mut y = Array2::zeros((z.nrows(), w.shape()[1]));
    for mut row in y.rows_mut() {
        row.assign(&bias);
    }
    for k in 0..kernel {
        let off = tap_offset(k, kernel, dilation, causal);
        let (lo, hi) = valid_range(off, steps);
        if lo >= hi {
            continue;
        }
        let src_lo = (lo as isize + off) as usize;
        let src = z.slice(s![src_lo * batch..(src_lo + hi - lo) * batch, ..]);
        let mut dst = y.slice_mut(s![lo * batch..hi * batch, ..]);
        general_mat_mul(1.0, &src, &w.index_axis(Axis(0), k).t(), 1.0, &mut dst);
    }
    y
}

pub(crate) fn forward(params: &ParamSet, cfg: &TcnConfig, x: Array2<f64>, steps: usize, batch: usize) -> (Array2<f64>, TcnCache) {
    let mut z = linear(x.view(), params.mat("tcn.proj.w"), params.vec1("tcn.proj.b"));
    let mut blocks = Vec::with_capacity(cfg.blocks);
    for b in 0..cfg.blocks {
        let shape = ConvShape {
            dilation: 1 << b,
            causal: cfg.causal,
            steps,
            batch,
        };
        let y = conv(
            &z,
            params.tensor3(&format!("tcn.{b}.conv.w")),
            params.vec1(&format!("tcn.{b}.conv.b")),
            &shape,
        );
        let (normed, ln) = layer_norm(
            y.view(),
            params.vec1(&format!("tcn.{b}.ln.g")),
            params.vec1(&format!("tcn.{b}.ln.b")),
        );
        let next = &z + &gelu(normed.view());
        blocks.push(BlockCache {
            input: std::mem::replace(&mut z, next),
            ln,
            normed,
        });
    }
    (z, TcnCache { x, blocks })
}

pub(crate) fn backward(
    params: &ParamSet,
    cfg: &TcnConfig,
    cache: &TcnCache,
    d_top: Array2<f64>,
    steps: usize,
    batch: usize,
    grads: &mut ParamSet,
) {
    let mut dz = d_top;
    for b in (0..cfg.blocks).rev() {
        let bc = &cache.blocks[b];
        let dilation = 1usize << b;
        let d_normed = gelu_backward(bc.normed.view(), dz.view());
        let dy = layer_norm_backward(
            d_normed.view(),
            &bc.ln,
            params,
            grads,
            &format!("tcn.{b}.ln.g"),
            &format!("tcn.{b}.ln.b"),
        );
        let w_name = format!("tcn.{b}.conv.w");
        let w = params.tensor3(&w_name);
        let kernel = w.shape()[0];
        let mut dw = Array3::<f64>::zeros(w.raw_dim());
        grads.accumulate(&format!("tcn.{b}.conv.b"), &dy.sum_axis(Axis(0)));
        // residual path passes dz through unchanged
        for k in 0..kernel {
            let off = tap_offset(k, kernel, dilation, cfg.causal);
            let (lo, hi) = valid_range(off, steps);
            if lo >= hi {
                continue;
            }
            let src_lo = (lo as isize + off) as usize;
            let src_rows = src_lo * batch..(src_lo + hi - lo) * batch;
            let dy_k = dy.slice(s![lo * batch..hi * batch, ..]);
            let src = bc.input.slice(s![src_rows.clone(), ..]);
            general_mat_mul(1.0, &dy_k.t(), &src, 1.0, &mut dw.index_axis_mut(Axis(0), k));
            let mut dsrc = dz.slice_mut(s![src_rows, ..]);
            general_mat_mul(1.0, &dy_k, &w.index_axis(Axis(0), k), 1.0, &mut dsrc);
        }
        grads.accumulate(&w_name, &dw);
    }
    linear_backward(cache.x.view(), dz.view(), params, grads, "tcn.proj.w", "tcn.proj.b", false);
}
