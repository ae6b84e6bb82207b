//! Transformer encoder: linear input projection, sinusoidal positions and
//! pre-norm encoder layers (multi-head self-attention and a GELU
//! feed-forward sublayer), closed by a final layer norm.
//!
//! Internally rows are reordered batch-major (`b * T + t`) so each
//! sequence's attention operates on a contiguous block.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use super::ops::{
    gelu, gelu_backward, layer_norm, layer_norm_backward, linear, linear_backward, sinusoidal_encoding,
    softmax_rows, LayerNormCache,
};
use super::params::ParamSet;
use super::{uniform, TransformerConfig};

pub(crate) struct LayerCache {
    input: Array2<f64>,
    ln1: LayerNormCache,
    normed1: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    /// Attention weights per `(sequence, head)`, `T x T` each.
    probs: Vec<Array2<f64>>,
    attended: Array2<f64>,
    mid: Array2<f64>,
    ln2: LayerNormCache,
    normed2: Array2<f64>,
    ff_pre: Array2<f64>,
    ff_act: Array2<f64>,
}

pub(crate) struct TransformerCache {
    x: Array2<f64>,
    layers: Vec<LayerCache>,
    final_input: Array2<f64>,
    final_ln: LayerNormCache,
}

fn lp(layer: usize, name: &str) -> String {
    format!("tf.{layer}.{name}")
}

pub(crate) fn init(cfg: &TransformerConfig, input_dim: usize, params: &mut ParamSet, rng: &mut impl Rng) {
    let d = cfg.d_model;
    params.insert("tf.proj.w", uniform(rng, (d, input_dim), input_dim));
    params.insert("tf.proj.b", Array1::<f64>::zeros(d));
    for l in 0..cfg.layers {
        params.insert(lp(l, "ln1.g"), Array1::<f64>::ones(d));
        params.insert(lp(l, "ln1.b"), Array1::<f64>::zeros(d));
        for m in ["q", "k", "v", "o"] {
            params.insert(lp(l, &format!("attn.w{m}")), uniform(rng, (d, d), d));
            // a key bias only shifts each score row, which softmax ignores
            if m != "k" {
                params.insert(lp(l, &format!("attn.b{m}")), Array1::<f64>::zeros(d));
            }
        }
        params.insert(lp(l, "ln2.g"), Array1::<f64>::ones(d));
        params.insert(lp(l, "ln2.b"), Array1::<f64>::zeros(d));
        params.insert(lp(l, "ff1.w"), uniform(rng, (cfg.ffn_dim, d), d));
        params.insert(lp(l, "ff1.b"), Array1::<f64>::zeros(cfg.ffn_dim));
        params.insert(lp(l, "ff2.w"), uniform(rng, (d, cfg.ffn_dim), cfg.ffn_dim));
        params.insert(lp(l, "ff2.b"), Array1::<f64>::zeros(d));
    }
    params.insert("tf.ln_f.g", Array1::<f64>::ones(d));
    params.insert("tf.ln_f.b", Array1::<f64>::zeros(d));
}

/// Reorders rows between time-major (`t * B + b`) and batch-major (`b * T + t`).
pub(crate) fn to_batch_major(x: ArrayView2<'_, f64>, steps: usize, batch: usize) -> Array2<f64> {
    let mut out = Array2::zeros(x.raw_dim());
    for t in 0..steps {
        for b in 0..batch {
            out.row_mut(b * steps + t).assign(&x.row(t * batch + b));
        }
    }
    out
}

pub(crate) fn to_time_major(x: ArrayView2<'_, f64>, steps: usize, batch: usize) -> Array2<f64> {
    let mut out = Array2::zeros(x.raw_dim());
    for t in 0..steps {
        for b in 0..batch {
            out.row_mut(t * batch + b).assign(&x.row(b * steps + t));
        }
    }
    out
}

/// Takes time-major input and returns time-major encoder output.
pub(crate) fn forward(
    params: &ParamSet,
    cfg: &TransformerConfig,
    x: Array2<f64>,
    steps: usize,
    batch: usize,
) -> (Array2<f64>, TransformerCache) {
    let x = to_batch_major(x.view(), steps, batch);
    let d = cfg.d_model;
    let dk = d / cfg.heads;
    let scale = 1.0 / (dk as f64).sqrt();
    let mut h = linear(x.view(), params.mat("tf.proj.w"), params.vec1("tf.proj.b"));
    let pe = sinusoidal_encoding(steps, d);
    for b in 0..batch {
        let mut rows = h.slice_mut(s![b * steps..(b + 1) * steps, ..]);
        rows += &pe;
    }
    let mut layers = Vec::with_capacity(cfg.layers);
    for l in 0..cfg.layers {
        let (normed1, ln1) = layer_norm(h.view(), params.vec1(&lp(l, "ln1.g")), params.vec1(&lp(l, "ln1.b")));
        let proj = |m: &str| {
            linear(
                normed1.view(),
                params.mat(&lp(l, &format!("attn.w{m}"))),
                params.vec1(&lp(l, &format!("attn.b{m}"))),
            )
        };
        let k = normed1.dot(&params.mat(&lp(l, "attn.wk")).t());
        let (q, v) = (proj("q"), proj("v"));
        let mut attended = Array2::zeros((steps * batch, d));
        let mut probs = Vec::with_capacity(batch * cfg.heads);
        for b in 0..batch {
            let rows = b * steps..(b + 1) * steps;
            for head in 0..cfg.heads {
                let cols = head * dk..(head + 1) * dk;
                let qh = q.slice(s![rows.clone(), cols.clone()]);
                let kh = k.slice(s![rows.clone(), cols.clone()]);
                let vh = v.slice(s![rows.clone(), cols.clone()]);
                let scores = qh.dot(&kh.t()) * scale;
                let p = softmax_rows(scores.view());
                attended.slice_mut(s![rows.clone(), cols]).assign(&p.dot(&vh));
                probs.push(p);
            }
        }
        let mid = &h + &linear(attended.view(), params.mat(&lp(l, "attn.wo")), params.vec1(&lp(l, "attn.bo")));
        let (normed2, ln2) = layer_norm(mid.view(), params.vec1(&lp(l, "ln2.g")), params.vec1(&lp(l, "ln2.b")));
        let ff_pre = linear(normed2.view(), params.mat(&lp(l, "ff1.w")), params.vec1(&lp(l, "ff1.b")));
        let ff_act = gelu(ff_pre.view());
        let out = &mid + &linear(ff_act.view(), params.mat(&lp(l, "ff2.w")), params.vec1(&lp(l, "ff2.b")));
        layers.push(LayerCache {
            input: std::mem::replace(&mut h, out),
            ln1,
            normed1,
            q,
            k,
            v,
            probs,
            attended,
            mid,
            ln2,
            normed2,
            ff_pre,
            ff_act,
        });
    }
    let (top, final_ln) = layer_norm(h.view(), params.vec1("tf.ln_f.g"), params.vec1("tf.ln_f.b"));
    (
        to_time_major(top.view(), steps, batch),
        TransformerCache {
            x,
            layers,
            final_input: h,
            final_ln,
        },
    )
}

pub(crate) fn backward(
    params: &ParamSet,
    cfg: &TransformerConfig,
    cache: &TransformerCache,
    d_top: Array2<f64>,
    steps: usize,
    batch: usize,
    grads: &mut ParamSet,
) {
    let d = cfg.d_model;
    let dk = d / cfg.heads;
    let scale = 1.0 / (dk as f64).sqrt();
    let d_top = to_batch_major(d_top.view(), steps, batch);
    let mut dh = layer_norm_backward(d_top.view(), &cache.final_ln, params, grads, "tf.ln_f.g", "tf.ln_f.b");
    debug_assert_eq!(cache.final_input.dim(), dh.dim());
    for l in (0..cfg.layers).rev() {
        let lc = &cache.layers[l];
        // feed-forward sublayer
        let d_act = linear_backward(
            lc.ff_act.view(),
            dh.view(),
            params,
            grads,
            &lp(l, "ff2.w"),
            &lp(l, "ff2.b"),
            true,
        )
        .expect("requested");
        let d_pre = gelu_backward(lc.ff_pre.view(), d_act.view());
        let d_normed2 = linear_backward(
            lc.normed2.view(),
            d_pre.view(),
            params,
            grads,
            &lp(l, "ff1.w"),
            &lp(l, "ff1.b"),
            true,
        )
        .expect("requested");
        let d_mid = dh + &layer_norm_backward(d_normed2.view(), &lc.ln2, params, grads, &lp(l, "ln2.g"), &lp(l, "ln2.b"));
        debug_assert_eq!(lc.mid.dim(), d_mid.dim());

        // attention sublayer
        let d_att = linear_backward(
            lc.attended.view(),
            d_mid.view(),
            params,
            grads,
            &lp(l, "attn.wo"),
            &lp(l, "attn.bo"),
            true,
        )
        .expect("requested");
        let mut dq = Array2::zeros((steps * batch, d));
        let mut dkm = Array2::zeros((steps * batch, d));
        let mut dv = Array2::zeros((steps * batch, d));
        for b in 0..batch {
            let rows = b * steps..(b + 1) * steps;
            for head in 0..cfg.heads {
                let cols = head * dk..(head + 1) * dk;
                let p = &lc.probs[b * cfg.heads + head];
                let d_o = d_att.slice(s![rows.clone(), cols.clone()]);
                let qh = lc.q.slice(s![rows.clone(), cols.clone()]);
                let kh = lc.k.slice(s![rows.clone(), cols.clone()]);
                let vh = lc.v.slice(s![rows.clone(), cols.clone()]);
                let dp = d_o.dot(&vh.t());
                dv.slice_mut(s![rows.clone(), cols.clone()]).assign(&p.t().dot(&d_o));
                let mut ds = &dp * p;
                let row_dot = ds.sum_axis(Axis(1));
                for ((mut ds_row, p_row), &rd) in ds.rows_mut().into_iter().zip(p.rows()).zip(row_dot.iter()) {
                    ds_row.zip_mut_with(&p_row, |v, &pv| *v -= pv * rd);
                }
                ds *= scale;
                dq.slice_mut(s![rows.clone(), cols.clone()]).assign(&ds.dot(&kh));
                dkm.slice_mut(s![rows.clone(), cols]).assign(&ds.t().dot(&qh));
            }
        }
        let wk = lp(l, "attn.wk");
        grads.accumulate(&wk, &dkm.t().dot(&lc.normed1));
        let mut d_normed1 = dkm.dot(&params.mat(&wk));
        for (m, dm) in [("q", &dq), ("v", &dv)] {
            let dx = linear_backward(
                lc.normed1.view(),
                dm.view(),
                params,
                grads,
                &lp(l, &format!("attn.w{m}")),
                &lp(l, &format!("attn.b{m}")),
                true,
            )
            .expect("requested");
            d_normed1 += &dx;
        }
        dh = d_mid + &layer_norm_backward(d_normed1.view(), &lc.ln1, params, grads, &lp(l, "ln1.g"), &lp(l, "ln1.b"));
        debug_assert_eq!(lc.input.dim(), dh.dim());
    }
    linear_backward(cache.x.view(), dh.view(), params, grads, "tf.proj.w", "tf.proj.b", false);
}
