//! Stacked bidirectional LSTM with backpropagation through time.
//!
//! Gate layout along the `4H` axis is `[input, forget, cell, output]`.

use ndarray::linalg::general_mat_mul;
use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use super::ops::{linear, linear_backward, sigmoid};
use super::params::ParamSet;
use super::{uniform, BiLstmConfig};

const DIRECTIONS: [&str; 2] = ["fwd", "bwd"];

pub(crate) struct DirectionCache {
    /// Activated gates, `[i, f, g, o]` per row.
    gates: Array2<f64>,
    c: Array2<f64>,
    tanh_c: Array2<f64>,
    h: Array2<f64>,
}

pub(crate) struct BiLstmCache {
    layer_inputs: Vec<Array2<f64>>,
    directions: Vec<[DirectionCache; 2]>,
}

fn prefix(layer: usize, dir: &str) -> String {
    format!("lstm.{layer}.{dir}")
}

pub(crate) fn init(cfg: &BiLstmConfig, input_dim: usize, params: &mut ParamSet, rng: &mut impl Rng) {
    let h = cfg.hidden;
    for layer in 0..cfg.layers {
        let in_dim = if layer == 0 { input_dim } else { 2 * h };
        for dir in DIRECTIONS {
            let p = prefix(layer, dir);
            params.insert(format!("{p}.w_ih"), uniform(rng, (4 * h, in_dim), in_dim));
            params.insert(format!("{p}.w_hh"), uniform(rng, (4 * h, h), h));
            let mut b = Array1::zeros(4 * h);
            b.slice_mut(s![h..2 * h]).fill(1.0);
            params.insert(format!("{p}.b"), b);
        }
    }
}

/// Time index processed before `t`, if any.
fn previous(t: usize, steps: usize, reverse: bool) -> Option<usize> {
    if reverse {
        (t + 1 < steps).then_some(t + 1)
    } else {
        t.checked_sub(1)
    }
}

fn run_direction(
    params: &ParamSet,
    p: &str,
    x: ArrayView2<'_, f64>,
    steps: usize,
    batch: usize,
    hidden: usize,
    reverse: bool,
) -> DirectionCache {
    let w_hh = params.mat(&format!("{p}.w_hh"));
    let mut gates = linear(x, params.mat(&format!("{p}.w_ih")), params.vec1(&format!("{p}.b")));
    let rows = steps * batch;
    let mut c = Array2::zeros((rows, hidden));
    let mut tanh_c = Array2::zeros((rows, hidden));
    let mut h = Array2::zeros((rows, hidden));
    let g4 = 4 * hidden;
    let order: Box<dyn Iterator<Item = usize>> = if reverse {
        Box::new((0..steps).rev())
    } else {
        Box::new(0..steps)
    };
    for t in order {
        let prev = previous(t, steps, reverse);
        if let Some(p) = prev {
            let h_prev = h.slice(s![p * batch..(p + 1) * batch, ..]);
            let mut g = gates.slice_mut(s![t * batch..(t + 1) * batch, ..]);
            general_mat_mul(1.0, &h_prev, &w_hh.t(), 1.0, &mut g);
        }
        let gs = gates.as_slice_mut().expect("contiguous");
        let cs = c.as_slice_mut().expect("contiguous");
        let ts = tanh_c.as_slice_mut().expect("contiguous");
        let hs = h.as_slice_mut().expect("contiguous");
        for b in 0..batch {
            let r = t * batch + b;
            let grow = &mut gs[r * g4..(r + 1) * g4];
            for j in 0..hidden {
                let i = sigmoid(grow[j]);
                let f = sigmoid(grow[hidden + j]);
                let g = grow[2 * hidden + j].tanh();
                let o = sigmoid(grow[3 * hidden + j]);
                grow[j] = i;
                grow[hidden + j] = f;
                grow[2 * hidden + j] = g;
                grow[3 * hidden + j] = o;
                let c_prev = prev.map_or(0.0, |p| cs[(p * batch + b) * hidden + j]);
                let cv = f * c_prev + i * g;
                let tc = cv.tanh();
                cs[r * hidden + j] = cv;
                ts[r * hidden + j] = tc;
                hs[r * hidden + j] = o * tc;
            }
        }
    }
    DirectionCache { gates, c, tanh_c, h }
}

#[allow(clippy::too_many_arguments)]
fn backprop_direction(
    params: &ParamSet,
    grads: &mut ParamSet,
    p: &str,
    x: ArrayView2<'_, f64>,
    cache: &DirectionCache,
    dh_out: ArrayView2<'_, f64>,
    steps: usize,
    batch: usize,
    hidden: usize,
    reverse: bool,
    need_dx: bool,
) -> Option<Array2<f64>> {
    let w_hh_name = format!("{p}.w_hh");
    let w_hh = params.mat(&w_hh_name);
    let g4 = 4 * hidden;
    let rows = steps * batch;
    let mut da = Array2::<f64>::zeros((rows, g4));
    let mut dh_next = Array2::<f64>::zeros((batch, hidden));
    let mut dc_next = vec![0.0; batch * hidden];
    let gs = cache.gates.as_slice().expect("contiguous");
    let cs = cache.c.as_slice().expect("contiguous");
    let ts = cache.tanh_c.as_slice().expect("contiguous");
    let dho = dh_out.as_standard_layout();
    let dhs = dho.as_slice().expect("contiguous");
    let order: Box<dyn Iterator<Item = usize>> = if reverse {
        Box::new(0..steps)
    } else {
        Box::new((0..steps).rev())
    };
    for t in order {
        let prev = previous(t, steps, reverse);
        {
            let das = da.as_slice_mut().expect("contiguous");
            let dhn = dh_next.as_slice().expect("contiguous");
            for b in 0..batch {
                let r = t * batch + b;
                let g = &gs[r * g4..(r + 1) * g4];
                let dar = &mut das[r * g4..(r + 1) * g4];
                for j in 0..hidden {
                    let (i, f, gg, o) = (g[j], g[hidden + j], g[2 * hidden + j], g[3 * hidden + j]);
                    let tc = ts[r * hidden + j];
                    let dh = dhs[r * hidden + j] + dhn[b * hidden + j];
                    let dc = dh * o * (1.0 - tc * tc) + dc_next[b * hidden + j];
                    let c_prev = prev.map_or(0.0, |p| cs[(p * batch + b) * hidden + j]);
                    dar[j] = dc * gg * i * (1.0 - i);
                    dar[hidden + j] = dc * c_prev * f * (1.0 - f);
                    dar[2 * hidden + j] = dc * i * (1.0 - gg * gg);
                    dar[3 * hidden + j] = dh * tc * o * (1.0 - o);
                    dc_next[b * hidden + j] = dc * f;
                }
            }
        }
        let da_t = da.slice(s![t * batch..(t + 1) * batch, ..]);
        general_mat_mul(1.0, &da_t, &w_hh, 0.0, &mut dh_next);
    }
    // hidden state feeding each step's recurrence, zero at the sequence boundary
    let mut h_prev = Array2::<f64>::zeros((rows, hidden));
    for t in 0..steps {
        if let Some(p) = previous(t, steps, reverse) {
            h_prev
                .slice_mut(s![t * batch..(t + 1) * batch, ..])
                .assign(&cache.h.slice(s![p * batch..(p + 1) * batch, ..]));
        }
    }
    grads.accumulate(&w_hh_name, &da.t().dot(&h_prev));
    linear_backward(x, da.view(), params, grads, &format!("{p}.w_ih"), &format!("{p}.b"), need_dx)
}

pub(crate) fn forward(
    params: &ParamSet,
    cfg: &BiLstmConfig,
    x: Array2<f64>,
    steps: usize,
    batch: usize,
) -> (Array2<f64>, BiLstmCache) {
    let mut input = x;
    let mut layer_inputs = Vec::with_capacity(cfg.layers);
    let mut directions = Vec::with_capacity(cfg.layers);
    for layer in 0..cfg.layers {
        let fwd = run_direction(params, &prefix(layer, "fwd"), input.view(), steps, batch, cfg.hidden, false);
        let bwd = run_direction(params, &prefix(layer, "bwd"), input.view(), steps, batch, cfg.hidden, true);
        let out = concatenate(Axis(1), &[fwd.h.view(), bwd.h.view()]).expect("equal rows");
        layer_inputs.push(std::mem::replace(&mut input, out));
        directions.push([fwd, bwd]);
    }
    (
        input,
        BiLstmCache {
            layer_inputs,
            directions,
        },
    )
}

pub(crate) fn backward(
    params: &ParamSet,
    cfg: &BiLstmConfig,
    cache: &BiLstmCache,
    d_top: Array2<f64>,
    steps: usize,
    batch: usize,
    grads: &mut ParamSet,
) {
    let h = cfg.hidden;
    let mut d_out = d_top;
    for layer in (0..cfg.layers).rev() {
        let x = cache.layer_inputs[layer].view();
        let need_dx = layer > 0;
        let [fwd, bwd] = &cache.directions[layer];
        let dx_f = backprop_direction(
            params,
            grads,
            &prefix(layer, "fwd"),
            x,
            fwd,
            d_out.slice(s![.., ..h]),
            steps,
            batch,
            h,
            false,
            need_dx,
        );
        let dx_b = backprop_direction(
            params,
            grads,
            &prefix(layer, "bwd"),
            x,
            bwd,
            d_out.slice(s![.., h..]),
            steps,
            batch,
            h,
            true,
            need_dx,
        );
        if let (Some(a), Some(b)) = (dx_f, dx_b) {
            d_out = a + b;
        }
    }
}
