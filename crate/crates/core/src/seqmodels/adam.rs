use ndarray::Zip;
use serde::{Deserialize, Serialize};

use super::params::ParamSet;
use super::SeqModel;
use crate::error::{Error, Result};

/// Adam moments and hyperparameters.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: ParamSet,
    v: ParamSet,
}

impl OptimizerState {
    pub fn new(params: &ParamSet, lr: f64) -> Self {
        Self {
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }
}

/// One bias-corrected Adam update of every parameter.
pub fn adam_step(model: &mut SeqModel, opt: &mut OptimizerState, grads: &ParamSet) -> Result<()> {
    if !grads.same_layout(model.params()) || !opt.m.same_layout(model.params()) {
        return Err(Error::dim("gradient or moment layout does not match the model parameters"));
    }
    opt.step += 1;
    let t = opt.step as i32;
    let (b1, b2, lr, eps) = (opt.beta1, opt.beta2, opt.lr, opt.eps);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let params = model.params_mut();
    for ((((_, p), (_, g)), (_, m)), (_, v)) in params
        .iter_mut()
        .zip(grads.iter())
        .zip(opt.m.iter_mut())
        .zip(opt.v.iter_mut())
    {
        Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        });
    }
    Ok(())
}

/// Step decay: `lr0 * factor^(epoch / every)` with 0-based epochs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub lr0: f64,
    pub factor: f64,
    pub every: usize,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self {
            lr0: 1e-3,
            factor: 0.5,
            every: 20,
        }
    }
}

impl LrSchedule {
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr0 * self.factor.powi((epoch / self.every.max(1)) as i32)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seqmodels::{Arch, ModelConfig};

    fn tiny() -> SeqModel {
        let mut cfg = ModelConfig::new(Arch::Bilstm, 3);
        cfg.input_dim = 4;
        cfg.bilstm.hidden = 3;
        cfg.bilstm.layers = 1;
        SeqModel::init(cfg, 1).unwrap()
    }

    #[test]
    fn zero_gradients_leave_params() {
        let mut model = tiny();
        let before = model.params().clone();
        let mut opt = OptimizerState::new(model.params(), 1e-3);
        adam_step(&mut model, &mut opt, &before.zeros_like()).unwrap();
        assert_eq!(model.params(), &before);
        assert_eq!(opt.step, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut model = tiny();
        let before = model.params().clone();
        let mut grads = before.zeros_like();
        grads.iter_mut().for_each(|(_, g)| g.fill(1.0));
        let mut opt = OptimizerState::new(model.params(), 1e-3);
        adam_step(&mut model, &mut opt, &grads).unwrap();
        // m_hat = v_hat = 1, so the step is lr / (1 + eps)
        let expect = 1e-3 / (1.0 + 1e-8);
        for ((_, a), (_, b)) in model.params().iter().zip(before.iter()) {
            for (x, y) in a.iter().zip(b.iter()) {
                assert!((y - x - expect).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn identical_inputs_identical_updates() {
        let mut a = tiny();
        let mut b = tiny();
        let mut grads = a.params().zeros_like();
        for (i, (_, g)) in grads.iter_mut().enumerate() {
            g.mapv_inplace(|_| 0.1 * i as f64 - 0.3);
        }
        let mut oa = OptimizerState::new(a.params(), 1e-2);
        let mut ob = OptimizerState::new(b.params(), 1e-2);
        for _ in 0..3 {
            adam_step(&mut a, &mut oa, &grads).unwrap();
            adam_step(&mut b, &mut ob, &grads).unwrap();
        }
        assert_eq!(a.params(), b.params());
    }

    #[test]
    fn mismatched_layout_rejected() {
        let mut model = tiny();
        let mut opt = OptimizerState::new(model.params(), 1e-3);
        let mut grads = ParamSet::new();
        grads.insert("x", ndarray::Array1::<f64>::zeros(2));
        assert!(matches!(adam_step(&mut model, &mut opt, &grads), Err(Error::DimMismatch(_))));
    }

    #[test]
    fn schedule_halves_every_twenty_epochs() {
        let s = LrSchedule::default();
        assert_eq!(s.lr_at(0), 1e-3);
        assert_eq!(s.lr_at(19), 1e-3);
        assert_eq!(s.lr_at(20), 5e-4);
        assert_eq!(s.lr_at(45), 2.5e-4);
    }
}
