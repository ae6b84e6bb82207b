use ndarray::{s, Array2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

const ARCHES: [Arch; 3] = [Arch::Bilstm, Arch::Tcn, Arch::Transformer];

fn tiny_config(arch: Arch, input_dim: usize, classes: usize) -> ModelConfig {
    let mut cfg = ModelConfig::new(arch, classes);
    cfg.input_dim = input_dim;
    cfg.bilstm = BiLstmConfig { layers: 2, hidden: 4 };
    cfg.tcn = TcnConfig {
        blocks: 3,
        kernel: 3,
        channels: 6,
        causal: true,
    };
    cfg.transformer = TransformerConfig {
        d_model: 8,
        heads: 2,
        layers: 2,
        ffn_dim: 10,
    };
    cfg
}

fn random_matrix(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_simple_fn((rows, cols), || rng.gen_range(-1.0..1.0))
}

#[test]
fn output_shape_for_all_lengths() {
    for arch in ARCHES {
        let model = SeqModel::init(tiny_config(arch, 5, 3), 0).unwrap();
        for t in [1, 2, 7, 40] {
            let logits = model.logits(random_matrix(t, 5, t as u64).view()).unwrap();
            assert_eq!(logits.dim(), (t, 3), "{arch} T={t}");
        }
    }
}

#[test]
fn full_size_models_have_expected_shapes() {
    for arch in ARCHES {
        let model = SeqModel::init(ModelConfig::new(arch, 5), 0).unwrap();
        let logits = model.logits(Array2::zeros((3, 532)).view()).unwrap();
        assert_eq!(logits.dim(), (3, 5));
    }
}

#[test]
fn wrong_input_width_rejected() {
    let model = SeqModel::init(tiny_config(Arch::Tcn, 5, 3), 0).unwrap();
    assert!(matches!(
        model.logits(Array2::zeros((4, 6)).view()),
        Err(Error::DimMismatch(_))
    ));
}

#[test]
fn heads_must_divide_model_width() {
    let mut cfg = ModelConfig::new(Arch::Transformer, 5);
    cfg.transformer.heads = 3;
    assert!(matches!(SeqModel::init(cfg, 0), Err(Error::Config(_))));
}

#[test]
fn unknown_architecture_name() {
    assert!(matches!("vgg".parse::<Arch>(), Err(Error::Config(_))));
    for arch in ARCHES {
        assert_eq!(arch.to_string().parse::<Arch>().unwrap(), arch);
    }
}

#[test]
fn same_seed_same_logits() {
    let x = random_matrix(9, 5, 3);
    for arch in ARCHES {
        let a = SeqModel::init(tiny_config(arch, 5, 3), 42).unwrap();
        let b = SeqModel::init(tiny_config(arch, 5, 3), 42).unwrap();
        assert_eq!(a.logits(x.view()).unwrap(), b.logits(x.view()).unwrap());
        let c = SeqModel::init(tiny_config(arch, 5, 3), 43).unwrap();
        assert_ne!(a.logits(x.view()).unwrap(), c.logits(x.view()).unwrap());
    }
}

#[test]
fn lstm_forget_bias_starts_at_one() {
    let model = SeqModel::init(tiny_config(Arch::Bilstm, 5, 3), 0).unwrap();
    let b = model.params().get("lstm.0.fwd.b").unwrap();
    let h = 4;
    assert!(b.iter().skip(h).take(h).all(|&v| v == 1.0));
    assert!(b.iter().take(h).all(|&v| v == 0.0));
}

#[test]
fn eval_mode_ignores_dropout_seed() {
    let x = random_matrix(6, 5, 1);
    for arch in ARCHES {
        let model = SeqModel::init(tiny_config(arch, 5, 3), 2).unwrap();
        let a = model.forward(x.view(), false, 1).unwrap().0;
        let b = model.forward(x.view(), false, 999).unwrap().0;
        assert_eq!(a, b);
        let c = model.forward(x.view(), true, 1).unwrap().0;
        let d = model.forward(x.view(), true, 2).unwrap().0;
        assert_ne!(c, d);
    }
}

#[test]
fn batched_matches_single_sequences() {
    let seqs: Vec<_> = (0..3).map(|i| random_matrix(7, 5, 10 + i)).collect();
    let views: Vec<_> = seqs.iter().map(|s| s.view()).collect();
    let batch = SeqBatch::from_sequences(&views).unwrap();
    for arch in ARCHES {
        let model = SeqModel::init(tiny_config(arch, 5, 3), 5).unwrap();
        let (logits, _) = model.forward_batch(&batch, false, 0).unwrap();
        for (b, seq) in seqs.iter().enumerate() {
            let single = model.logits(seq.view()).unwrap();
            let part = SeqBatch::split_rows(logits.view(), 7, 3, b);
            let err = (&single - &part).mapv(f64::abs).fold(0.0f64, |m, &v| m.max(v));
            assert!(err < 1e-12, "{arch}: {err}");
        }
    }
}

#[test]
fn bilstm_first_frame_sees_last_input() {
    let model = SeqModel::init(tiny_config(Arch::Bilstm, 5, 3), 8).unwrap();
    let x = random_matrix(12, 5, 4);
    let mut y = x.clone();
    y.row_mut(11).mapv_inplace(|v| v + 1.0);
    let a = model.logits(x.view()).unwrap();
    let b = model.logits(y.view()).unwrap();
    assert!((&a.row(0) - &b.row(0)).iter().any(|d| d.abs() > 1e-9));
}

#[test]
fn reversing_input_does_not_reverse_logits() {
    let x = random_matrix(10, 5, 6);
    let rev = x.slice(s![..;-1, ..]).to_owned();
    for arch in [Arch::Bilstm, Arch::Transformer] {
        let model = SeqModel::init(tiny_config(arch, 5, 3), 9).unwrap();
        let a = model.logits(x.view()).unwrap();
        let b = model.logits(rev.view()).unwrap();
        let b_back = b.slice(s![..;-1, ..]).to_owned();
        assert!((&a - &b_back).iter().any(|d| d.abs() > 1e-6), "{arch}");
    }
}

#[test]
fn softmax_rows_sum_to_one() {
    let model = SeqModel::init(tiny_config(Arch::Transformer, 5, 4), 1).unwrap();
    let logits = model.logits(random_matrix(8, 5, 2).view()).unwrap();
    for row in softmax_rows(logits.view()).rows() {
        assert!((row.sum() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn zero_upstream_gradient_gives_zero_gradients() {
    for arch in ARCHES {
        let model = SeqModel::init(tiny_config(arch, 5, 3), 3).unwrap();
        let (logits, cache) = model.forward(random_matrix(6, 5, 0).view(), true, 7).unwrap();
        let grads = model.backward(&cache, Array2::zeros(logits.raw_dim()).view()).unwrap();
        assert!(grads.iter().all(|(_, g)| g.iter().all(|&v| v == 0.0)), "{arch}");
    }
}

#[test]
fn cache_goes_stale_after_update() {
    let mut model = SeqModel::init(tiny_config(Arch::Tcn, 5, 3), 3).unwrap();
    let (logits, cache) = model.forward(random_matrix(6, 5, 0).view(), false, 0).unwrap();
    let d = Array2::ones(logits.raw_dim());
    assert!(model.backward(&cache, d.view()).is_ok());
    model.params_mut();
    assert!(matches!(model.backward(&cache, d.view()), Err(Error::StaleCache)));

    let other = SeqModel::init(tiny_config(Arch::Tcn, 5, 3), 3).unwrap();
    let (_, cache) = other.forward(random_matrix(6, 5, 0).view(), false, 0).unwrap();
    assert!(matches!(model.backward(&cache, d.view()), Err(Error::StaleCache)));
}

#[test]
fn backward_rejects_bad_gradient_shape() {
    let model = SeqModel::init(tiny_config(Arch::Bilstm, 5, 3), 3).unwrap();
    let (_, cache) = model.forward(random_matrix(6, 5, 0).view(), false, 0).unwrap();
    assert!(matches!(
        model.backward(&cache, Array2::zeros((6, 2)).view()),
        Err(Error::DimMismatch(_))
    ));
}

/// Objective `Σ r ⊙ logits` for a fixed random `r`, evaluated at perturbed parameters.
fn objective(model: &SeqModel, batch: &SeqBatch, r: &Array2<f64>, dropout_seed: u64) -> f64 {
    let (logits, _) = model.forward_batch(batch, true, dropout_seed).unwrap();
    (&logits * r).sum()
}

/// Central finite differences on up to `per_tensor` entries of every tensor.
fn gradient_check(arch: Arch) {
    gradient_check_with(tiny_config(arch, 5, 3));
}

fn gradient_check_with(cfg: ModelConfig) {
    let arch = cfg.arch;
    let mut model = SeqModel::init(cfg, 21).unwrap();
    let seqs: Vec<_> = (0..2).map(|i| random_matrix(6, 5, 30 + i)).collect();
    let views: Vec<_> = seqs.iter().map(|s| s.view()).collect();
    let batch = SeqBatch::from_sequences(&views).unwrap();
    let r = random_matrix(12, 3, 77);
    let seed = 5;

    let (_, cache) = model.forward_batch(&batch, true, seed).unwrap();
    let grads = model.backward(&cache, r.view()).unwrap();

    let h = 1e-5;
    let per_tensor = 12;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let names: Vec<String> = model.params().names().map(String::from).collect();
    let mut worst = 0.0f64;
    for name in names {
        let n = model.params().get(&name).unwrap().len();
        let picks: Vec<usize> = if n <= per_tensor {
            (0..n).collect()
        } else {
            (0..per_tensor).map(|_| rng.gen_range(0..n)).collect()
        };
        for idx in picks {
            let original = model.params().get(&name).unwrap().as_slice().unwrap()[idx];
            let set = |m: &mut SeqModel, v: f64| {
                m.params_mut().get_mut(&name).unwrap().as_slice_mut().unwrap()[idx] = v;
            };
            set(&mut model, original + h);
            let plus = objective(&model, &batch, &r, seed);
            set(&mut model, original - h);
            let minus = objective(&model, &batch, &r, seed);
            set(&mut model, original);
            let numeric = (plus - minus) / (2.0 * h);
            let analytic = grads.get(&name).unwrap().as_slice().unwrap()[idx];
            let rel = (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-6);
            worst = worst.max(rel);
            assert!(
                rel < 1e-4,
                "{arch} {name}[{idx}]: analytic {analytic} numeric {numeric} rel {rel}"
            );
        }
    }
    assert!(worst < 1e-4);
}

#[test]
fn bilstm_gradients_match_finite_differences() {
    gradient_check(Arch::Bilstm);
}

#[test]
fn tcn_gradients_match_finite_differences() {
    gradient_check(Arch::Tcn);
}

#[test]
fn symmetric_tcn_gradients_match_finite_differences() {
    let mut cfg = tiny_config(Arch::Tcn, 5, 3);
    cfg.tcn.causal = false;
    gradient_check_with(cfg);
}

#[test]
fn causal_tcn_ignores_future_frames() {
    let model = SeqModel::init(tiny_config(Arch::Tcn, 5, 3), 4).unwrap();
    let x = random_matrix(12, 5, 4);
    let mut y = x.clone();
    y.row_mut(8).mapv_inplace(|v| v + 1.0);
    let a = model.logits(x.view()).unwrap();
    let b = model.logits(y.view()).unwrap();
    assert_eq!(a.slice(s![..8, ..]), b.slice(s![..8, ..]));
    assert_ne!(a.row(8), b.row(8));

    let mut cfg = tiny_config(Arch::Tcn, 5, 3);
    cfg.tcn.causal = false;
    let model = SeqModel::init(cfg, 4).unwrap();
    let a = model.logits(x.view()).unwrap();
    let b = model.logits(y.view()).unwrap();
    assert_ne!(a.row(7), b.row(7));
}

#[test]
fn transformer_gradients_match_finite_differences() {
    gradient_check(Arch::Transformer);
}

#[test]
fn loss_gradient_through_model() {
    let model = SeqModel::init(tiny_config(Arch::Bilstm, 5, 3), 2).unwrap();
    let x = random_matrix(5, 5, 9);
    let labels = [0, 1, 2, 1, 0];
    let (logits, cache) = model.forward(x.view(), false, 0).unwrap();
    let (loss, d) = ce_loss_grad(logits.view(), &labels).unwrap();
    assert!(loss.is_finite() && loss > 0.0);
    let grads = model.backward(&cache, d.view()).unwrap();
    assert!(grads.iter().any(|(_, g)| g.iter().any(|&v| v != 0.0)));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn forward_shape_holds(t in 1usize..30, arch_idx in 0usize..3, seed in 0u64..1000) {
        let arch = ARCHES[arch_idx];
        let model = SeqModel::init(tiny_config(arch, 4, 2), seed).unwrap();
        let logits = model.logits(random_matrix(t, 4, seed).view()).unwrap();
        prop_assert_eq!(logits.dim(), (t, 2));
        prop_assert!(logits.iter().all(|v| v.is_finite()));
    }
}
