//! Mini-batch training over idle-filtered windows with validation-driven
//! early stopping.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featfuse::FusedSequence;
use crate::segmenter;
use crate::seqmodels::{adam_step, ce_loss_grad, LrSchedule, ModelConfig, OptimizerState, ParamSet, SeqBatch, SeqModel};
use crate::windower::{make_training_windows, plan_windows, Window, WindowParams, DEFAULT_MAX_IDLE_RATIO};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs_max: usize,
    pub patience: usize,
    pub schedule: LrSchedule,
    pub batch_size: usize,
    pub dropout_rate: f64,
    pub seed: u64,
    pub window: WindowParams,
    pub max_idle_ratio: f64,
    pub idle_class: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs_max: 60,
            patience: 8,
            schedule: LrSchedule::default(),
            batch_size: 32,
            dropout_rate: 0.3,
            seed: 0,
            window: WindowParams::default(),
            max_idle_ratio: DEFAULT_MAX_IDLE_RATIO,
            idle_class: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs_max == 0 || self.patience == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs_max, patience and batch_size must be at least 1".into()));
        }
        if !(self.schedule.lr0 > 0.0) || !(self.schedule.factor > 0.0) {
            return Err(Error::Config("learning rate and decay factor must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.max_idle_ratio) {
            return Err(Error::Config("max_idle_ratio must lie in [0, 1]".into()));
        }
        self.window.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Patience,
    MaxEpochs,
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_accuracy: f64,
    pub improved: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    pub stop_reason: StopReason,
    pub train_windows: usize,
}

impl TrainReport {
    /// One JSON object per epoch.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for e in &self.epochs {
            out.push_str(&serde_json::to_string(e)?);
            out.push('\n');
        }
        Ok(out)
    }
}

/// Tracks the best validation score; ties keep the earlier epoch.
#[derive(Debug, Clone)]
pub struct EarlyStopper {
    patience: usize,
    best: Option<(usize, f64)>,
    stale: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: None,
            stale: 0,
        }
    }

    /// Records an epoch's score. Returns whether it is a new best.
    pub fn observe(&mut self, epoch: usize, score: f64) -> bool {
        match self.best {
            Some((_, best)) if score <= best => {
                self.stale += 1;
                false
            }
            _ => {
                self.best = Some((epoch, score));
                self.stale = 0;
                true
            }
        }
    }

    pub fn should_stop(&self) -> bool {
        self.stale >= self.patience
    }

    pub fn best(&self) -> Option<(usize, f64)> {
        self.best
    }
}

fn check_split(seqs: &[FusedSequence], what: &str, classes: usize) -> Result<()> {
    if seqs.is_empty() {
        return Err(Error::EmptyDataset(format!("{what} split has no sequences")));
    }
    for seq in seqs {
        let labels = seq
            .labels
            .as_ref()
            .ok_or_else(|| Error::LabelsRequired(format!("{what} sequence `{}`", seq.source)))?;
        if let Some((frame, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= classes) {
            return Err(Error::Label { frame, label, classes });
        }
    }
    Ok(())
}

/// Soft-voted frame accuracy pooled over all frames of `seqs`.
pub fn validation_accuracy(model: &SeqModel, seqs: &[FusedSequence], window: &WindowParams) -> Result<f64> {
    let mut correct = 0usize;
    let mut total = 0usize;
    for seq in seqs {
        let labels = seq
            .labels
            .as_ref()
            .ok_or_else(|| Error::LabelsRequired(format!("validation sequence `{}`", seq.source)))?;
        let pred = segmenter::segment(model, seq.features.view(), window)?;
        correct += pred.labels.iter().zip(labels).filter(|(p, y)| p == y).count();
        total += labels.len();
    }
    Ok(if total == 0 { 0.0 } else { correct as f64 / total as f64 })
}

/// Groups shuffled windows into batches of equal length; short windows
/// (from sequences shorter than the window) run alone.
fn make_batches(order: &[usize], windows: &[Window], full_len: usize, batch_size: usize) -> Vec<Vec<usize>> {
    let mut batches = Vec::new();
    let mut current = Vec::with_capacity(batch_size);
    for &i in order {
        if windows[i].len() != full_len {
            batches.push(vec![i]);
            continue;
        }
        current.push(i);
        if current.len() == batch_size {
            batches.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        batches.push(current);
    }
    batches
}

/// Trains a fresh model seeded by `cfg.seed`.
pub fn train(
    cfg: &TrainConfig,
    train_seqs: &[FusedSequence],
    val_seqs: &[FusedSequence],
    model_config: ModelConfig,
) -> Result<(SeqModel, TrainReport)> {
    train_observed(cfg, train_seqs, val_seqs, model_config, |_, _| {})
}

/// [`train`] with a callback invoked after every epoch with that epoch's
/// record and the model as it stands.
pub fn train_observed(
    cfg: &TrainConfig,
    train_seqs: &[FusedSequence],
    val_seqs: &[FusedSequence],
    model_config: ModelConfig,
    mut on_epoch: impl FnMut(&EpochRecord, &SeqModel),
) -> Result<(SeqModel, TrainReport)> {
    cfg.validate()?;
    let classes = model_config.num_classes;
    check_split(train_seqs, "training", classes)?;
    check_split(val_seqs, "validation", classes)?;

    let mut windows = Vec::new();
    for seq in train_seqs {
        let plan = plan_windows(seq.len(), &cfg.window)?;
        windows.extend(make_training_windows(seq, &plan, cfg.idle_class, cfg.max_idle_ratio)?);
    }
    if windows.is_empty() {
        return Err(Error::NoTrainingWindows);
    }

    let mut model_config = model_config;
    model_config.dropout_rate = cfg.dropout_rate;
    let mut model = SeqModel::init(model_config, cfg.seed)?;
    let mut opt = OptimizerState::new(model.params(), cfg.schedule.lr0);
    let mut stopper = EarlyStopper::new(cfg.patience);
    let mut best_params: ParamSet = model.params().clone();
    let mut records = Vec::new();
    let mut stop_reason = StopReason::MaxEpochs;

    for epoch in 0..cfg.epochs_max {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64 + 1);
        let mut order: Vec<usize> = (0..windows.len()).collect();
        order.shuffle(&mut rng);
        opt.lr = cfg.schedule.lr_at(epoch);

        let mut loss_sum = 0.0;
        let mut frames = 0usize;
        for batch_idx in make_batches(&order, &windows, cfg.window.window, cfg.batch_size) {
            let views: Vec<_> = batch_idx.iter().map(|&i| windows[i].features.view()).collect();
            let label_refs: Vec<&[usize]> = batch_idx.iter().map(|&i| windows[i].labels.as_slice()).collect();
            let batch = SeqBatch::from_sequences(&views)?;
            let labels = SeqBatch::interleave_labels(&label_refs);
            let (logits, cache) = model.forward_batch(&batch, true, rng.gen())?;
            let (loss, d_logits) = ce_loss_grad(logits.view(), &labels)?;
            let grads = model.backward(&cache, d_logits.view())?;
            adam_step(&mut model, &mut opt, &grads)?;
            loss_sum += loss * labels.len() as f64;
            frames += labels.len();
        }

        let val_accuracy = validation_accuracy(&model, val_seqs, &cfg.window)?;
        let improved = stopper.observe(epoch + 1, val_accuracy);
        if improved {
            best_params = model.params().clone();
        }
        let record = EpochRecord {
            epoch: epoch + 1,
            lr: opt.lr,
            train_loss: loss_sum / frames as f64,
            val_accuracy,
            improved,
        };
        log::info!(
            "epoch {} loss {:.4} val acc {:.4}{}",
            record.epoch,
            record.train_loss,
            record.val_accuracy,
            if improved { " *" } else { "" }
        );
        on_epoch(&record, &model);
        records.push(record);
        if stopper.should_stop() {
            stop_reason = StopReason::Patience;
            break;
        }
    }

    *model.params_mut() = best_params;
    let (best_epoch, best_val_accuracy) = stopper.best().expect("at least one epoch ran");
    Ok((
        model,
        TrainReport {
            epochs: records,
            best_epoch,
            best_val_accuracy,
            stop_reason,
            train_windows: windows.len(),
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::featfuse::FUSED_DIM;
    use crate::seqmodels::{ce_loss, Arch, BiLstmConfig};
    use ndarray::Array2;

    fn small_model(arch: Arch, classes: usize) -> ModelConfig {
        let mut cfg = ModelConfig::new(arch, classes);
        cfg.bilstm = BiLstmConfig { layers: 1, hidden: 8 };
        cfg.tcn.channels = 8;
        cfg.tcn.blocks = 2;
        cfg.transformer.d_model = 8;
        cfg.transformer.heads = 2;
        cfg.transformer.layers = 1;
        cfg.transformer.ffn_dim = 16;
        cfg
    }

    /// Labels readable from one feature column, so the task is learnable.
    fn toy_sequence(len: usize, seed: u64) -> FusedSequence {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut features = Array2::zeros((len, FUSED_DIM));
        let mut labels = Vec::with_capacity(len);
        let mut label = 0;
        for t in 0..len {
            if t % 15 == 0 {
                label = rng.gen_range(0..3);
            }
            labels.push(label);
            features[[t, label]] = 1.0;
            features[[t, 10]] = rng.gen_range(-0.1..0.1);
        }
        FusedSequence::new(features, Some(labels), format!("toy{seed}")).unwrap()
    }

    fn quick_config() -> TrainConfig {
        TrainConfig {
            epochs_max: 3,
            patience: 5,
            schedule: LrSchedule {
                lr0: 1e-2,
                ..LrSchedule::default()
            },
            batch_size: 8,
            dropout_rate: 0.0,
            seed: 4,
            window: WindowParams::new(20, 5).unwrap(),
            max_idle_ratio: 1.0,
            idle_class: 0,
        }
    }

    #[test]
    fn early_stopping_trace() {
        let mut s = EarlyStopper::new(2);
        let mut stopped_after = None;
        for (epoch, acc) in [0.5, 0.6, 0.6, 0.6, 0.9].into_iter().enumerate() {
            s.observe(epoch + 1, acc);
            if s.should_stop() {
                stopped_after = Some(epoch + 1);
                break;
            }
        }
        assert_eq!(stopped_after, Some(4));
        assert_eq!(s.best(), Some((2, 0.6)));
    }

    #[test]
    fn empty_and_unlabeled_splits() {
        let seq = toy_sequence(40, 0);
        let cfg = quick_config();
        let model = small_model(Arch::Tcn, 3);
        assert!(matches!(
            train(&cfg, &[], &[seq.clone()], model.clone()),
            Err(Error::EmptyDataset(_))
        ));
        assert!(matches!(
            train(&cfg, &[seq.clone()], &[], model.clone()),
            Err(Error::EmptyDataset(_))
        ));
        let unlabeled = FusedSequence::new(seq.features.clone(), None, "u").unwrap();
        assert!(matches!(
            train(&cfg, &[unlabeled], &[seq], model),
            Err(Error::LabelsRequired(_))
        ));
    }

    #[test]
    fn all_idle_windows_rejected() {
        let features = Array2::zeros((60, FUSED_DIM));
        let seq = FusedSequence::new(features, Some(vec![0; 60]), "idle").unwrap();
        let cfg = TrainConfig {
            max_idle_ratio: 0.8,
            ..quick_config()
        };
        assert!(matches!(
            train(&cfg, &[seq.clone()], &[seq], small_model(Arch::Tcn, 3)),
            Err(Error::NoTrainingWindows)
        ));
    }

    #[test]
    fn identical_seeds_identical_runs() {
        let train_seqs = vec![toy_sequence(80, 1), toy_sequence(63, 2)];
        let val = vec![toy_sequence(50, 3)];
        let cfg = quick_config();
        let (a, ra) = train(&cfg, &train_seqs, &val, small_model(Arch::Bilstm, 3)).unwrap();
        let (b, rb) = train(&cfg, &train_seqs, &val, small_model(Arch::Bilstm, 3)).unwrap();
        assert_eq!(ra, rb);
        assert_eq!(a.params(), b.params());
        assert_eq!(ra.to_jsonl().unwrap().lines().count(), ra.epochs.len());
    }

    #[test]
    fn returns_best_epoch_parameters() {
        let train_seqs = vec![toy_sequence(90, 5)];
        let val = vec![toy_sequence(70, 6)];
        let cfg = TrainConfig {
            epochs_max: 6,
            patience: 6,
            ..quick_config()
        };
        let mut snapshots = Vec::new();
        let (model, report) = train_observed(&cfg, &train_seqs, &val, small_model(Arch::Tcn, 3), |_, m| {
            snapshots.push(m.params().clone())
        })
        .unwrap();
        assert!(report.best_epoch <= report.epochs.len());
        assert_eq!(model.params(), &snapshots[report.best_epoch - 1]);
        let acc = validation_accuracy(&model, &val, &cfg.window).unwrap();
        assert_eq!(acc, report.best_val_accuracy);
        let best = report.epochs.iter().map(|e| e.val_accuracy).fold(0.0, f64::max);
        assert_eq!(best, report.best_val_accuracy);
    }

    #[test]
    fn overfits_a_single_window() {
        let seq = toy_sequence(20, 9);
        let cfg = TrainConfig {
            epochs_max: 1,
            ..quick_config()
        };
        let train_seqs = vec![seq.clone()];
        let mut model = SeqModel::init(small_model(Arch::Bilstm, 3), 1).unwrap();
        let mut opt = OptimizerState::new(model.params(), cfg.schedule.lr0);
        let labels = seq.labels.clone().unwrap();
        let mut losses = Vec::new();
        for _ in 0..60 {
            let (logits, cache) = model.forward(train_seqs[0].features.view(), false, 0).unwrap();
            let (loss, d) = ce_loss_grad(logits.view(), &labels).unwrap();
            losses.push(loss);
            let grads = model.backward(&cache, d.view()).unwrap();
            adam_step(&mut model, &mut opt, &grads).unwrap();
        }
        for w in losses[..10].windows(2) {
            assert!(w[1] <= w[0] + 1e-3, "{losses:?}");
        }
        let final_loss = ce_loss(model.logits(seq.features.view()).unwrap().view(), &labels).unwrap();
        assert!(final_loss < 0.1, "{final_loss}");
    }

    #[test]
    fn batches_respect_length() {
        let w = |len: usize| Window {
            start: 0,
            features: Array2::zeros((len, 1)),
            labels: vec![0; len],
        };
        let windows = vec![w(5), w(3), w(5), w(5)];
        let batches = make_batches(&[0, 1, 2, 3], &windows, 5, 2);
        assert_eq!(batches, vec![vec![1], vec![0, 2], vec![3]]);
    }
}
