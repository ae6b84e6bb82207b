//! Frame-wise temporal labelers (BiLSTM, TCN, Transformer) with exact
//! reverse-mode gradients, cross-entropy loss, Adam and checkpoints.
//!
//! All three map a `T x input_dim` sequence to `T x C` logits. Sequences of
//! equal length can be run together as a [`SeqBatch`].

mod adam;
mod bilstm;
mod checkpoint;
mod loss;
mod ops;
mod params;
mod tcn;
mod transformer;

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featfuse::FUSED_DIM;

pub use adam::{adam_step, LrSchedule, OptimizerState};
pub use checkpoint::{load_checkpoint, load_checkpoint_expecting, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC};
pub use loss::{ce_loss, ce_loss_grad};
pub use ops::softmax_rows;
pub use params::ParamSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Bilstm,
    Tcn,
    Transformer,
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Arch::Bilstm => "bilstm",
            Arch::Tcn => "tcn",
            Arch::Transformer => "transformer",
        })
    }
}

impl FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bilstm" => Ok(Arch::Bilstm),
            "tcn" => Ok(Arch::Tcn),
            "transformer" => Ok(Arch::Transformer),
            other => Err(Error::Config(format!("unknown architecture `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BiLstmConfig {
    pub layers: usize,
    /// Per direction.
    pub hidden: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TcnConfig {
    pub blocks: usize,
    pub kernel: usize,
    pub channels: usize,
    /// Past-only receptive field; `false` centers the kernel.
    pub causal: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransformerConfig {
    pub d_model: usize,
    pub heads: usize,
    pub layers: usize,
    pub ffn_dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub arch: Arch,
    pub input_dim: usize,
    pub num_classes: usize,
    /// Applied to the encoder output, before the classifier.
    pub dropout_rate: f64,
    pub bilstm: BiLstmConfig,
    pub tcn: TcnConfig,
    pub transformer: TransformerConfig,
}

impl ModelConfig {
    /// Default sizes for 532-D fused input.
    pub fn new(arch: Arch, num_classes: usize) -> Self {
        Self {
            arch,
            input_dim: FUSED_DIM,
            num_classes,
            dropout_rate: 0.3,
            bilstm: BiLstmConfig { layers: 3, hidden: 128 },
            tcn: TcnConfig {
                blocks: 5,
                kernel: 3,
                channels: 256,
                causal: true,
            },
            transformer: TransformerConfig {
                d_model: 256,
                heads: 4,
                layers: 3,
                ffn_dim: 512,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.input_dim == 0 || self.num_classes == 0 {
            return bad("input_dim and num_classes must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad("dropout_rate must lie in [0, 1)");
        }
        match self.arch {
            Arch::Bilstm => {
                if self.bilstm.layers == 0 || self.bilstm.hidden == 0 {
                    return bad("bilstm layers and hidden must be positive");
                }
            }
            Arch::Tcn => {
                let t = self.tcn;
                if t.blocks == 0 || t.channels == 0 || t.kernel == 0 || t.kernel % 2 == 0 {
                    return bad("tcn needs positive blocks/channels and an odd kernel");
                }
            }
            Arch::Transformer => {
                let t = self.transformer;
                if t.d_model == 0 || t.heads == 0 || t.layers == 0 || t.ffn_dim == 0 {
                    return bad("transformer dims must be positive");
                }
                if t.d_model % t.heads != 0 {
                    return Err(Error::Config(format!(
                        "heads ({}) must divide d_model ({})",
                        t.heads, t.d_model
                    )));
                }
                if t.d_model % 2 != 0 {
                    return bad("d_model must be even for sinusoidal encoding");
                }
            }
        }
        Ok(())
    }

    /// Width of the encoder output fed to the classifier.
    pub fn encoder_width(&self) -> usize {
        match self.arch {
            Arch::Bilstm => 2 * self.bilstm.hidden,
            Arch::Tcn => self.tcn.channels,
            Arch::Transformer => self.transformer.d_model,
        }
    }
}

/// `B` equal-length sequences stored time-major: row `t * B + b` holds
/// frame `t` of sequence `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct SeqBatch {
    data: Array2<f64>,
    steps: usize,
    batch: usize,
}

impl SeqBatch {
    pub fn single(x: ArrayView2<'_, f64>) -> Self {
        Self {
            data: x.to_owned(),
            steps: x.nrows(),
            batch: 1,
        }
    }

    pub fn from_sequences(seqs: &[ArrayView2<'_, f64>]) -> Result<Self> {
        let first = seqs
            .first()
            .ok_or_else(|| Error::EmptyDataset("empty batch".into()))?;
        let (steps, width) = first.dim();
        if seqs.iter().any(|s| s.dim() != (steps, width)) {
            return Err(Error::dim("batched sequences must share length and width"));
        }
        let batch = seqs.len();
        let mut data = Array2::zeros((steps * batch, width));
        for (b, seq) in seqs.iter().enumerate() {
            for t in 0..steps {
                data.row_mut(t * batch + b).assign(&seq.row(t));
            }
        }
        Ok(Self { data, steps, batch })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    /// Interleaves per-sequence label vectors into batch row order.
    pub fn interleave_labels(labels: &[&[usize]]) -> Vec<usize> {
        let batch = labels.len();
        let steps = labels.first().map_or(0, |l| l.len());
        let mut out = vec![0; steps * batch];
        for (b, l) in labels.iter().enumerate() {
            for (t, &y) in l.iter().enumerate() {
                out[t * batch + b] = y;
            }
        }
        out
    }

    /// Extracts sequence `b` from a matrix laid out in batch row order.
    pub fn split_rows(m: ArrayView2<'_, f64>, steps: usize, batch: usize, b: usize) -> Array2<f64> {
        let mut out = Array2::zeros((steps, m.ncols()));
        for t in 0..steps {
            out.row_mut(t).assign(&m.row(t * batch + b));
        }
        out
    }
}

enum ArchCache {
    Bilstm(bilstm::BiLstmCache),
    Tcn(tcn::TcnCache),
    Transformer(transformer::TransformerCache),
}

/// Intermediate values of one forward pass, consumed by [`SeqModel::backward`].
pub struct ForwardCache {
    instance: u64,
    generation: u64,
    steps: usize,
    batch: usize,
    arch: ArchCache,
    /// Classifier input (encoder output after dropout).
    features: Array2<f64>,
    mask: Option<Array2<f64>>,
}

static NEXT_INSTANCE: AtomicU64 = AtomicU64::new(1);

/// A configured temporal labeler and its parameters.
#[derive(Debug, Clone)]
pub struct SeqModel {
    config: ModelConfig,
    params: ParamSet,
    seed: u64,
    instance: u64,
    generation: u64,
}

impl PartialEq for SeqModel {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.params == other.params && self.seed == other.seed
    }
}

pub(crate) fn uniform(rng: &mut impl Rng, shape: (usize, usize), fan_in: usize) -> Array2<f64> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Array2::from_shape_simple_fn(shape, || rng.gen_range(-bound..bound))
}

impl SeqModel {
    /// Seeded initialization: weights uniform in `±1/sqrt(fan_in)`, biases
    /// zero, LSTM forget-gate biases one, layer-norm gains one.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        match config.arch {
            Arch::Bilstm => bilstm::init(&config.bilstm, config.input_dim, &mut params, &mut rng),
            Arch::Tcn => tcn::init(&config.tcn, config.input_dim, &mut params, &mut rng),
            Arch::Transformer => transformer::init(&config.transformer, config.input_dim, &mut params, &mut rng),
        }
        let width = config.encoder_width();
        params.insert("classifier.w", uniform(&mut rng, (config.num_classes, width), width));
        params.insert("classifier.b", ndarray::Array1::<f64>::zeros(config.num_classes));
        Ok(Self {
            config,
            params,
            seed,
            instance: NEXT_INSTANCE.fetch_add(1, Ordering::Relaxed),
            generation: 0,
        })
    }

    /// Wraps existing parameters, checking them against the layout `config` implies.
    pub fn from_params(config: ModelConfig, params: ParamSet, seed: u64) -> Result<Self> {
        let template = Self::init(config, 0)?;
        if !template.params.same_layout(&params) {
            return Err(Error::Config("parameter layout does not match the configuration".into()));
        }
        if params.iter().any(|(_, t)| t.iter().any(|v| !v.is_finite())) {
            return Err(Error::Config("non-finite parameter".into()));
        }
        Ok(Self {
            params,
            seed,
            ..template
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Mutable parameters. Invalidates outstanding forward caches.
    pub fn params_mut(&mut self) -> &mut ParamSet {
        self.generation += 1;
        &mut self.params
    }

    /// Runs one sequence. Returns `T x C` logits and the backward cache.
    pub fn forward(
        &self,
        features: ArrayView2<'_, f64>,
        train_mode: bool,
        dropout_seed: u64,
    ) -> Result<(Array2<f64>, ForwardCache)> {
        self.forward_batch(&SeqBatch::single(features), train_mode, dropout_seed)
    }

    /// Eval-mode logits for one sequence.
    pub fn logits(&self, features: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        Ok(self.forward(features, false, 0)?.0)
    }

    /// Runs a batch; logits come back in the batch's row order.
    pub fn forward_batch(
        &self,
        batch: &SeqBatch,
        train_mode: bool,
        dropout_seed: u64,
    ) -> Result<(Array2<f64>, ForwardCache)> {
        if batch.data.ncols() != self.config.input_dim {
            return Err(Error::dim(format!(
                "input has {} features, model expects {}",
                batch.data.ncols(),
                self.config.input_dim
            )));
        }
        if batch.steps == 0 {
            return Err(Error::dim("sequence must have at least one frame"));
        }
        let (steps, b) = (batch.steps, batch.batch);
        let x = batch.data.clone();
        let (top, arch) = match self.config.arch {
            Arch::Bilstm => {
                let (top, c) = bilstm::forward(&self.params, &self.config.bilstm, x, steps, b);
                (top, ArchCache::Bilstm(c))
            }
            Arch::Tcn => {
                let (top, c) = tcn::forward(&self.params, &self.config.tcn, x, steps, b);
                (top, ArchCache::Tcn(c))
            }
            Arch::Transformer => {
                let (top, c) = transformer::forward(&self.params, &self.config.transformer, x, steps, b);
                (top, ArchCache::Transformer(c))
            }
        };
        let rate = self.config.dropout_rate;
        let (features, mask) = if train_mode && rate > 0.0 {
            let mask = ops::dropout_mask(top.nrows(), top.ncols(), rate, dropout_seed);
            (&top * &mask, Some(mask))
        } else {
            (top, None)
        };
        let logits = ops::linear(
            features.view(),
            self.params.mat("classifier.w"),
            self.params.vec1("classifier.b"),
        );
        Ok((
            logits,
            ForwardCache {
                instance: self.instance,
                generation: self.generation,
                steps,
                batch: b,
                arch,
                features,
                mask,
            },
        ))
    }

    /// Gradients of `Σ d_logits ⊙ logits` with respect to every parameter.
    pub fn backward(&self, cache: &ForwardCache, d_logits: ArrayView2<'_, f64>) -> Result<ParamSet> {
        if cache.instance != self.instance || cache.generation != self.generation {
            return Err(Error::StaleCache);
        }
        if d_logits.dim() != (cache.steps * cache.batch, self.config.num_classes) {
            return Err(Error::dim(format!(
                "d_logits is {:?}, expected ({}, {})",
                d_logits.dim(),
                cache.steps * cache.batch,
                self.config.num_classes
            )));
        }
        let mut grads = self.params.zeros_like();
        let mut d_top = ops::linear_backward(
            cache.features.view(),
            d_logits,
            &self.params,
            &mut grads,
            "classifier.w",
            "classifier.b",
            true,
        )
        .expect("requested");
        if let Some(mask) = &cache.mask {
            d_top *= mask;
        }
        let (steps, b) = (cache.steps, cache.batch);
        match &cache.arch {
            ArchCache::Bilstm(c) => bilstm::backward(&self.params, &self.config.bilstm, c, d_top, steps, b, &mut grads),
            ArchCache::Tcn(c) => tcn::backward(&self.params, &self.config.tcn, c, d_top, steps, b, &mut grads),
            ArchCache::Transformer(c) => {
                transformer::backward(&self.params, &self.config.transformer, c, d_top, steps, b, &mut grads)
            }
        }
        Ok(grads)
    }
}

#[cfg(test)]
mod tests;
