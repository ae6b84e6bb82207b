//! Glue from recordings on disk to model-ready sequences: modality
//! selection, trigger filtering, frame remapping and fusion.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::{s, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featfuse::{
    fit_norm, fuse, pose_to_tcp, FusedSequence, NormStats, EMBED_DIM, FT_COLS, FT_DIM, POSE_COLS, POSE_DIM, RAW_DIM,
    TACTILE_COLS, VISUAL_COLS,
};
use crate::recdata::{load_recording, synchronize, Rate, Recording, SensorStream, StreamKind};
use crate::segmenter::{evaluate_many, segment, Metrics, Prediction};
use crate::seqmodels::{Arch, BiLstmConfig, Checkpoint, ModelConfig};
use crate::synthgen::{
    GroundTruth, Splits, GROUND_TRUTH_FILE, META_FT_TRANSFORM, META_TCP_LEFT, META_TCP_RIGHT, POSE_LEFT_STREAM,
    POSE_RIGHT_STREAM, SKILL_VOCABULARY,
};
use crate::trainer::{train, TrainConfig, TrainReport};
use crate::windower::WindowParams;
use crate::wrenchproc::{
    baseline_stats_default, detect_trigger_intervals, filter_trigger_artifacts, map_wrench_stream, FrameTransform,
    IntervalSet, DEFAULT_PAD, TRIGGER_VOCABULARY,
};

/// Which input blocks a model sees. Excluded blocks are zeroed, keeping the
/// 532-column layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModalitySet {
    pub camera: bool,
    pub tactile: bool,
    pub ft: bool,
    pub pose: bool,
}

impl ModalitySet {
    pub const ALL: ModalitySet = ModalitySet {
        camera: true,
        tactile: true,
        ft: true,
        pose: true,
    };
    pub const CAMERA_ONLY: ModalitySet = ModalitySet {
        camera: true,
        tactile: false,
        ft: false,
        pose: false,
    };
    const NAMES: [&'static str; 4] = ["camera", "tactile", "ft", "pose"];

    fn flags(&self) -> [bool; 4] {
        [self.camera, self.tactile, self.ft, self.pose]
    }

    /// Zeroes the columns of every excluded block.
    pub fn mask(&self, features: &mut Array2<f64>) {
        let blocks = [VISUAL_COLS, TACTILE_COLS, FT_COLS, POSE_COLS];
        for (keep, cols) in self.flags().into_iter().zip(blocks) {
            if !keep {
                features.slice_mut(s![.., cols]).fill(0.0);
            }
        }
    }
}

impl Default for ModalitySet {
    fn default() -> Self {
        Self::ALL
    }
}

impl fmt::Display for ModalitySet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = Self::NAMES
            .iter()
            .zip(self.flags())
            .filter_map(|(n, on)| on.then_some(*n))
            .collect();
        f.write_str(&names.join(","))
    }
}

impl FromStr for ModalitySet {
    type Err = Error;

    /// Comma-separated subset of `camera,tactile,ft,pose`, or `all`.
    fn from_str(s: &str) -> Result<Self> {
        if s.trim() == "all" {
            return Ok(Self::ALL);
        }
        let mut set = ModalitySet {
            camera: false,
            tactile: false,
            ft: false,
            pose: false,
        };
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part {
                "camera" => set.camera = true,
                "tactile" => set.tactile = true,
                "ft" => set.ft = true,
                "pose" => set.pose = true,
                other => {
                    return Err(Error::Config(format!(
                        "unknown modality `{other}` (expected camera, tactile, ft or pose)"
                    )))
                }
            }
        }
        if set.flags().iter().all(|f| !f) {
            return Err(Error::Config("at least one modality is required".into()));
        }
        Ok(set)
    }
}

/// Mixes a run seed with a tag into an independent sub-seed (FNV-1a then a
/// splitmix finalizer).
pub fn derive_seed(seed: u64, tag: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes().chain(seed.to_le_bytes()) {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h ^= h >> 30;
    h = h.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h ^= h >> 27;
    h = h.wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^ (h >> 31)
}

/// Sensor mounting read from recording metadata, identity where absent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mounting {
    /// Gripper sensor frame to robot sensor frame.
    pub ft: FrameTransform,
    pub tcp_left: FrameTransform,
    pub tcp_right: FrameTransform,
}

impl Mounting {
    pub fn from_meta(rec: &Recording) -> Result<Self> {
        let read = |key: &str| match rec.meta.get(key) {
            Some(text) => FrameTransform::from_json(text),
            None => Ok(FrameTransform::identity()),
        };
        Ok(Self {
            ft: read(META_FT_TRANSFORM)?,
            tcp_left: read(META_TCP_LEFT)?,
            tcp_right: read(META_TCP_RIGHT)?,
        })
    }
}

fn single_stream(rec: &Recording, kind: StreamKind) -> Result<&SensorStream> {
    rec.streams_of_kind(kind)
        .next()
        .ok_or_else(|| Error::MissingStream(kind.to_string()))
}

/// The synchronized raw F/T stream, still in the gripper sensor frame.
pub fn ft_stream(rec: &Recording) -> Result<&SensorStream> {
    let s = single_stream(rec, StreamKind::Ft)?;
    if s.dim() != FT_DIM {
        return Err(Error::dim(format!("F/T stream `{}` has {} channels", s.name(), s.dim())));
    }
    Ok(s)
}

fn pose_streams(rec: &Recording) -> Result<(&SensorStream, &SensorStream)> {
    if let (Some(l), Some(r)) = (rec.stream(POSE_LEFT_STREAM), rec.stream(POSE_RIGHT_STREAM)) {
        return Ok((l, r));
    }
    let poses: Vec<_> = rec.streams_of_kind(StreamKind::Pose).collect();
    match poses.as_slice() {
        [l, r] => Ok((l, r)),
        _ => Err(Error::MissingStream("left and right pose".into())),
    }
}

/// Per-frame inputs of one demonstration on the common grid, with F/T in
/// the robot sensor frame and poses at the tool center points.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameInputs {
    pub name: String,
    pub tactile: Array2<f64>,
    pub visual: Array2<f64>,
    pub ft: Array2<f64>,
    pub pose_left: Array2<f64>,
    pub pose_right: Array2<f64>,
    pub labels: Option<Vec<usize>>,
}

impl FrameInputs {
    pub fn len(&self) -> usize {
        self.tactile.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// F/T then both poses, `T x 20`.
    pub fn raw(&self) -> Array2<f64> {
        let mut raw = Array2::zeros((self.len(), RAW_DIM));
        raw.slice_mut(s![.., ..FT_DIM]).assign(&self.ft);
        raw.slice_mut(s![.., FT_DIM..FT_DIM + POSE_DIM]).assign(&self.pose_left);
        raw.slice_mut(s![.., FT_DIM + POSE_DIM..]).assign(&self.pose_right);
        raw
    }
}

/// Synchronizes `rec` at `rate` and gathers the streams `mods` needs.
/// Blocks outside `mods` may be missing from the recording and come back
/// as zeros.
pub fn frame_inputs(rec: &Recording, rate: Rate, mods: ModalitySet) -> Result<FrameInputs> {
    let sync = synchronize(rec, rate)?;
    let n = sync.frame_count().ok_or(Error::NoOverlap)?;
    let mounting = Mounting::from_meta(rec)?;
    let take = |on: bool, kind: StreamKind, width: usize| -> Result<Array2<f64>> {
        if !on {
            return Ok(Array2::zeros((n, width)));
        }
        let s = single_stream(&sync, kind)?;
        if s.dim() != width {
            return Err(Error::dim(format!("stream `{}` has {} channels, expected {width}", s.name(), s.dim())));
        }
        Ok(s.values().clone())
    };
    let tactile = take(mods.tactile, StreamKind::TactileEmbed, EMBED_DIM)?;
    let visual = take(mods.camera, StreamKind::VisualEmbed, EMBED_DIM)?;
    let ft = if mods.ft {
        map_wrench_stream(ft_stream(&sync)?, &mounting.ft)?.values().clone()
    } else {
        Array2::zeros((n, FT_DIM))
    };
    let (pose_left, pose_right) = if mods.pose {
        let (l, r) = pose_streams(&sync)?;
        (
            pose_to_tcp(l.values().view(), &mounting.tcp_left)?,
            pose_to_tcp(r.values().view(), &mounting.tcp_right)?,
        )
    } else {
        (Array2::zeros((n, POSE_DIM)), Array2::zeros((n, POSE_DIM)))
    };
    Ok(FrameInputs {
        name: rec.name.clone(),
        tactile,
        visual,
        ft,
        pose_left,
        pose_right,
        labels: sync.labels().map(|l| l.labels().to_vec()),
    })
}

/// Normalization of the 20 raw channels over every training frame.
pub fn fit_raw_norm(train: &[FrameInputs]) -> Result<NormStats> {
    let raws: Vec<Array2<f64>> = train.iter().map(FrameInputs::raw).collect();
    let views: Vec<_> = raws.iter().map(|r| r.view()).collect();
    fit_norm(&views)
}

/// Fuses, normalizes and masks one demonstration.
pub fn fuse_inputs(inputs: &FrameInputs, stats: &NormStats, mods: ModalitySet) -> Result<FusedSequence> {
    let mut seq = fuse(
        inputs.tactile.view(),
        inputs.visual.view(),
        inputs.ft.view(),
        inputs.pose_left.view(),
        inputs.pose_right.view(),
        stats,
    )?;
    mods.mask(&mut seq.features);
    seq.labels = inputs.labels.clone();
    seq.source = inputs.name.clone();
    Ok(seq)
}

/// Trigger detector layout: a small BiLSTM over the six raw F/T channels.
pub fn trigger_model_config() -> ModelConfig {
    let mut cfg = ModelConfig::new(Arch::Bilstm, TRIGGER_VOCABULARY.len());
    cfg.input_dim = FT_DIM;
    cfg.bilstm = BiLstmConfig { layers: 2, hidden: 32 };
    cfg
}

/// Normalized sensor-frame F/T, the trigger detector's input.
pub fn trigger_sequence(
    ft: ArrayView2<'_, f64>,
    stats: &NormStats,
    labels: Option<Vec<usize>>,
    source: impl Into<String>,
) -> Result<FusedSequence> {
    FusedSequence::with_any_width(stats.apply(ft)?, labels, source)
}

/// Runs the trigger detector over a synchronized recording and pads every
/// detected interval by `pad` frames.
pub fn detect_intervals(sync: &Recording, detector: &Checkpoint, window: &WindowParams, pad: usize) -> Result<IntervalSet> {
    detector.expect_classes(TRIGGER_VOCABULARY.len())?;
    let ft = ft_stream(sync)?;
    let features = detector.norm_stats.apply(ft.values().view())?;
    let found = detect_trigger_intervals(features.view(), &detector.model, window)?;
    Ok(found.padded(pad, ft.len()))
}

/// Default padding for detected intervals.
pub const DETECTION_PAD: usize = DEFAULT_PAD;

/// Replaces the F/T frames inside `intervals` with baseline noise. Every
/// other stream and frame is carried over untouched.
pub fn filter_recording(sync: &Recording, intervals: &IntervalSet, seed: u64) -> Result<Recording> {
    let ft = ft_stream(sync)?;
    let stats = baseline_stats_default(ft.values().view())?;
    let cleaned = filter_trigger_artifacts(ft.values().view(), intervals, &stats, seed)?;
    let mut out = sync.clone();
    out.replace_stream(ft.with_values(cleaned)?);
    Ok(out)
}

/// What a model labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    /// The five manipulation skills, from fused features.
    Skill,
    /// Operator trigger actions, from raw F/T.
    Trigger,
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Target::Skill => "skill",
            Target::Trigger => "trigger",
        })
    }
}

impl FromStr for Target {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "skill" => Ok(Target::Skill),
            "trigger" => Ok(Target::Trigger),
            other => Err(Error::Config(format!("unknown target `{other}` (expected skill or trigger)"))),
        }
    }
}

pub const TAG_TARGET: &str = "target";
pub const TAG_MODALITIES: &str = "modalities";

/// A recording with its ground-truth sidecar, when one exists.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedDemo {
    pub recording: Recording,
    pub truth: Option<GroundTruth>,
}

pub fn load_demo(dir: &Path) -> Result<LoadedDemo> {
    let recording = load_recording(dir)?;
    let gt_path = dir.join(GROUND_TRUTH_FILE);
    let truth = if gt_path.is_file() { Some(GroundTruth::load(&gt_path)?) } else { None };
    Ok(LoadedDemo { recording, truth })
}

/// Loads every demo of `split` listed in `<root>/splits.json`.
pub fn load_split(root: &Path, split: &str) -> Result<Vec<LoadedDemo>> {
    let splits = Splits::load(root)?;
    splits.get(split)?.iter().map(|name| load_demo(&root.join(name))).collect()
}

/// Sensor-frame F/T on the common grid with trigger labels when known.
pub fn trigger_frames(demo: &LoadedDemo, rate: Rate) -> Result<(Array2<f64>, Option<Vec<usize>>)> {
    let sync = synchronize(&demo.recording, rate)?;
    let ft = ft_stream(&sync)?.values().clone();
    let labels = match &demo.truth {
        Some(gt) if gt.trigger_labels.len() != ft.nrows() => {
            return Err(Error::dim(format!(
                "`{}` has {} frames but {} trigger labels",
                demo.recording.name,
                ft.nrows(),
                gt.trigger_labels.len()
            )))
        }
        Some(gt) => Some(gt.trigger_labels.clone()),
        None => None,
    };
    Ok((ft, labels))
}

fn vocabulary(target: Target) -> Vec<String> {
    let names: &[&str] = match target {
        Target::Skill => &SKILL_VOCABULARY,
        Target::Trigger => &TRIGGER_VOCABULARY,
    };
    names.iter().map(|s| s.to_string()).collect()
}

/// Trains a skill segmenter on fused features restricted to `mods`.
pub fn train_skill_model(
    cfg: &TrainConfig,
    model: ModelConfig,
    train_recs: &[&Recording],
    val_recs: &[&Recording],
    mods: ModalitySet,
    rate: Rate,
) -> Result<(Checkpoint, TrainReport)> {
    let inputs = |recs: &[&Recording]| -> Result<Vec<FrameInputs>> {
        recs.iter().map(|r| frame_inputs(r, rate, mods)).collect()
    };
    let (tr, va) = (inputs(train_recs)?, inputs(val_recs)?);
    if tr.is_empty() {
        return Err(Error::EmptyDataset("training split has no sequences".into()));
    }
    let stats = fit_raw_norm(&tr)?;
    let fused = |v: &[FrameInputs]| -> Result<Vec<FusedSequence>> { v.iter().map(|i| fuse_inputs(i, &stats, mods)).collect() };
    let (tr, va) = (fused(&tr)?, fused(&va)?);
    let (model, report) = train(cfg, &tr, &va, model)?;
    let ck = Checkpoint::new(model, stats, vocabulary(Target::Skill))?
        .with_tag(TAG_TARGET, Target::Skill.to_string())
        .with_tag(TAG_MODALITIES, mods.to_string());
    Ok((ck, report))
}

/// Trains the trigger detector on raw F/T with ground-truth trigger labels.
pub fn train_trigger_model(
    cfg: &TrainConfig,
    model: ModelConfig,
    train_demos: &[&LoadedDemo],
    val_demos: &[&LoadedDemo],
    rate: Rate,
) -> Result<(Checkpoint, TrainReport)> {
    let frames = |d: &[&LoadedDemo]| -> Result<Vec<_>> { d.iter().map(|d| trigger_frames(d, rate)).collect() };
    let (tr, va) = (frames(train_demos)?, frames(val_demos)?);
    let views: Vec<_> = tr.iter().map(|(ft, _)| ft.view()).collect();
    if views.is_empty() {
        return Err(Error::EmptyDataset("training split has no sequences".into()));
    }
    let stats = fit_norm(&views)?;
    let seqs = |v: Vec<(Array2<f64>, Option<Vec<usize>>)>, demos: &[&LoadedDemo]| -> Result<Vec<FusedSequence>> {
        v.into_iter()
            .zip(demos)
            .map(|((ft, labels), d)| trigger_sequence(ft.view(), &stats, labels, &d.recording.name))
            .collect()
    };
    let (tr, va) = (seqs(tr, train_demos)?, seqs(va, val_demos)?);
    let (model, report) = train(cfg, &tr, &va, model)?;
    let ck = Checkpoint::new(model, stats, vocabulary(Target::Trigger))?.with_tag(TAG_TARGET, Target::Trigger.to_string());
    Ok((ck, report))
}

/// The target a checkpoint was trained for; untagged checkpoints are
/// recognized by their class count.
pub fn checkpoint_target(ck: &Checkpoint) -> Result<Target> {
    match ck.tags.get(TAG_TARGET) {
        Some(t) => t.parse(),
        None if ck.vocabulary.len() == TRIGGER_VOCABULARY.len() => Ok(Target::Trigger),
        None => Ok(Target::Skill),
    }
}

pub fn checkpoint_modalities(ck: &Checkpoint) -> Result<ModalitySet> {
    ck.tags.get(TAG_MODALITIES).map_or(Ok(ModalitySet::ALL), |m| m.parse())
}

/// Soft-voted prediction for one demo plus its ground truth, if known.
pub fn predict_demo(
    ck: &Checkpoint,
    demo: &LoadedDemo,
    window: &WindowParams,
    rate: Rate,
) -> Result<(Prediction, Option<Vec<usize>>)> {
    match checkpoint_target(ck)? {
        Target::Skill => {
            ck.expect_classes(SKILL_VOCABULARY.len())?;
            let mods = checkpoint_modalities(ck)?;
            let inputs = frame_inputs(&demo.recording, rate, mods)?;
            let seq = fuse_inputs(&inputs, &ck.norm_stats, mods)?;
            let pred = segment(&ck.model, seq.features.view(), window)?;
            Ok((pred, seq.labels))
        }
        Target::Trigger => {
            ck.expect_classes(TRIGGER_VOCABULARY.len())?;
            let (ft, labels) = trigger_frames(demo, rate)?;
            let features = ck.norm_stats.apply(ft.view())?;
            Ok((segment(&ck.model, features.view(), window)?, labels))
        }
    }
}

/// Frame metrics pooled over every demo.
pub fn evaluate_demos(ck: &Checkpoint, demos: &[&LoadedDemo], window: &WindowParams, rate: Rate) -> Result<Metrics> {
    if demos.is_empty() {
        return Err(Error::EmptyDataset("nothing to evaluate".into()));
    }
    let mut pairs = Vec::with_capacity(demos.len());
    for demo in demos {
        let (pred, truth) = predict_demo(ck, demo, window, rate)?;
        let truth = truth.ok_or_else(|| Error::LabelsRequired(format!("evaluation of `{}`", demo.recording.name)))?;
        pairs.push((pred.labels, truth));
    }
    evaluate_many(pairs.iter().map(|(p, t)| (p.as_slice(), t.as_slice())), ck.vocabulary.len())
}
