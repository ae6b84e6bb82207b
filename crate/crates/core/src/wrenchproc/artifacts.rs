use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::segmenter;
use crate::seqmodels::SeqModel;
use crate::windower::WindowParams;

/// Frames at the start of each sequence assumed free of trigger actions.
pub const BASELINE_FRAMES: usize = 20;
/// Lower bound on any per-channel standard deviation.
pub const STD_FLOOR: f64 = 1e-6;
/// Frames added to each side of a detected interval before replacement.
pub const DEFAULT_PAD: usize = 2;
/// Class vocabulary of the trigger detector; index 0 is background.
pub const TRIGGER_VOCABULARY: [&str; 4] = ["none", "pull", "lock", "release"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriggerClass {
    Pull,
    Lock,
    Release,
}

impl TriggerClass {
    /// Index in [`TRIGGER_VOCABULARY`].
    pub fn index(self) -> usize {
        match self {
            TriggerClass::Pull => 1,
            TriggerClass::Lock => 2,
            TriggerClass::Release => 3,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        match i {
            1 => Some(TriggerClass::Pull),
            2 => Some(TriggerClass::Lock),
            3 => Some(TriggerClass::Release),
            _ => None,
        }
    }
}

impl fmt::Display for TriggerClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(TRIGGER_VOCABULARY[self.index()])
    }
}

impl FromStr for TriggerClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TRIGGER_VOCABULARY
            .iter()
            .position(|&name| name == s)
            .and_then(TriggerClass::from_index)
            .ok_or_else(|| Error::InvalidIntervals(format!("unknown trigger class `{s}`")))
    }
}

/// Half-open frame range `[start, end)` tagged with its trigger class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interval {
    pub start: usize,
    pub end: usize,
    pub class: TriggerClass,
}

impl Interval {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }

    /// Intersection over union of two frame ranges.
    pub fn iou(&self, other: &Interval) -> f64 {
        let inter = self.end.min(other.end).saturating_sub(self.start.max(other.start));
        let union = self.len() + other.len() - inter;
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }
}

/// Sorted, non-overlapping intervals within a sequence of known length.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct IntervalSet {
    intervals: Vec<Interval>,
}

#[derive(Debug, Serialize, Deserialize)]
struct IntervalRow {
    start: usize,
    end: usize,
    class: String,
}

impl IntervalSet {
    pub fn new(intervals: Vec<Interval>, len: usize) -> Result<Self> {
        for (i, iv) in intervals.iter().enumerate() {
            if iv.start >= iv.end || iv.end > len {
                return Err(Error::InvalidIntervals(format!(
                    "interval [{}, {}) invalid for {len} frames",
                    iv.start, iv.end
                )));
            }
            if i > 0 && intervals[i - 1].end > iv.start {
                return Err(Error::InvalidIntervals(format!(
                    "interval [{}, {}) overlaps or precedes [{}, {})",
                    iv.start,
                    iv.end,
                    intervals[i - 1].start,
                    intervals[i - 1].end
                )));
            }
        }
        Ok(Self { intervals })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn intervals(&self) -> &[Interval] {
        &self.intervals
    }

    pub fn len(&self) -> usize {
        self.intervals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    pub fn contains(&self, frame: usize) -> bool {
        self.intervals.iter().any(|iv| iv.start <= frame && frame < iv.end)
    }

    /// Widens every interval by `pad` frames per side (clamped to
    /// `[0, len)`) and merges any that then overlap. Merged intervals keep
    /// the class of their first member. Adjacent intervals stay separate,
    /// so `pad = 0` returns the set unchanged.
    pub fn padded(&self, pad: usize, len: usize) -> IntervalSet {
        let mut out: Vec<Interval> = Vec::with_capacity(self.intervals.len());
        for iv in &self.intervals {
            let start = iv.start.saturating_sub(pad);
            let end = (iv.end + pad).min(len);
            match out.last_mut() {
                Some(prev) if prev.end > start => prev.end = prev.end.max(end),
                _ => out.push(Interval {
                    start,
                    end,
                    class: iv.class,
                }),
            }
        }
        IntervalSet { intervals: out }
    }

    /// Frame-wise trigger labels (0 = none).
    pub fn to_labels(&self, len: usize) -> Vec<usize> {
        let mut labels = vec![0; len];
        for iv in &self.intervals {
            labels[iv.start..iv.end.min(len)].fill(iv.class.index());
        }
        labels
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        for iv in &self.intervals {
            w.serialize(IntervalRow {
                start: iv.start,
                end: iv.end,
                class: iv.class.to_string(),
            })
            .expect("in-memory csv");
        }
        if self.intervals.is_empty() {
            w.write_record(["start", "end", "class"]).expect("in-memory csv");
        }
        String::from_utf8(w.into_inner().expect("in-memory csv")).expect("ascii")
    }

    pub fn from_csv(text: &str, len: usize) -> Result<Self> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let mut intervals = Vec::new();
        for row in r.deserialize::<IntervalRow>() {
            let row = row.map_err(|e| Error::InvalidIntervals(format!("bad interval csv: {e}")))?;
            intervals.push(Interval {
                start: row.start,
                end: row.end,
                class: row.class.parse()?,
            });
        }
        Self::new(intervals, len)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path, len: usize) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text, len)
    }
}

/// Per-channel baseline statistics of an F/T sequence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelStats {
    pub mean: [f64; 6],
    pub std: [f64; 6],
}

/// Population mean and standard deviation of each channel over the first
/// `n` frames, with the deviation floored at [`STD_FLOOR`].
pub fn baseline_stats(ft: ArrayView2<'_, f64>, n: usize) -> Result<ChannelStats> {
    if ft.ncols() != 6 {
        return Err(Error::dim(format!("F/T matrix has {} columns, expected 6", ft.ncols())));
    }
    if n < 2 || ft.nrows() < n {
        return Err(Error::TooShort {
            needed: n.max(2),
            have: ft.nrows(),
        });
    }
    let mut stats = ChannelStats {
        mean: [0.0; 6],
        std: [0.0; 6],
    };
    let head = ft.slice(ndarray::s![..n, ..]);
    for c in 0..6 {
        let col = head.column(c);
        let mean = col.sum() / n as f64;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        stats.mean[c] = mean;
        stats.std[c] = var.sqrt().max(STD_FLOOR);
    }
    Ok(stats)
}

pub fn baseline_stats_default(ft: ArrayView2<'_, f64>) -> Result<ChannelStats> {
    baseline_stats(ft, BASELINE_FRAMES)
}

/// Replaces every frame inside `intervals` with independent per-channel
/// Gaussian draws `N(mean_c, std_c)`. Frames outside are copied bit-for-bit.
///
/// Draws are taken frame by frame, channel by channel, from a ChaCha8
/// generator seeded with `seed`.
pub fn filter_trigger_artifacts(
    ft: ArrayView2<'_, f64>,
    intervals: &IntervalSet,
    stats: &ChannelStats,
    seed: u64,
) -> Result<Array2<f64>> {
    if ft.ncols() != 6 {
        return Err(Error::dim(format!("F/T matrix has {} columns, expected 6", ft.ncols())));
    }
    // revalidate against this sequence's length
    IntervalSet::new(intervals.intervals.clone(), ft.nrows())?;
    let normals = (0..6)
        .map(|c| Normal::new(stats.mean[c], stats.std[c]))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::InvalidIntervals(format!("bad noise parameters: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = ft.to_owned();
    for iv in intervals.intervals() {
        for t in iv.start..iv.end {
            for (c, normal) in normals.iter().enumerate() {
                out[[t, c]] = normal.sample(&mut rng);
            }
        }
    }
    Ok(out)
}

/// Converts maximal runs of one non-background label into intervals.
pub fn intervals_from_labels(labels: &[usize]) -> Result<IntervalSet> {
    let mut intervals = Vec::new();
    let mut t = 0;
    while t < labels.len() {
        let label = labels[t];
        let start = t;
        while t < labels.len() && labels[t] == label {
            t += 1;
        }
        if label != 0 {
            let class = TriggerClass::from_index(label).ok_or(Error::Label {
                frame: start,
                label,
                classes: TRIGGER_VOCABULARY.len(),
            })?;
            intervals.push(Interval { start, end: t, class });
        }
    }
    IntervalSet::new(intervals, labels.len())
}

/// Mean over `truth` intervals of the best IoU with a detected interval of
/// the same class. Two empty sets score 1.
pub fn mean_iou(truth: &IntervalSet, detected: &IntervalSet) -> f64 {
    if truth.is_empty() {
        return if detected.is_empty() { 1.0 } else { 0.0 };
    }
    let total: f64 = truth
        .intervals()
        .iter()
        .map(|t| {
            detected
                .intervals()
                .iter()
                .filter(|d| d.class == t.class)
                .map(|d| t.iou(d))
                .fold(0.0, f64::max)
        })
        .sum();
    total / truth.len() as f64
}

/// Runs a 4-class trigger segmenter over F/T features and returns the
/// detected artifact intervals.
pub fn detect_trigger_intervals(
    features: ArrayView2<'_, f64>,
    model: &SeqModel,
    params: &WindowParams,
) -> Result<IntervalSet> {
    let classes = model.config().num_classes;
    if classes != TRIGGER_VOCABULARY.len() {
        return Err(Error::VocabularyMismatch {
            expected: TRIGGER_VOCABULARY.len(),
            got: classes,
        });
    }
    let pred = segmenter::segment(model, features, params)?;
    intervals_from_labels(&pred.labels)
}
