//! Recordings: timestamped multi-rate sensor streams, the skill label track,
//! resampling onto a common grid, and the on-disk manifest format.

mod io;
mod rate;
mod resample;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{load_recording, save_recording, MANIFEST_FILE};
pub use rate::Rate;
pub use resample::{resample, synchronize, synchronize_default};

/// What a stream carries. Determines how the fusion stage consumes it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StreamKind {
    TactileEmbed,
    VisualEmbed,
    Ft,
    Pose,
    Other,
}

impl fmt::Display for StreamKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            StreamKind::TactileEmbed => "tactile_embed",
            StreamKind::VisualEmbed => "visual_embed",
            StreamKind::Ft => "ft",
            StreamKind::Pose => "pose",
            StreamKind::Other => "other",
        };
        f.write_str(s)
    }
}

impl FromStr for StreamKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tactile_embed" => Ok(StreamKind::TactileEmbed),
            "visual_embed" => Ok(StreamKind::VisualEmbed),
            "ft" => Ok(StreamKind::Ft),
            "pose" => Ok(StreamKind::Pose),
            "other" => Ok(StreamKind::Other),
            other => Err(Error::Format(format!("unknown stream kind `{other}`"))),
        }
    }
}

/// A single sensor channel group sampled at its native rate.
///
/// Timestamps are seconds since recording start, finite, non-negative and
/// strictly increasing. `values` holds one row per timestamp.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorStream {
    name: String,
    kind: StreamKind,
    rate: Rate,
    timestamps: Vec<f64>,
    values: Array2<f64>,
}

impl SensorStream {
    pub fn new(
        name: impl Into<String>,
        kind: StreamKind,
        rate: Rate,
        timestamps: Vec<f64>,
        values: Array2<f64>,
    ) -> Result<Self> {
        let name = name.into();
        let corrupt = |reason: String| Error::CorruptStream {
            name: name.clone(),
            reason,
        };
        if values.ncols() == 0 {
            return Err(corrupt("stream dimension must be positive".into()));
        }
        if timestamps.len() != values.nrows() {
            return Err(corrupt(format!(
                "{} timestamps for {} frames",
                timestamps.len(),
                values.nrows()
            )));
        }
        for (i, &t) in timestamps.iter().enumerate() {
            if !t.is_finite() || t < 0.0 {
                return Err(corrupt(format!("timestamp {i} is {t}")));
            }
            if i > 0 && t <= timestamps[i - 1] {
                return Err(corrupt(format!("timestamps not strictly increasing at frame {i}")));
            }
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(corrupt(format!(
                "non-finite value at frame {}",
                pos / values.ncols()
            )));
        }
        Ok(Self {
            name,
            kind,
            rate,
            timestamps,
            values,
        })
    }

    /// A stream sampled exactly on `start + k / rate`.
    pub fn on_grid(
        name: impl Into<String>,
        kind: StreamKind,
        rate: Rate,
        start: f64,
        values: Array2<f64>,
    ) -> Result<Self> {
        let timestamps = (0..values.nrows()).map(|k| rate.grid_time(start, k)).collect();
        Self::new(name, kind, rate, timestamps, values)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kind(&self) -> StreamKind {
        self.kind
    }

    pub fn rate(&self) -> Rate {
        self.rate
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn timestamps(&self) -> &[f64] {
        &self.timestamps
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn first_time(&self) -> Option<f64> {
        self.timestamps.first().copied()
    }

    pub fn last_time(&self) -> Option<f64> {
        self.timestamps.last().copied()
    }

    /// Same timestamps, new values of possibly different width.
    pub fn with_values(&self, values: Array2<f64>) -> Result<Self> {
        Self::new(
            self.name.clone(),
            self.kind,
            self.rate,
            self.timestamps.clone(),
            values,
        )
    }

    pub(crate) fn shifted(&self, offset: f64) -> Result<Self> {
        let ts = self.timestamps.iter().map(|t| t - offset).collect();
        Self::new(self.name.clone(), self.kind, self.rate, ts, self.values.clone())
    }
}

/// Frame-wise class indices defined on the synchronized grid.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelTrack {
    vocabulary: Vec<String>,
    labels: Vec<usize>,
}

impl LabelTrack {
    pub fn new(vocabulary: Vec<String>, labels: Vec<usize>) -> Result<Self> {
        if vocabulary.is_empty() {
            return Err(Error::Format("label vocabulary is empty".into()));
        }
        if let Some((frame, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= vocabulary.len()) {
            return Err(Error::Label {
                frame,
                label,
                classes: vocabulary.len(),
            });
        }
        Ok(Self { vocabulary, labels })
    }

    pub fn vocabulary(&self) -> &[String] {
        &self.vocabulary
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.vocabulary.len()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// A named demonstration: streams keyed by unique name, an optional label
/// track on the common rate, and free-form metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub name: String,
    streams: BTreeMap<String, SensorStream>,
    labels: Option<LabelTrack>,
    rate: Option<Rate>,
    pub meta: BTreeMap<String, String>,
}

impl Recording {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            streams: BTreeMap::new(),
            labels: None,
            rate: None,
            meta: BTreeMap::new(),
        }
    }

    pub fn add_stream(&mut self, stream: SensorStream) -> Result<()> {
        if self.streams.contains_key(stream.name()) {
            return Err(Error::Format(format!("duplicate stream name `{}`", stream.name())));
        }
        self.streams.insert(stream.name().to_string(), stream);
        Ok(())
    }

    pub(crate) fn replace_stream(&mut self, stream: SensorStream) {
        self.streams.insert(stream.name().to_string(), stream);
    }

    /// Attaches a label track sampled at `rate`, with label `k` at time `k / rate`.
    pub fn set_labels(&mut self, labels: LabelTrack, rate: Rate) {
        self.labels = Some(labels);
        self.rate = Some(rate);
    }

    pub fn stream(&self, name: &str) -> Option<&SensorStream> {
        self.streams.get(name)
    }

    pub fn streams(&self) -> impl Iterator<Item = &SensorStream> {
        self.streams.values()
    }

    pub fn streams_of_kind(&self, kind: StreamKind) -> impl Iterator<Item = &SensorStream> {
        self.streams.values().filter(move |s| s.kind() == kind)
    }

    pub fn num_streams(&self) -> usize {
        self.streams.len()
    }

    pub fn labels(&self) -> Option<&LabelTrack> {
        self.labels.as_ref()
    }

    /// The designated common rate, present once synchronized or labeled.
    pub fn rate(&self) -> Option<Rate> {
        self.rate
    }

    /// Frame count on the common grid, when every stream shares one.
    pub fn frame_count(&self) -> Option<usize> {
        let mut lens = self.streams.values().map(SensorStream::len);
        let first = lens.next()?;
        lens.all(|l| l == first).then_some(first)
    }

    /// Shifts every timestamp so the earliest stream starts at zero.
    pub fn rebased(&self) -> Result<Self> {
        let offset = self
            .streams
            .values()
            .filter_map(SensorStream::first_time)
            .fold(f64::INFINITY, f64::min);
        if !offset.is_finite() || offset == 0.0 {
            return Ok(self.clone());
        }
        let mut out = self.clone();
        for s in out.streams.values_mut() {
            *s = s.shifted(offset)?;
        }
        Ok(out)
    }
}
