use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{LabelTrack, Rate, Recording, SensorStream, StreamKind};
use crate::error::{Error, Result};
use crate::tsm::{self, Dtype};

pub const MANIFEST_FILE: &str = "recording.json";
const LABELS_FILE: &str = "labels.tsm";

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    name: String,
    rate_hz: Option<f64>,
    streams: Vec<StreamEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    labels: Option<LabelsEntry>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    meta: BTreeMap<String, String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct StreamEntry {
    name: String,
    kind: StreamKind,
    rate_hz: f64,
    dim: usize,
    path: String,
    timestamps_path: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct LabelsEntry {
    path: String,
    vocabulary: Vec<String>,
}

fn manifest_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    }
}

/// Writes `rec` into directory `dir` (created if needed): a JSON manifest
/// plus one `TSM1` file per stream, per timestamp column and for the labels.
pub fn save_recording(rec: &Recording, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut streams = Vec::new();
    for s in rec.streams() {
        let path = format!("{}.tsm", s.name());
        let timestamps_path = format!("{}.ts.tsm", s.name());
        tsm::save(&dir.join(&path), s.values().view(), Dtype::F64)?;
        let ts = Array2::from_shape_vec((s.len(), 1), s.timestamps().to_vec()).expect("column vector");
        tsm::save(&dir.join(&timestamps_path), ts.view(), Dtype::F64)?;
        streams.push(StreamEntry {
            name: s.name().to_string(),
            kind: s.kind(),
            rate_hz: s.rate().hz(),
            dim: s.dim(),
            path,
            timestamps_path,
        });
    }
    let labels = match rec.labels() {
        Some(track) => {
            let col = Array2::from_shape_fn((track.len(), 1), |(i, _)| track.labels()[i] as f64);
            tsm::save(&dir.join(LABELS_FILE), col.view(), Dtype::F64)?;
            Some(LabelsEntry {
                path: LABELS_FILE.to_string(),
                vocabulary: track.vocabulary().to_vec(),
            })
        }
        None => None,
    };
    let manifest = Manifest {
        name: rec.name.clone(),
        rate_hz: rec.rate().map(Rate::hz),
        streams,
        labels,
        meta: rec.meta.clone(),
    };
    let path = dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest)?;
    fs::write(&path, json).map_err(|e| Error::io(path, e))
}

/// Loads a recording from its directory or manifest path.
pub fn load_recording(path: &Path) -> Result<Recording> {
    let manifest_path = manifest_path(path);
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", manifest_path.display())))?;

    let mut seen = BTreeSet::new();
    let mut rec = Recording::new(manifest.name);
    rec.meta = manifest.meta;
    for entry in manifest.streams {
        if !seen.insert(entry.name.clone()) {
            return Err(Error::Format(format!("duplicate stream name `{}`", entry.name)));
        }
        let values = tsm::load(&dir.join(&entry.path))?;
        if values.ncols() != entry.dim {
            return Err(Error::Format(format!(
                "stream `{}` declares dim {} but {} has {} columns",
                entry.name,
                entry.dim,
                entry.path,
                values.ncols()
            )));
        }
        let ts = tsm::load(&dir.join(&entry.timestamps_path))?;
        if ts.ncols() != 1 || ts.nrows() != values.nrows() {
            return Err(Error::Format(format!(
                "stream `{}` timestamps are {}x{}, expected {}x1",
                entry.name,
                ts.nrows(),
                ts.ncols(),
                values.nrows()
            )));
        }
        let rate = Rate::from_hz(entry.rate_hz)?;
        let stream = SensorStream::new(entry.name, entry.kind, rate, ts.into_raw_vec_and_offset().0, values)?;
        rec.add_stream(stream)?;
    }
    let rate = manifest.rate_hz.map(Rate::from_hz).transpose()?;
    match (manifest.labels, rate) {
        (Some(entry), Some(rate)) => {
            let col = tsm::load(&dir.join(&entry.path))?;
            if col.ncols() != 1 {
                return Err(Error::Format(format!("label file has {} columns", col.ncols())));
            }
            let labels = col
                .iter()
                .map(|&v| {
                    if v >= 0.0 && v.fract() == 0.0 && v.is_finite() {
                        Ok(v as usize)
                    } else {
                        Err(Error::Format(format!("label value {v} is not a class index")))
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            rec.set_labels(LabelTrack::new(entry.vocabulary, labels)?, rate);
        }
        (Some(_), None) => return Err(Error::Format("labels present without a common rate_hz".into())),
        (None, rate) => rec.rate = rate,
    }
    Ok(rec)
}
