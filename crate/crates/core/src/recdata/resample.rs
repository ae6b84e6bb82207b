use ndarray::Array2;

use super::rate::TIME_EPS;
use super::{LabelTrack, Rate, Recording, SensorStream};
use crate::error::{Error, Result};

/// Zero-order-hold resampling onto `first + k / target` for every grid
/// point up to the last input timestamp.
pub fn resample(stream: &SensorStream, target: Rate) -> Result<SensorStream> {
    let (first, last) = match (stream.first_time(), stream.last_time()) {
        (Some(f), Some(l)) => (f, l),
        _ => return Err(Error::EmptyStream(stream.name().to_string())),
    };
    let count = target.frames_in(last - first);
    resample_on_grid(stream, target, first, count)
}

/// Resamples onto `count` points `start + k / rate`. Every grid time must be
/// at or after the stream's first sample.
fn resample_on_grid(stream: &SensorStream, rate: Rate, start: f64, count: usize) -> Result<SensorStream> {
    let ts = stream.timestamps();
    let values = stream.values();
    let mut out = Array2::zeros((count, stream.dim()));
    let mut grid = Vec::with_capacity(count);
    let mut src = 0usize;
    for k in 0..count {
        let t = rate.grid_time(start, k);
        while src + 1 < ts.len() && ts[src + 1] <= t + TIME_EPS {
            src += 1;
        }
        debug_assert!(ts[src] <= t + TIME_EPS, "grid point precedes stream start");
        out.row_mut(k).assign(&values.row(src));
        grid.push(t);
    }
    SensorStream::new(stream.name(), stream.kind(), rate, grid, out)
}

fn hold_labels(track: &LabelTrack, label_rate: Rate, rate: Rate, start: f64, count: usize) -> Result<LabelTrack> {
    let labels = track.labels();
    let mut out = Vec::with_capacity(count);
    let mut src = 0usize;
    for k in 0..count {
        let t = rate.grid_time(start, k);
        while src + 1 < labels.len() && label_rate.grid_time(0.0, src + 1) <= t + TIME_EPS {
            src += 1;
        }
        out.push(labels[src]);
    }
    LabelTrack::new(track.vocabulary().to_vec(), out)
}

/// Resamples every stream (and the label track, if any) onto one shared grid
/// spanning the interval where all streams have data.
pub fn synchronize(rec: &Recording, target: Rate) -> Result<Recording> {
    let mut start = f64::NEG_INFINITY;
    let mut end = f64::INFINITY;
    for s in rec.streams() {
        match (s.first_time(), s.last_time()) {
            (Some(f), Some(l)) => {
                start = start.max(f);
                end = end.min(l);
            }
            _ => return Err(Error::EmptyStream(s.name().to_string())),
        }
    }
    if rec.num_streams() == 0 {
        return Err(Error::EmptyDataset(format!("recording `{}` has no streams", rec.name)));
    }
    if start > end + TIME_EPS {
        return Err(Error::NoOverlap);
    }
    let count = target.frames_in((end - start).max(0.0));

    let mut out = Recording::new(rec.name.clone());
    out.meta = rec.meta.clone();
    for s in rec.streams() {
        out.add_stream(resample_on_grid(s, target, start, count)?)?;
    }
    if let Some(track) = rec.labels() {
        let label_rate = rec.rate().ok_or_else(|| Error::Format("label track without a rate".into()))?;
        if track.is_empty() {
            return Err(Error::EmptyStream("labels".into()));
        }
        let last_label = label_rate.grid_time(0.0, track.len() - 1);
        if target.grid_time(start, count - 1) > last_label + label_rate.period() + TIME_EPS {
            return Err(Error::dim(format!(
                "label track ({} frames) does not span the common window",
                track.len()
            )));
        }
        out.set_labels(hold_labels(track, label_rate, target, start, count)?, target);
    } else {
        out.rate = Some(target);
    }
    Ok(out)
}

/// Synchronizes at the tactile rate.
pub fn synchronize_default(rec: &Recording) -> Result<Recording> {
    synchronize(rec, Rate::TACTILE)
}
