//! Per-frame fusion of tactile and visual embeddings with normalized F/T and
//! TCP pose channels into one 532-D feature row.

use std::ops::Range;

use nalgebra::{Quaternion, Rotation3, UnitQuaternion, Vector3};
use ndarray::{s, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::wrenchproc::FrameTransform;

pub const EMBED_DIM: usize = 256;
pub const FT_DIM: usize = 6;
/// Position plus `(w, x, y, z)` quaternion, per hand.
pub const POSE_DIM: usize = 7;
/// F/T channels followed by both hands' poses.
pub const RAW_DIM: usize = FT_DIM + 2 * POSE_DIM;
pub const FUSED_DIM: usize = 2 * EMBED_DIM + RAW_DIM;

pub const TACTILE_COLS: Range<usize> = 0..EMBED_DIM;
pub const VISUAL_COLS: Range<usize> = EMBED_DIM..2 * EMBED_DIM;
pub const FT_COLS: Range<usize> = 2 * EMBED_DIM..2 * EMBED_DIM + FT_DIM;
pub const POSE_COLS: Range<usize> = 2 * EMBED_DIM + FT_DIM..FUSED_DIM;

const NORM_FLOOR: f64 = 1e-6;
const UNIT_TOL: f64 = 1e-6;

/// Per-channel z-score parameters, fitted on training data only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    pub fn identity(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    /// `(x - mean) / std`, column by column.
    pub fn apply(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.channels() {
            return Err(Error::dim(format!(
                "normalizer has {} channels, input has {}",
                self.channels(),
                x.ncols()
            )));
        }
        let mut out = x.to_owned();
        for mut row in out.rows_mut() {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s;
            }
        }
        Ok(out)
    }
}

/// Fits population mean and floored standard deviation over every frame of
/// every training sequence.
pub fn fit_norm(train: &[ArrayView2<'_, f64>]) -> Result<NormStats> {
    let channels = train
        .first()
        .map(|m| m.ncols())
        .ok_or_else(|| Error::EmptyDataset("no sequences to fit normalization".into()))?;
    if let Some(bad) = train.iter().find(|m| m.ncols() != channels) {
        return Err(Error::dim(format!("sequence has {} channels, expected {channels}", bad.ncols())));
    }
    let frames: usize = train.iter().map(|m| m.nrows()).sum();
    if frames < 2 {
        return Err(Error::EmptyDataset(format!("need at least 2 frames, have {frames}")));
    }
    let mut mean = vec![0.0; channels];
    for m in train {
        for row in m.rows() {
            for (acc, v) in mean.iter_mut().zip(row) {
                *acc += v;
            }
        }
    }
    mean.iter_mut().for_each(|v| *v /= frames as f64);
    let mut var = vec![0.0; channels];
    for m in train {
        for row in m.rows() {
            for ((acc, v), mu) in var.iter_mut().zip(row).zip(&mean) {
                *acc += (v - mu) * (v - mu);
            }
        }
    }
    let std = var.iter().map(|v| (v / frames as f64).sqrt().max(NORM_FLOOR)).collect();
    Ok(NormStats { mean, std })
}

/// A `T x 532` feature matrix with optional frame labels.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedSequence {
    pub features: Array2<f64>,
    pub labels: Option<Vec<usize>>,
    pub source: String,
}

impl FusedSequence {
    pub fn new(features: Array2<f64>, labels: Option<Vec<usize>>, source: impl Into<String>) -> Result<Self> {
        if features.ncols() != FUSED_DIM {
            return Err(Error::dim(format!(
                "fused features have {} columns, expected {FUSED_DIM}",
                features.ncols()
            )));
        }
        Self::with_any_width(features, labels, source)
    }

    /// Like [`FusedSequence::new`] without the 532-column check, for models
    /// fed a narrower input such as the trigger detector.
    pub fn with_any_width(features: Array2<f64>, labels: Option<Vec<usize>>, source: impl Into<String>) -> Result<Self> {
        if let Some(l) = &labels {
            if l.len() != features.nrows() {
                return Err(Error::dim(format!("{} labels for {} frames", l.len(), features.nrows())));
            }
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::CorruptStream {
                name: "fused".into(),
                reason: "non-finite feature".into(),
            });
        }
        Ok(Self {
            features,
            labels,
            source: source.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.nrows() == 0
    }
}

/// Builds `[tactile ‖ visual ‖ z(ft) ‖ z(poseL ‖ poseR)]` for every frame.
pub fn fuse<'a>(
    tactile: ArrayView2<'a, f64>,
    visual: ArrayView2<'a, f64>,
    ft: ArrayView2<'a, f64>,
    pose_left: ArrayView2<'a, f64>,
    pose_right: ArrayView2<'a, f64>,
    stats: &NormStats,
) -> Result<FusedSequence> {
    let t = tactile.nrows();
    let parts = [
        ("tactile", tactile, EMBED_DIM),
        ("visual", visual, EMBED_DIM),
        ("ft", ft, FT_DIM),
        ("pose_left", pose_left, POSE_DIM),
        ("pose_right", pose_right, POSE_DIM),
    ];
    for (name, m, width) in &parts {
        if m.nrows() != t || m.ncols() != *width {
            return Err(Error::dim(format!(
                "{name} is {}x{}, expected {t}x{width}",
                m.nrows(),
                m.ncols()
            )));
        }
    }
    if stats.channels() != RAW_DIM {
        return Err(Error::dim(format!(
            "normalizer has {} channels, expected {RAW_DIM}",
            stats.channels()
        )));
    }
    let mut features = Array2::zeros((t, FUSED_DIM));
    features.slice_mut(s![.., TACTILE_COLS]).assign(&tactile);
    features.slice_mut(s![.., VISUAL_COLS]).assign(&visual);
    features.slice_mut(s![.., FT_COLS]).assign(&ft);
    features
        .slice_mut(s![.., POSE_COLS.start..POSE_COLS.start + POSE_DIM])
        .assign(&pose_left);
    features
        .slice_mut(s![.., POSE_COLS.start + POSE_DIM..POSE_COLS.end])
        .assign(&pose_right);
    let raw = features.slice(s![.., FT_COLS.start..]).to_owned();
    let normed = stats.apply(raw.view())?;
    features.slice_mut(s![.., FT_COLS.start..]).assign(&normed);
    FusedSequence::new(features, None, "")
}

/// Moves tracker poses `(px, py, pz, qw, qx, qy, qz)` to the tool center
/// point: `p' = p + R(q) r`, `q' = q ⊗ q_offset`, renormalized with `w ≥ 0`.
pub fn pose_to_tcp(tracker_pose: ArrayView2<'_, f64>, tcp_offset: &FrameTransform) -> Result<Array2<f64>> {
    if tracker_pose.ncols() != POSE_DIM {
        return Err(Error::dim(format!(
            "pose has {} columns, expected {POSE_DIM}",
            tracker_pose.ncols()
        )));
    }
    let offset_rot = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(*tcp_offset.rotation()));
    let offset_t = *tcp_offset.displacement();
    let mut out = Array2::zeros(tracker_pose.raw_dim());
    for (frame, (row, mut dst)) in tracker_pose.rows().into_iter().zip(out.rows_mut()).enumerate() {
        let q = Quaternion::new(row[3], row[4], row[5], row[6]);
        let norm = q.norm();
        if !norm.is_finite() || (norm - 1.0).abs() > UNIT_TOL {
            return Err(Error::InvalidPose {
                frame,
                reason: format!("quaternion norm {norm}"),
            });
        }
        let q = UnitQuaternion::new_unchecked(q);
        let p = Vector3::new(row[0], row[1], row[2]) + q * offset_t;
        let mut q2 = q.into_inner() * offset_rot.into_inner();
        q2 /= q2.norm();
        if q2.w < 0.0 {
            q2 = -q2;
        }
        let vals = [p.x, p.y, p.z, q2.w, q2.i, q2.j, q2.k];
        for (d, v) in dst.iter_mut().zip(vals) {
            *d = v;
        }
    }
    Ok(out)
}
