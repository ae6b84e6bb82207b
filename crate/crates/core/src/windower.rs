//! Overlapping fixed-length windows over fused sequences.

use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featfuse::FusedSequence;

pub const DEFAULT_WINDOW: usize = 50;
pub const DEFAULT_STRIDE: usize = 10;
/// Training windows with a strictly larger idle fraction are dropped.
pub const DEFAULT_MAX_IDLE_RATIO: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowParams {
    pub window: usize,
    pub stride: usize,
    /// Add a final window ending at the last frame when the stride grid
    /// stops short of it.
    pub tail_anchor: bool,
}

impl Default for WindowParams {
    fn default() -> Self {
        Self {
            window: DEFAULT_WINDOW,
            stride: DEFAULT_STRIDE,
            tail_anchor: true,
        }
    }
}

impl WindowParams {
    pub fn new(window: usize, stride: usize) -> Result<Self> {
        let p = Self {
            window,
            stride,
            tail_anchor: true,
        };
        p.validate()?;
        Ok(p)
    }

    /// A stride longer than the window would leave frames uncovered.
    pub fn validate(&self) -> Result<()> {
        let (window, stride) = (self.window, self.stride);
        if window == 0 || stride == 0 {
            return Err(Error::Config(format!(
                "window ({window}) and stride ({stride}) must be positive"
            )));
        }
        if stride > window {
            return Err(Error::Config(format!("stride ({stride}) exceeds window ({window})")));
        }
        Ok(())
    }
}

/// Window starts for one sequence. Every window spans
/// `[start, start + window_len())`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WindowPlan {
    len: usize,
    window: usize,
    stride: usize,
    starts: Vec<usize>,
}

impl WindowPlan {
    pub fn seq_len(&self) -> usize {
        self.len
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn starts(&self) -> &[usize] {
        &self.starts
    }

    pub fn num_windows(&self) -> usize {
        self.starts.len()
    }

    /// Effective length of every window; shorter than requested only when
    /// the whole sequence is.
    pub fn window_len(&self) -> usize {
        self.window.min(self.len)
    }

    pub fn ranges(&self) -> impl Iterator<Item = std::ops::Range<usize>> + '_ {
        let w = self.window_len();
        self.starts.iter().map(move |&s| s..s + w)
    }
}

pub fn plan_windows(len: usize, params: &WindowParams) -> Result<WindowPlan> {
    params.validate()?;
    let WindowParams {
        window,
        stride,
        tail_anchor,
    } = *params;
    let starts = if len == 0 {
        Vec::new()
    } else if len <= window {
        vec![0]
    } else {
        let last = len - window;
        let mut starts: Vec<usize> = (0..=last).step_by(stride).collect();
        if tail_anchor && starts.last() != Some(&last) {
            starts.push(last);
        }
        starts
    };
    Ok(WindowPlan {
        len,
        window,
        stride,
        starts,
    })
}

/// Copy of one window's features and, for training, its labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub start: usize,
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
}

impl Window {
    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.nrows() == 0
    }
}

/// Cuts labeled windows and keeps those whose fraction of `idle_class`
/// frames does not exceed `max_idle_ratio`.
pub fn make_training_windows(
    seq: &FusedSequence,
    plan: &WindowPlan,
    idle_class: usize,
    max_idle_ratio: f64,
) -> Result<Vec<Window>> {
    let labels = seq
        .labels
        .as_ref()
        .ok_or_else(|| Error::LabelsRequired(format!("training windows of `{}`", seq.source)))?;
    if plan.seq_len() != seq.len() {
        return Err(Error::dim(format!(
            "plan covers {} frames, sequence has {}",
            plan.seq_len(),
            seq.len()
        )));
    }
    let mut out = Vec::new();
    for range in plan.ranges() {
        let window_labels = &labels[range.clone()];
        let idle = window_labels.iter().filter(|&&l| l == idle_class).count();
        if idle as f64 / window_labels.len() as f64 > max_idle_ratio {
            continue;
        }
        out.push(Window {
            start: range.start,
            features: seq.features.slice(s![range, ..]).to_owned(),
            labels: window_labels.to_vec(),
        });
    }
    Ok(out)
}

/// For each frame, the indices of the planned windows that contain it.
pub fn frame_coverage(plan: &WindowPlan) -> Vec<Vec<usize>> {
    let mut cover = vec![Vec::new(); plan.seq_len()];
    for (k, range) in plan.ranges().enumerate() {
        for t in range {
            cover[t].push(k);
        }
    }
    cover
}
