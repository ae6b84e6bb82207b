//! Window-level inference, soft voting back to frame labels, and
//! frame-wise evaluation.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::{s, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seqmodels::{softmax_rows, SeqBatch, SeqModel};
use crate::tsm::{self, Dtype};
use crate::windower::{plan_windows, WindowParams, WindowPlan};

/// Windows evaluated together in one forward pass.
pub const EVAL_BATCH: usize = 32;

/// Soft-voted class probabilities and their per-frame argmax.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub probs: Array2<f64>,
    pub labels: Vec<usize>,
}

impl Prediction {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax_tiebreak(row: ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Per-window softmax probabilities, one `window_len x C` matrix per planned
/// window, in plan order.
pub fn predict_windows(model: &SeqModel, features: ArrayView2<'_, f64>, plan: &WindowPlan) -> Result<Vec<Array2<f64>>> {
    if features.ncols() != model.config().input_dim {
        return Err(Error::dim(format!(
            "features have {} columns, model expects {}",
            features.ncols(),
            model.config().input_dim
        )));
    }
    if plan.seq_len() != features.nrows() {
        return Err(Error::dim(format!(
            "plan covers {} frames, sequence has {}",
            plan.seq_len(),
            features.nrows()
        )));
    }
    let ranges: Vec<_> = plan.ranges().collect();
    let steps = plan.window_len();
    let mut out = Vec::with_capacity(ranges.len());
    for chunk in ranges.chunks(EVAL_BATCH) {
        let views: Vec<_> = chunk.iter().map(|r| features.slice(s![r.clone(), ..])).collect();
        let batch = SeqBatch::from_sequences(&views)?;
        let (logits, _) = model.forward_batch(&batch, false, 0)?;
        let probs = softmax_rows(logits.view());
        for b in 0..chunk.len() {
            out.push(SeqBatch::split_rows(probs.view(), steps, chunk.len(), b));
        }
    }
    Ok(out)
}

/// Averages the probabilities of every window covering each frame, then
/// takes the argmax. Windows are summed in plan order.
pub fn soft_vote(window_probs: &[Array2<f64>], plan: &WindowPlan, len: usize) -> Result<Prediction> {
    if plan.seq_len() != len {
        return Err(Error::dim(format!("plan covers {} frames, expected {len}", plan.seq_len())));
    }
    if window_probs.len() != plan.num_windows() {
        return Err(Error::dim(format!(
            "{} probability matrices for {} windows",
            window_probs.len(),
            plan.num_windows()
        )));
    }
    let classes = window_probs.first().map_or(0, |p| p.ncols());
    let w = plan.window_len();
    if window_probs.iter().any(|p| p.dim() != (w, classes)) {
        return Err(Error::dim("window probability matrices differ in shape"));
    }
    let mut sum = Array2::<f64>::zeros((len, classes));
    let mut count = vec![0usize; len];
    for (p, &start) in window_probs.iter().zip(plan.starts()) {
        let mut rows = sum.slice_mut(s![start..start + w, ..]);
        rows += p;
        for c in &mut count[start..start + w] {
            *c += 1;
        }
    }
    if let Some(t) = count.iter().position(|&k| k == 0) {
        return Err(Error::CoverageGap(t));
    }
    for (mut row, &k) in sum.rows_mut().into_iter().zip(&count) {
        row.mapv_inplace(|v| v / k as f64);
    }
    let labels = sum.rows().into_iter().map(argmax_tiebreak).collect();
    Ok(Prediction { probs: sum, labels })
}

/// Plans windows, predicts and votes in one call.
pub fn segment(model: &SeqModel, features: ArrayView2<'_, f64>, params: &WindowParams) -> Result<Prediction> {
    let plan = plan_windows(features.nrows(), params)?;
    if plan.num_windows() == 0 {
        return Err(Error::TooShort { needed: 1, have: 0 });
    }
    let probs = predict_windows(model, features, &plan)?;
    soft_vote(&probs, &plan, features.nrows())
}

/// Precision, recall and F1 of one class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

/// Frame-wise scores derived from a confusion matrix whose rows are truth
/// and columns predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub accuracy: f64,
    pub per_class: Vec<ClassMetrics>,
    pub confusion: Vec<Vec<u64>>,
}

/// Counts `(truth, prediction)` pairs.
pub fn confusion_matrix(pred: &[usize], truth: &[usize], classes: usize) -> Result<Vec<Vec<u64>>> {
    if pred.len() != truth.len() {
        return Err(Error::dim(format!(
            "{} predictions for {} ground-truth frames",
            pred.len(),
            truth.len()
        )));
    }
    let mut confusion = vec![vec![0u64; classes]; classes];
    for (frame, (&p, &y)) in pred.iter().zip(truth).enumerate() {
        for label in [p, y] {
            if label >= classes {
                return Err(Error::Label { frame, label, classes });
            }
        }
        confusion[y][p] += 1;
    }
    Ok(confusion)
}

impl Metrics {
    /// A class absent from both truth and prediction scores F1 = 1; one that
    /// is predicted but never true scores 0.
    pub fn from_confusion(confusion: Vec<Vec<u64>>) -> Self {
        let classes = confusion.len();
        let total: u64 = confusion.iter().flatten().sum();
        let correct: u64 = (0..classes).map(|c| confusion[c][c]).sum();
        let per_class = (0..classes)
            .map(|c| {
                let tp = confusion[c][c] as f64;
                let support: u64 = confusion[c].iter().sum();
                let predicted: u64 = confusion.iter().map(|row| row[c]).sum();
                if support == 0 && predicted == 0 {
                    return ClassMetrics {
                        precision: 1.0,
                        recall: 1.0,
                        f1: 1.0,
                        support,
                    };
                }
                let precision = if predicted == 0 { 0.0 } else { tp / predicted as f64 };
                let recall = if support == 0 { 0.0 } else { tp / support as f64 };
                let f1 = if precision + recall == 0.0 {
                    0.0
                } else {
                    2.0 * precision * recall / (precision + recall)
                };
                ClassMetrics {
                    precision,
                    recall,
                    f1,
                    support,
                }
            })
            .collect();
        Self {
            accuracy: if total == 0 { 0.0 } else { correct as f64 / total as f64 },
            per_class,
            confusion,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.per_class.len()
    }

    pub fn to_json(&self, vocabulary: &[String]) -> Result<String> {
        if vocabulary.len() != self.num_classes() {
            return Err(Error::VocabularyMismatch {
                expected: self.num_classes(),
                got: vocabulary.len(),
            });
        }
        let per_class: serde_json::Map<String, serde_json::Value> = vocabulary
            .iter()
            .zip(&self.per_class)
            .map(|(name, m)| (name.clone(), serde_json::to_value(m).expect("plain struct")))
            .collect();
        let doc = serde_json::json!({
            "accuracy": self.accuracy,
            "per_class": per_class,
            "confusion": self.confusion,
        });
        Ok(serde_json::to_string_pretty(&doc)?)
    }
}

/// Micro-averaged metrics over every frame.
pub fn evaluate(pred: &Prediction, truth: &[usize]) -> Result<Metrics> {
    evaluate_labels(&pred.labels, truth, pred.probs.ncols())
}

pub fn evaluate_labels(pred: &[usize], truth: &[usize], classes: usize) -> Result<Metrics> {
    Ok(Metrics::from_confusion(confusion_matrix(pred, truth, classes)?))
}

/// Pools several sequences into one set of frame-level metrics.
pub fn evaluate_many<'a>(
    pairs: impl IntoIterator<Item = (&'a [usize], &'a [usize])>,
    classes: usize,
) -> Result<Metrics> {
    let mut total = vec![vec![0u64; classes]; classes];
    for (pred, truth) in pairs {
        let c = confusion_matrix(pred, truth, classes)?;
        for (row, add) in total.iter_mut().zip(c) {
            for (a, b) in row.iter_mut().zip(add) {
                *a += b;
            }
        }
    }
    Ok(Metrics::from_confusion(total))
}

/// Class-by-configuration table of per-class F1 and overall accuracy with
/// four decimals, the layout of a heat-map figure.
pub fn f1_table_csv(vocabulary: &[String], configs: &[(String, Metrics)]) -> Result<String> {
    let mut out = String::from("class");
    for (name, m) in configs {
        if m.num_classes() != vocabulary.len() {
            return Err(Error::VocabularyMismatch {
                expected: vocabulary.len(),
                got: m.num_classes(),
            });
        }
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for (c, class) in vocabulary.iter().enumerate() {
        out.push_str(class);
        for (_, m) in configs {
            let _ = write!(out, ",{:.4}", m.per_class[c].f1);
        }
        out.push('\n');
    }
    out.push_str("accuracy");
    for (_, m) in configs {
        let _ = write!(out, ",{:.4}", m.accuracy);
    }
    out.push('\n');
    Ok(out)
}

pub fn save_probs(pred: &Prediction, path: &Path) -> Result<()> {
    tsm::save(path, pred.probs.view(), Dtype::F64)
}

/// `t,class_name` rows.
pub fn labels_csv(labels: &[usize], vocabulary: &[String]) -> Result<String> {
    let mut out = String::from("t,class_name\n");
    for (t, &l) in labels.iter().enumerate() {
        let name = vocabulary.get(l).ok_or(Error::Label {
            frame: t,
            label: l,
            classes: vocabulary.len(),
        })?;
        let _ = writeln!(out, "{t},{name}");
    }
    Ok(out)
}

pub fn save_labels_csv(labels: &[usize], vocabulary: &[String], path: &Path) -> Result<()> {
    fs::write(path, labels_csv(labels, vocabulary)?).map_err(|e| Error::io(path, e))
}

const PALETTE: [&str; 10] = [
    "#9e9e9e", "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#17becf", "#bcbd22",
];

/// A horizontal strip with one colored band per run of equal labels, one
/// strip per row of `tracks`, plus a legend.
pub fn timeline_svg(tracks: &[(&str, &[usize])], vocabulary: &[String]) -> String {
    let len = tracks.iter().map(|(_, l)| l.len()).max().unwrap_or(0).max(1);
    let (left, width, strip, gap) = (90.0, 900.0, 28.0, 10.0);
    let legend_y = tracks.len() as f64 * (strip + gap) + 20.0;
    let height = legend_y + 30.0;
    let scale = width / len as f64;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{height}" font-family="sans-serif" font-size="12">"#,
        left + width + 10.0
    );
    for (row, (name, labels)) in tracks.iter().enumerate() {
        let y = 10.0 + row as f64 * (strip + gap);
        let _ = writeln!(svg, r#"<text x="4" y="{}">{}</text>"#, y + strip * 0.65, escape(name));
        let mut t = 0;
        while t < labels.len() {
            let l = labels[t];
            let start = t;
            while t < labels.len() && labels[t] == l {
                t += 1;
            }
            let _ = writeln!(
                svg,
                r#"<rect x="{:.3}" y="{y}" width="{:.3}" height="{strip}" fill="{}"><title>{}: {start}-{}</title></rect>"#,
                left + start as f64 * scale,
                (t - start) as f64 * scale,
                PALETTE[l % PALETTE.len()],
                escape(vocabulary.get(l).map_or("?", String::as_str)),
                t - 1
            );
        }
    }
    let mut x = left;
    for (c, name) in vocabulary.iter().enumerate() {
        let _ = writeln!(
            svg,
            r#"<rect x="{x}" y="{legend_y}" width="12" height="12" fill="{}"/><text x="{}" y="{}">{}</text>"#,
            PALETTE[c % PALETTE.len()],
            x + 16.0,
            legend_y + 10.0,
            escape(name)
        );
        x += 24.0 + 7.0 * name.len() as f64;
    }
    svg.push_str("</svg>\n");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
