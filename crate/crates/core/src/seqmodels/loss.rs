use ndarray::{Array2, ArrayView2};

use super::ops::softmax_rows;
use crate::error::{Error, Result};

fn check(logits: ArrayView2<'_, f64>, labels: &[usize]) -> Result<()> {
    if logits.nrows() != labels.len() {
        return Err(Error::dim(format!(
            "{} logit rows for {} labels",
            logits.nrows(),
            labels.len()
        )));
    }
    let classes = logits.ncols();
    if let Some((frame, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= classes) {
        return Err(Error::Label { frame, label, classes });
    }
    Ok(())
}

/// Mean over frames of `-log softmax(logits_t)[label_t]`.
pub fn ce_loss(logits: ArrayView2<'_, f64>, labels: &[usize]) -> Result<f64> {
    check(logits, labels)?;
    if labels.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = logits
        .rows()
        .into_iter()
        .zip(labels)
        .map(|(row, &y)| {
            let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let lse = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
            lse - row[y]
        })
        .sum();
    Ok(total / labels.len() as f64)
}

/// Loss together with its gradient `(softmax - one_hot) / T`.
pub fn ce_loss_grad(logits: ArrayView2<'_, f64>, labels: &[usize]) -> Result<(f64, Array2<f64>)> {
    let loss = ce_loss(logits, labels)?;
    let mut grad = softmax_rows(logits);
    let n = labels.len().max(1) as f64;
    for (mut row, &y) in grad.rows_mut().into_iter().zip(labels) {
        row[y] -= 1.0;
        row.mapv_inplace(|v| v / n);
    }
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn uniform_logits_give_log_classes() {
        let logits = Array2::zeros((3, 5));
        let loss = ce_loss(logits.view(), &[0, 4, 2]).unwrap();
        assert!((loss - 5f64.ln()).abs() < 1e-12);
        assert!((loss - 1.60944).abs() < 1e-5);
    }

    #[test]
    fn large_margin_saturates() {
        let logits = array![[100.0, 0.0, 0.0], [0.0, 0.0, 100.0]];
        assert!(ce_loss(logits.view(), &[0, 2]).unwrap() < 1e-6);
    }

    #[test]
    fn two_frame_hand_value() {
        let logits = array![[1.0, 0.0], [0.0, 1.0]];
        let loss = ce_loss(logits.view(), &[0, 1]).unwrap();
        let e = std::f64::consts::E;
        assert!((loss + (e / (e + 1.0)).ln()).abs() < 1e-15);
        assert!((loss - 0.31326).abs() < 1e-5);
    }

    #[test]
    fn gradient_is_softmax_minus_one_hot() {
        let logits = array![[0.3, -1.2, 2.0], [0.0, 0.5, -0.5]];
        let labels = [2, 0];
        let (_, g) = ce_loss_grad(logits.view(), &labels).unwrap();
        for (t, row) in logits.rows().into_iter().enumerate() {
            let z: f64 = row.iter().map(|v| v.exp()).sum();
            for c in 0..3 {
                let onehot = if c == labels[t] { 1.0 } else { 0.0 };
                let expect = (row[c].exp() / z - onehot) / 2.0;
                assert!((g[[t, c]] - expect).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn bad_labels_rejected() {
        let logits = Array2::zeros((2, 3));
        assert!(matches!(
            ce_loss(logits.view(), &[0, 3]),
            Err(Error::Label { frame: 1, label: 3, classes: 3 })
        ));
        assert!(matches!(ce_loss(logits.view(), &[0]), Err(Error::DimMismatch(_))));
    }
}
