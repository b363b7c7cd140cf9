use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use super::NnError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Softmax cross-entropy over raw logits, averaged over rows.
    SoftmaxCrossEntropy,
    /// Squared Euclidean distance, averaged over rows.
    SquaredL2,
}

/// Mean cross-entropy of `logits` (one row per sample) against class
/// indices, with the gradient w.r.t. the logits.
pub fn softmax_cross_entropy(logits: &Array2<f64>, labels: &[usize]) -> Result<(f64, Array2<f64>), NnError> {
    if labels.len() != logits.nrows() {
        return Err(NnError::LengthMismatch {
            what: "labels",
            expected: logits.nrows(),
            got: labels.len(),
        });
    }
    let classes = logits.ncols();
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(NnError::LabelOutOfRange { label, classes });
    }
    let n = logits.nrows().max(1) as f64;
    let mut grad = Array2::zeros(logits.raw_dim());
    let mut total = 0.0;
    for ((row, mut g), &label) in logits.axis_iter(Axis(0)).zip(grad.axis_iter_mut(Axis(0))).zip(labels) {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let sum: f64 = row.iter().map(|&v| (v - max).exp()).sum();
        let log_z = max + sum.ln();
        total += log_z - row[label];
        for (gj, &v) in g.iter_mut().zip(row.iter()) {
            *gj = (v - log_z).exp() / n;
        }
        g[label] -= 1.0 / n;
    }
    Ok((total / n, grad))
}

/// Mean over rows of `|pred - target|²`, with the gradient w.r.t. `pred`.
pub fn squared_l2(pred: &Array2<f64>, target: &Array2<f64>) -> Result<(f64, Array2<f64>), NnError> {
    if pred.dim() != target.dim() {
        return Err(NnError::LengthMismatch {
            what: "regression target",
            expected: pred.len(),
            got: target.len(),
        });
    }
    let n = pred.nrows().max(1) as f64;
    let diff = pred - target;
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / n;
    Ok((loss, diff * (2.0 / n)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn confident_correct_prediction_has_near_zero_loss() {
        let (loss, _) = softmax_cross_entropy(&array![[50.0, -50.0]], &[0]).unwrap();
        assert!(loss < 1e-12);
    }

    #[test]
    fn equal_vectors_have_zero_l2() {
        let a = array![[1.0, -2.0], [0.5, 0.0]];
        let (loss, grad) = squared_l2(&a, &a).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn cross_entropy_matches_direct_log_sum_exp() {
        let logits = array![[0.3, -1.2, 2.5], [1e-3, 4.0, -0.7]];
        let labels = [2, 0];
        let (loss, grad) = softmax_cross_entropy(&logits, &labels).unwrap();
        let mut expected = 0.0;
        for (r, &l) in labels.iter().enumerate() {
            let lse = logits.row(r).iter().map(|v| v.exp()).sum::<f64>().ln();
            expected += lse - logits[[r, l]];
        }
        expected /= 2.0;
        assert!((loss - expected).abs() < 1e-12);
        // Rows of the softmax gradient sum to zero.
        for row in grad.rows() {
            assert!(row.sum().abs() < 1e-15);
        }
    }

    #[test]
    fn out_of_range_label_is_rejected() {
        let err = softmax_cross_entropy(&array![[0.0, 0.0]], &[2]).unwrap_err();
        assert!(matches!(err, NnError::LabelOutOfRange { label: 2, classes: 2 }));
    }
}
