//! Segmentation and motion-regression scores.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("{predictions} predictions for {truth} ground-truth entries")]
    LengthMismatch { predictions: usize, truth: usize },
    #[error("nothing to score")]
    Empty,
}

fn check(predictions: usize, truth: usize) -> Result<(), MetricsError> {
    if predictions != truth {
        return Err(MetricsError::LengthMismatch { predictions, truth });
    }
    if truth == 0 {
        return Err(MetricsError::Empty);
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct SegmentationScores {
    /// Global accuracy in percent.
    pub accuracy: f64,
    /// Per-class IoU in percent; `None` for classes absent from both
    /// predictions and ground truth.
    pub iou: Vec<Option<f64>>,
    /// Mean over the classes that have an IoU.
    pub mean_iou: f64,
}

/// Accuracy and intersection-over-union over `classes` labels. Labels at or
/// above `classes` widen the class count.
pub fn segmentation_scores(
    predicted: &[usize],
    truth: &[usize],
    classes: usize,
) -> Result<SegmentationScores, MetricsError> {
    check(predicted.len(), truth.len())?;
    let classes = predicted.iter().chain(truth).map(|&c| c + 1).fold(classes, usize::max);
    let (mut tp, mut fp, mut fn_) = (vec![0usize; classes], vec![0usize; classes], vec![0usize; classes]);
    for (&p, &t) in predicted.iter().zip(truth) {
        if p == t {
            tp[p] += 1;
        } else {
            fp[p] += 1;
            fn_[t] += 1;
        }
    }
    let correct: usize = tp.iter().sum();
    let iou: Vec<Option<f64>> = (0..classes)
        .map(|c| {
            let union = tp[c] + fp[c] + fn_[c];
            (union > 0).then(|| 100.0 * tp[c] as f64 / union as f64)
        })
        .collect();
    let present: Vec<f64> = iou.iter().flatten().copied().collect();
    Ok(SegmentationScores {
        accuracy: 100.0 * correct as f64 / truth.len() as f64,
        mean_iou: present.iter().sum::<f64>() / present.len() as f64,
        iou,
    })
}

/// Mean Euclidean distance between predicted and true 2-d motion.
pub fn motion_l2(predicted: &[[f64; 2]], truth: &[[f64; 2]]) -> Result<f64, MetricsError> {
    check(predicted.len(), truth.len())?;
    let total: f64 = predicted
        .iter()
        .zip(truth)
        .map(|(p, t)| (p[0] - t[0]).hypot(p[1] - t[1]))
        .sum();
    Ok(total / truth.len() as f64)
}

/// Index of the largest score; the first wins ties.
pub fn argmax(scores: &[f32]) -> usize {
    scores
        .iter()
        .enumerate()
        .fold(
            (0, f32::NEG_INFINITY),
            |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) },
        )
        .0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions() {
        let t = [0, 1, 1, 0, 2];
        let s = segmentation_scores(&t, &t, 3).unwrap();
        assert_eq!((s.accuracy, s.mean_iou), (100.0, 100.0));
    }

    #[test]
    fn single_class_on_balanced_set() {
        let truth = [0, 0, 1, 1];
        let s = segmentation_scores(&[0; 4], &truth, 2).unwrap();
        assert_eq!(s.accuracy, 50.0);
        assert_eq!(s.iou, vec![Some(50.0), Some(0.0)]);
        assert_eq!(s.mean_iou, 25.0);
    }

    #[test]
    fn absent_class_is_skipped() {
        let s = segmentation_scores(&[0, 1], &[0, 1], 3).unwrap();
        assert_eq!(s.iou[2], None);
        assert_eq!(s.mean_iou, 100.0);
    }

    #[test]
    fn constant_offset_motion_error() {
        let truth = [[1.0, 2.0], [-3.0, 0.5]];
        let pred: Vec<[f64; 2]> = truth.iter().map(|t| [t[0] + 1.0, t[1]]).collect();
        assert_eq!(motion_l2(&pred, &truth).unwrap(), 1.0);
    }

    #[test]
    fn mismatched_lengths() {
        assert!(matches!(
            segmentation_scores(&[0], &[0, 1], 2),
            Err(MetricsError::LengthMismatch { .. })
        ));
        assert!(motion_l2(&[], &[]).is_err());
        assert_eq!(argmax(&[0.1, 0.7, 0.7]), 1);
    }
}
