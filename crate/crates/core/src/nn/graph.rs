//! Batch form of the network used for training.
//!
//! Per window, every event's K-channel feature is coded by its age relative
//! to the anchor and reduced per channel to the event with the largest coded
//! magnitude. Ties go to the newer event, then to the larger signed feature,
//! the same rule the streaming engine applies. For decaying modes the comparison is made on
//! `|z|·τ − Δt`, which orders events exactly like the coded magnitude but is
//! free of the rounding in `Δt / τ`.

use ndarray::{s, Array2, Axis};

use super::layer::{BnMode, MlpTrace};
use super::loss::{softmax_cross_entropy, squared_l2};
use super::model::{MlpModel, ModelGrads};
use super::NnError;
use crate::coding::rotation_angle;
use crate::events::{Event, EventWindow};

/// One window as the training graph sees it.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingWindow {
    /// Time-ordered events, coordinates in the model geometry.
    pub events: Vec<Event>,
    pub anchor_t: u64,
    /// Class per event, for the per-event head.
    pub labels: Option<Vec<usize>>,
    /// Regression target, for the global head.
    pub target: Option<Vec<f64>>,
}

impl TrainingWindow {
    pub fn unlabeled(window: &EventWindow) -> Self {
        Self {
            events: window.to_vec(),
            anchor_t: window.anchor_t(),
            labels: None,
            target: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub segmentation: f64,
    pub motion: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            segmentation: 1.0,
            motion: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub segmentation: Option<f64>,
    pub motion: Option<f64>,
}

/// Everything recorded by a forward pass that backward needs.
#[derive(Clone, Debug)]
pub struct BatchForward {
    /// Window `b` owns event rows `offsets[b]..offsets[b + 1]`.
    pub offsets: Vec<usize>,
    pub trace1: MlpTrace,
    pub trace2: MlpTrace,
    /// `winners[b * K + k]`: event row selected for channel `k` of window `b`.
    pub winners: Vec<Option<usize>>,
    /// Whether that winner's coded magnitude is positive (gradient passes).
    pub live: Vec<bool>,
    /// Rotation angle of each event row.
    pub angles: Vec<f64>,
    /// Reduced feature of each window in the `2K` real layout.
    pub global: Array2<f64>,
    pub trace3: Option<MlpTrace>,
    pub trace4: Option<MlpTrace>,
}

impl BatchForward {
    pub fn global_output(&self) -> Option<&Array2<f64>> {
        self.trace3.as_ref().map(MlpTrace::output)
    }

    pub fn logits(&self) -> Option<&Array2<f64>> {
        self.trace4.as_ref().map(MlpTrace::output)
    }

    pub fn windows(&self) -> usize {
        self.offsets.len() - 1
    }
}

impl MlpModel {
    pub fn forward_batch(&self, windows: &[TrainingWindow], bn: BnMode) -> Result<BatchForward, NnError> {
        let mode = self.config.mode;
        let tau = self.config.tau_us;
        let k = self.k();
        let local_dim = self.local_dim();
        let mut offsets = Vec::with_capacity(windows.len() + 1);
        offsets.push(0);
        let n: usize = windows.iter().map(|w| w.events.len()).sum();
        let mut input = Array2::zeros((n, self.config.input_dim()));
        let mut ages = Vec::with_capacity(n);
        let mut row = 0;
        for w in windows {
            for e in &w.events {
                if e.t > w.anchor_t {
                    return Err(NnError::Config(format!(
                        "event at t={} lies after window anchor {}",
                        e.t, w.anchor_t
                    )));
                }
                let age = w.anchor_t - e.t;
                self.encode_into(e, age, input.row_mut(row).as_slice_mut().expect("row-major"));
                ages.push(age);
                row += 1;
            }
            offsets.push(row);
        }

        let trace1 = self.mlp1.forward(input, bn)?;
        let trace2 = self.mlp2.forward(trace1.output().clone(), bn)?;
        let z = trace2.output();

        let angles: Vec<f64> = ages
            .iter()
            .map(|&a| if mode.rotates() { rotation_angle(a, tau) } else { 0.0 })
            .collect();
        let tau_f = tau as f64;
        let mut winners = vec![None; windows.len() * k];
        let mut live = vec![false; windows.len() * k];
        let mut global = Array2::zeros((windows.len(), 2 * k));
        for b in 0..windows.len() {
            let (lo, hi) = (offsets[b], offsets[b + 1]);
            for c in 0..k {
                let mut best: Option<(usize, f64)> = None;
                for i in lo..hi {
                    let r = z[[i, c]].abs();
                    let score = if mode.decays() { r * tau_f - ages[i] as f64 } else { r };
                    let wins = best.is_none_or(|(j, s)| {
                        score > s || (score == s && (ages[i] < ages[j] || z[[i, c]] >= z[[j, c]]))
                    });
                    if wins {
                        best = Some((i, score));
                    }
                }
                let Some((w, _)) = best else { continue };
                winners[b * k + c] = Some(w);
                let r = z[[w, c]];
                let magnitude = if mode.decays() {
                    (r.abs() - ages[w] as f64 / tau_f).max(0.0)
                } else {
                    r.abs()
                };
                if magnitude > 0.0 {
                    live[b * k + c] = true;
                    let signed = magnitude.copysign(r);
                    let (sin, cos) = angles[w].sin_cos();
                    global[[b, 2 * c]] = signed * cos;
                    global[[b, 2 * c + 1]] = -signed * sin;
                }
            }
        }

        let trace3 = match &self.mlp3 {
            Some(m) => Some(m.forward(global.clone(), bn)?),
            None => None,
        };
        let trace4 = match &self.mlp4 {
            Some(m) => {
                let mut joint = Array2::zeros((n, local_dim + 2 * k));
                joint.slice_mut(s![.., ..local_dim]).assign(trace1.output());
                for b in 0..windows.len() {
                    for i in offsets[b]..offsets[b + 1] {
                        joint.slice_mut(s![i, local_dim..]).assign(&global.row(b));
                    }
                }
                Some(m.forward(joint, bn)?)
            }
            None => None,
        };

        Ok(BatchForward {
            offsets,
            trace1,
            trace2,
            winners,
            live,
            angles,
            global,
            trace3,
            trace4,
        })
    }

    /// Loss over a batch and gradients for every trainable parameter.
    ///
    /// The per-event head uses mean softmax cross-entropy over all events;
    /// the global head uses mean squared L2 over windows. A head takes part
    /// when it exists and its weight is positive.
    pub fn loss_and_grads(
        &self,
        windows: &[TrainingWindow],
        weights: LossWeights,
    ) -> Result<(LossBreakdown, ModelGrads, BatchForward), NnError> {
        let fwd = self.forward_batch(windows, BnMode::Batch)?;
        let (loss, grads) = self.backward_batch(windows, &fwd, weights)?;
        Ok((loss, grads, fwd))
    }

    /// Loss only, with batch statistics, as used for gradient checking.
    pub fn batch_loss(&self, windows: &[TrainingWindow], weights: LossWeights) -> Result<f64, NnError> {
        let fwd = self.forward_batch(windows, BnMode::Batch)?;
        Ok(self.head_losses(windows, &fwd, weights)?.0.total)
    }

    #[allow(clippy::type_complexity)]
    pub(super) fn head_losses(
        &self,
        windows: &[TrainingWindow],
        fwd: &BatchForward,
        weights: LossWeights,
    ) -> Result<(LossBreakdown, Option<Array2<f64>>, Option<Array2<f64>>), NnError> {
        let mut total = 0.0;
        let mut seg = None;
        let mut d_logits = None;
        if let (Some(logits), true) = (fwd.logits(), weights.segmentation > 0.0) {
            let mut labels = Vec::with_capacity(logits.nrows());
            for w in windows {
                let l = w
                    .labels
                    .as_ref()
                    .ok_or(NnError::MissingHead("label set for the per-event"))?;
                if l.len() != w.events.len() {
                    return Err(NnError::LengthMismatch {
                        what: "window labels",
                        expected: w.events.len(),
                        got: l.len(),
                    });
                }
                labels.extend_from_slice(l);
            }
            let (loss, grad) = softmax_cross_entropy(logits, &labels)?;
            total += weights.segmentation * loss;
            seg = Some(loss);
            d_logits = Some(grad * weights.segmentation);
        }
        let mut motion = None;
        let mut d_pred = None;
        if let (Some(pred), true) = (fwd.global_output(), weights.motion > 0.0) {
            let mut target = Array2::zeros(pred.raw_dim());
            for (b, w) in windows.iter().enumerate() {
                let t = w.target.as_ref().ok_or(NnError::MissingHead("target for the global"))?;
                if t.len() != pred.ncols() {
                    return Err(NnError::LengthMismatch {
                        what: "regression target",
                        expected: pred.ncols(),
                        got: t.len(),
                    });
                }
                target.row_mut(b).iter_mut().zip(t).for_each(|(d, &v)| *d = v);
            }
            let (loss, grad) = squared_l2(pred, &target)?;
            total += weights.motion * loss;
            motion = Some(loss);
            d_pred = Some(grad * weights.motion);
        }
        Ok((
            LossBreakdown {
                total,
                segmentation: seg,
                motion,
            },
            d_logits,
            d_pred,
        ))
    }

    fn backward_batch(
        &self,
        windows: &[TrainingWindow],
        fwd: &BatchForward,
        weights: LossWeights,
    ) -> Result<(LossBreakdown, ModelGrads), NnError> {
        let (loss, d_logits, d_pred) = self.head_losses(windows, fwd, weights)?;
        let k = self.k();
        let local_dim = self.local_dim();
        let n = fwd.trace1.output().nrows();
        let mut d_global = Array2::<f64>::zeros(fwd.global.raw_dim());
        let mut d_local = Array2::<f64>::zeros((n, local_dim));

        let grads3 = match (&self.mlp3, &fwd.trace3) {
            (Some(m), Some(t)) => Some(match d_pred {
                Some(d) => {
                    let (g, d_in) = m.backward(t, d);
                    d_global += &d_in;
                    g
                }
                None => m.zero_grads(),
            }),
            _ => None,
        };
        let grads4 = match (&self.mlp4, &fwd.trace4) {
            (Some(m), Some(t)) => Some(match d_logits {
                Some(d) => {
                    let (g, d_in) = m.backward(t, d);
                    d_local += &d_in.slice(s![.., ..local_dim]);
                    for b in 0..fwd.windows() {
                        let rows = d_in.slice(s![fwd.offsets[b]..fwd.offsets[b + 1], local_dim..]);
                        let mut dst = d_global.row_mut(b);
                        dst += &rows.sum_axis(Axis(0));
                    }
                    g
                }
                None => m.zero_grads(),
            }),
            _ => None,
        };

        // d re / dr = cos θ and d im / dr = -sin θ for a live winner.
        let mut d_z = Array2::<f64>::zeros((n, k));
        for b in 0..fwd.windows() {
            for c in 0..k {
                let idx = b * k + c;
                if let (Some(w), true) = (fwd.winners[idx], fwd.live[idx]) {
                    let (sin, cos) = fwd.angles[w].sin_cos();
                    d_z[[w, c]] += cos * d_global[[b, 2 * c]] - sin * d_global[[b, 2 * c + 1]];
                }
            }
        }
        let (grads2, d_from2) = self.mlp2.backward(&fwd.trace2, d_z);
        d_local += &d_from2;
        let (grads1, _) = self.mlp1.backward(&fwd.trace1, d_local);
        Ok((
            loss,
            ModelGrads {
                mlp1: grads1,
                mlp2: grads2,
                mlp3: grads3,
                mlp4: grads4,
            },
        ))
    }

    /// Blends the batch statistics of a training forward pass into every
    /// batch-norm layer's running statistics.
    pub fn absorb_batch_stats(&mut self, fwd: &BatchForward, momentum: f64) {
        self.mlp1.absorb_batch_stats(&fwd.trace1, momentum);
        self.mlp2.absorb_batch_stats(&fwd.trace2, momentum);
        if let (Some(m), Some(t)) = (&mut self.mlp3, &fwd.trace3) {
            m.absorb_batch_stats(t, momentum);
        }
        if let (Some(m), Some(t)) = (&mut self.mlp4, &fwd.trace4) {
            m.absorb_batch_stats(t, momentum);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coding::AblationMode;
    use crate::events::{Polarity, SensorGeometry};
    use crate::nn::ModelConfig;

    fn tiny(mode: AblationMode) -> MlpModel {
        MlpModel::new(
            ModelConfig {
                geometry: SensorGeometry::new(8, 8).unwrap(),
                tau_us: 1_000,
                mode,
                mlp1: vec![6, 5],
                mlp2: vec![6, 4],
                mlp3: Some(vec![5, 2]),
                mlp4: Some(vec![5, 3]),
            },
            11,
        )
        .unwrap()
    }

    fn window(events: &[(u16, u16, i64, u64)], anchor: u64) -> TrainingWindow {
        TrainingWindow {
            events: events
                .iter()
                .map(|&(x, y, p, t)| Event::new(x, y, Polarity::from_sign(p).unwrap(), t))
                .collect(),
            anchor_t: anchor,
            labels: Some(vec![0; events.len()]),
            target: Some(vec![0.5, -0.5]),
        }
    }

    #[test]
    fn expired_window_has_zero_feature_and_zero_coding_gradient() {
        let model = tiny(AblationMode::Full);
        let w = window(&[(1, 1, 1, 0), (2, 3, -1, 0)], 1_000);
        let fwd = model.forward_batch(std::slice::from_ref(&w), BnMode::Running).unwrap();
        assert!(fwd.global.iter().all(|&v| v == 0.0));
        assert!(fwd.live.iter().all(|&l| !l));
        let (_, grads, _) = model
            .loss_and_grads(
                &[w],
                LossWeights {
                    segmentation: 0.0,
                    motion: 1.0,
                },
            )
            .unwrap();
        assert!(grads
            .mlp2
            .iter()
            .all(|g| g.slices().iter().all(|s| s.iter().all(|&v| v == 0.0))));
    }

    #[test]
    fn zero_age_event_is_its_own_feature() {
        let model = tiny(AblationMode::Full);
        let w = window(&[(4, 5, 1, 7)], 7);
        let fwd = model.forward_batch(std::slice::from_ref(&w), BnMode::Running).unwrap();
        let (_, z) = model.features(model.encode(&w.events, 7)).unwrap();
        for c in 0..model.k() {
            assert_eq!(fwd.global[[0, 2 * c]], z[[0, c]]);
            assert_eq!(fwd.global[[0, 2 * c + 1]], 0.0);
        }
    }

    #[test]
    fn later_event_wins_ties() {
        let model = tiny(AblationMode::NoAll);
        // Same cell twice: identical features, so every channel ties.
        let w = window(&[(3, 3, 1, 10), (3, 3, 1, 20)], 20);
        let fwd = model.forward_batch(&[w], BnMode::Running).unwrap();
        assert!(fwd.winners.iter().all(|&w| w == Some(1)));
    }
}
