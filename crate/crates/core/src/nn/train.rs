use serde::{Deserialize, Serialize};

use super::adam::{Adam, AdamConfig};
use super::graph::{LossWeights, TrainingWindow};
use super::model::MlpModel;
use super::NnError;
use crate::events::{Crop, LabeledStream, SensorGeometry, WindowComposer};

/// Optimisation protocol. Defaults follow the published setup: 500 epochs
/// of 8000 windows, Adam (0.9, 0.999, 1e-8), learning rate 2e-4 halved
/// every 20 epochs until epoch 100, batch-norm momentum rising from 0.5
/// to 0.99.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub windows_per_epoch: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lr_halve_every: usize,
    pub lr_halve_until: usize,
    pub adam: AdamConfig,
    pub bn_momentum_start: f64,
    pub bn_momentum_end: f64,
    /// Epochs over which the distance of the momentum to one halves.
    pub bn_momentum_halflife: f64,
    pub tau_us: u64,
    /// Weight of the per-event cross-entropy; zero disables the head.
    pub segmentation_weight: f64,
    /// Weight of the global squared-L2 loss; zero disables the head.
    pub motion_weight: f64,
    /// Random spatial crop `[width, height]` applied to every window.
    pub crop: Option<[u16; 2]>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 500,
            windows_per_epoch: 8000,
            batch_size: 16,
            learning_rate: 2e-4,
            lr_halve_every: 20,
            lr_halve_until: 100,
            adam: AdamConfig::default(),
            bn_momentum_start: 0.5,
            bn_momentum_end: 0.99,
            bn_momentum_halflife: 20.0,
            tau_us: 32_000,
            segmentation_weight: 1.0,
            motion_weight: 1.0,
            crop: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        let bad = |m: &str| Err(NnError::Config(m.to_string()));
        if self.batch_size == 0 || self.windows_per_epoch == 0 {
            return bad("batch_size and windows_per_epoch must be positive");
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return bad("learning_rate must be positive");
        }
        if self.tau_us == 0 {
            return bad("tau_us must be positive");
        }
        let m = [self.bn_momentum_start, self.bn_momentum_end];
        if m.iter().any(|v| !(0.0..1.0).contains(v)) || self.bn_momentum_halflife <= 0.0 {
            return bad("batch-norm momentum must lie in [0, 1) with a positive half-life");
        }
        if self.segmentation_weight < 0.0 || self.motion_weight < 0.0 {
            return bad("loss weights must be non-negative");
        }
        Ok(())
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            segmentation: self.segmentation_weight,
            motion: self.motion_weight,
        }
    }
}

/// Step schedule: halved every `lr_halve_every` epochs, frozen from
/// `lr_halve_until` on.
pub fn learning_rate(config: &TrainConfig, epoch: usize) -> f64 {
    let halvings = epoch
        .min(config.lr_halve_until)
        .checked_div(config.lr_halve_every)
        .unwrap_or(0);
    config.learning_rate / 2f64.powi(halvings as i32)
}

/// `end.min(1 − (1 − start)·0.5^(epoch / halflife))`.
pub fn bn_momentum(config: &TrainConfig, epoch: usize) -> f64 {
    let gap = (1.0 - config.bn_momentum_start) * 0.5f64.powf(epoch as f64 / config.bn_momentum_halflife);
    (1.0 - gap).min(config.bn_momentum_end)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub learning_rate: f64,
    pub bn_momentum: f64,
    pub loss: f64,
    pub segmentation: Option<f64>,
    pub motion: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub history: Vec<EpochStats>,
}

/// Draws `count` labelled windows from `stream`. Motion targets are the
/// stream's velocity at the anchor in pixels per window length.
pub fn sample_windows(
    stream: &LabeledStream,
    model_geometry: SensorGeometry,
    count: usize,
    tau_us: u64,
    crop: Option<[u16; 2]>,
    seed: u64,
) -> Result<Vec<TrainingWindow>, NnError> {
    if stream.labels.len() != stream.events.len() {
        return Err(NnError::LengthMismatch {
            what: "stream labels",
            expected: stream.events.len(),
            got: stream.labels.len(),
        });
    }
    let crop = match crop {
        Some([w, h]) => Some(Crop::Random {
            source: stream.geometry,
            size: SensorGeometry::new(w, h)?,
        }),
        None => None,
    };
    let mut composer = WindowComposer::new(&stream.events, tau_us, crop, seed)?;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let composed = composer.next_window()?;
        let events = composed.window.to_vec();
        if let Some(e) = events.iter().find(|e| !model_geometry.contains(e.x, e.y)) {
            return Err(model_geometry.check(e).unwrap_err().into());
        }
        let labels = composed.source_indices.iter().map(|&i| stream.labels[i]).collect();
        let target = stream
            .motion
            .as_ref()
            .and_then(|m| m.per_window(composed.window.anchor_t(), tau_us))
            .map(|uv| uv.to_vec());
        out.push(TrainingWindow {
            events,
            anchor_t: composed.window.anchor_t(),
            labels: Some(labels),
            target,
        });
    }
    Ok(out)
}

fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed ^ (epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Trains `model` in place. Runs are bitwise reproducible for a fixed
/// config: window sampling is seeded per epoch and reductions are
/// sequential.
pub fn train(model: &mut MlpModel, data: &LabeledStream, config: &TrainConfig) -> Result<TrainReport, NnError> {
    config.validate()?;
    if config.tau_us != model.config.tau_us {
        return Err(NnError::Config(format!(
            "train tau {} µs differs from model tau {} µs",
            config.tau_us, model.config.tau_us
        )));
    }
    let weights = config.loss_weights();
    let lengths = model.param_lengths();
    let mut adam = Adam::new(config.adam, &lengths);
    let mut report = TrainReport::default();
    for epoch in 0..config.epochs {
        let lr = learning_rate(config, epoch);
        let momentum = bn_momentum(config, epoch);
        let windows = sample_windows(
            data,
            model.config.geometry,
            config.windows_per_epoch,
            config.tau_us,
            config.crop,
            epoch_seed(config.seed, epoch),
        )?;
        let (mut total, mut seg, mut mot, mut batches) = (0.0, 0.0, 0.0, 0usize);
        for (step, batch) in windows.chunks(config.batch_size).enumerate() {
            let (loss, grads, fwd) = model.loss_and_grads(batch, weights)?;
            if !loss.total.is_finite() || !grads.is_finite() {
                return Err(NnError::NonFiniteLoss {
                    epoch,
                    step,
                    value: loss.total,
                });
            }
            let slices = grads.slices();
            adam.step(model.params_mut(), &slices, lr);
            model.absorb_batch_stats(&fwd, momentum);
            total += loss.total;
            seg += loss.segmentation.unwrap_or(0.0);
            mot += loss.motion.unwrap_or(0.0);
            batches += 1;
        }
        let n = batches.max(1) as f64;
        let has_seg = model.mlp4.is_some() && weights.segmentation > 0.0;
        let has_mot = model.mlp3.is_some() && weights.motion > 0.0;
        report.history.push(EpochStats {
            epoch,
            learning_rate: lr,
            bn_momentum: momentum,
            loss: total / n,
            segmentation: has_seg.then_some(seg / n),
            motion: has_mot.then_some(mot / n),
        });
    }
    Ok(report)
}
