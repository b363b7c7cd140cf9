//! Central finite-difference check of the training graph's gradients.
//!
//! The graph is piecewise smooth: ReLU masks, the per-channel winner and the
//! liveness of each winner are discrete choices. A difference quotient is
//! only compared when both perturbed passes make the same choices as the
//! unperturbed one; otherwise the step is shrunk and retried.

use super::graph::{BatchForward, LossWeights, TrainingWindow};
use super::layer::{Activation, BnMode, Mlp, MlpTrace};
use super::model::MlpModel;
use super::NnError;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckConfig {
    pub step: f64,
    /// Retries with the step divided by ten when a perturbation changes a
    /// discrete choice.
    pub shrink_attempts: usize,
    /// Denominator floor of the relative error, so that gradients that are
    /// zero up to rounding compare in absolute terms.
    pub floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            shrink_attempts: 4,
            floor: 1e-5,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    /// Parameters whose every step crossed a discrete choice.
    pub unresolved: usize,
    pub max_relative_error: f64,
    /// `(slice, index)` of the worst parameter, in `params_mut` order.
    pub worst: Option<(usize, usize)>,
}

impl GradCheckReport {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.unresolved == 0 && self.max_relative_error < tolerance
    }
}

#[derive(PartialEq)]
struct Choices {
    winners: Vec<Option<usize>>,
    live: Vec<bool>,
    relu: Vec<bool>,
}

fn relu_masks(mlp: &Mlp, trace: &MlpTrace, out: &mut Vec<bool>) {
    for (layer, t) in mlp.layers.iter().zip(&trace.layers) {
        if layer.activation == Activation::Relu {
            out.extend(t.output.iter().map(|&v| v > 0.0));
        }
    }
}

fn choices(model: &MlpModel, fwd: &BatchForward) -> Choices {
    let mut relu = Vec::new();
    relu_masks(&model.mlp1, &fwd.trace1, &mut relu);
    relu_masks(&model.mlp2, &fwd.trace2, &mut relu);
    if let (Some(m), Some(t)) = (&model.mlp3, &fwd.trace3) {
        relu_masks(m, t, &mut relu);
    }
    if let (Some(m), Some(t)) = (&model.mlp4, &fwd.trace4) {
        relu_masks(m, t, &mut relu);
    }
    Choices {
        winners: fwd.winners.clone(),
        live: fwd.live.clone(),
        relu,
    }
}

fn evaluate(model: &MlpModel, windows: &[TrainingWindow], weights: LossWeights) -> Result<(f64, Choices), NnError> {
    let fwd = model.forward_batch(windows, BnMode::Batch)?;
    let loss = model.head_losses(windows, &fwd, weights)?.0.total;
    Ok((loss, choices(model, &fwd)))
}

/// Compares every analytic parameter gradient of the batch loss with a
/// central difference.
pub fn gradient_check(
    model: &MlpModel,
    windows: &[TrainingWindow],
    weights: LossWeights,
    config: GradCheckConfig,
) -> Result<GradCheckReport, NnError> {
    let (_, grads, fwd) = model.loss_and_grads(windows, weights)?;
    let base = choices(model, &fwd);
    let analytic: Vec<Vec<f64>> = grads.slices().iter().map(|s| s.to_vec()).collect();
    let mut probe = model.clone();
    let mut report = GradCheckReport::default();
    for (si, slice) in analytic.iter().enumerate() {
        for (i, &a) in slice.iter().enumerate() {
            let original = probe.params_mut()[si][i];
            let mut step = config.step;
            let mut numeric = None;
            for _ in 0..=config.shrink_attempts {
                probe.params_mut()[si][i] = original + step;
                let (plus, c_plus) = evaluate(&probe, windows, weights)?;
                probe.params_mut()[si][i] = original - step;
                let (minus, c_minus) = evaluate(&probe, windows, weights)?;
                if c_plus == base && c_minus == base {
                    numeric = Some((plus - minus) / (2.0 * step));
                    break;
                }
                step /= 10.0;
            }
            probe.params_mut()[si][i] = original;
            report.checked += 1;
            let Some(n) = numeric else {
                report.unresolved += 1;
                continue;
            };
            let err = (a - n).abs() / a.abs().max(n.abs()).max(config.floor);
            if err > report.max_relative_error || report.worst.is_none() {
                report.max_relative_error = report.max_relative_error.max(err);
                report.worst = Some((si, i));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coding::AblationMode;
    use crate::events::{Event, Polarity, SensorGeometry};
    use crate::nn::ModelConfig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn windows(n: usize, geometry: SensorGeometry, seed: u64) -> Vec<TrainingWindow> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let len = rng.random_range(1..=12);
                let mut t = 0;
                let events: Vec<Event> = (0..len)
                    .map(|_| {
                        t += rng.random_range(0..300);
                        let p = if rng.random_bool(0.5) {
                            Polarity::Positive
                        } else {
                            Polarity::Negative
                        };
                        Event::new(
                            rng.random_range(0..geometry.width),
                            rng.random_range(0..geometry.height),
                            p,
                            t,
                        )
                    })
                    .collect();
                TrainingWindow {
                    labels: Some((0..len).map(|_| rng.random_range(0..2)).collect()),
                    target: Some(vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]),
                    anchor_t: t + rng.random_range(0..200),
                    events,
                }
            })
            .collect()
    }

    #[test]
    fn every_mode_passes_on_a_small_model() {
        let geometry = SensorGeometry::new(8, 8).unwrap();
        for mode in [
            AblationMode::Full,
            AblationMode::NoTr,
            AblationMode::NoTd,
            AblationMode::NoAll,
        ] {
            let config = ModelConfig {
                geometry,
                tau_us: 1_000,
                mode,
                mlp1: vec![5, 4],
                mlp2: vec![5, 4],
                mlp3: Some(vec![4, 2]),
                mlp4: Some(vec![4, 2]),
            };
            let model = MlpModel::new(config, 3).unwrap();
            let report = gradient_check(
                &model,
                &windows(4, geometry, 5),
                LossWeights::default(),
                GradCheckConfig::default(),
            )
            .unwrap();
            assert!(report.passed(1e-4), "{mode:?}: {report:?}");
        }
    }
}
