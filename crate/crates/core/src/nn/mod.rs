//! Dense layers with batch norm, Adam, and the batch training graph.
//!
//! Training sees a window as a set of events: every event runs through the
//! feature network once, is coded by its age relative to the window anchor,
//! and the coded features are reduced with the complex max. The heads read
//! the reduced feature in its rectangular `2K` layout, so the whole graph is
//! real-valued.

mod adam;
mod check;
mod graph;
mod infer;
mod layer;
mod loss;
mod model;
mod train;

use thiserror::Error;

use crate::events::EventError;

pub use adam::{Adam, AdamConfig};
pub use check::{gradient_check, GradCheckConfig, GradCheckReport};
pub use graph::{BatchForward, LossBreakdown, LossWeights, TrainingWindow};
pub use infer::InferenceMlp;
pub use layer::{
    folded_forward, Activation, BatchNorm, BnMode, Dense, FoldedLayer, Layer, LayerGrads, LayerTrace, Mlp, MlpTrace,
    BN_EPS, MIN_FOLD_VARIANCE,
};
pub use loss::{softmax_cross_entropy, squared_l2, LossKind};
pub use model::{MlpModel, ModelConfig, ModelGrads, WEIGHTS_MAGIC, WEIGHTS_VERSION};
pub use train::{bn_momentum, learning_rate, sample_windows, train, EpochStats, TrainConfig, TrainReport};

#[derive(Debug, Error)]
pub enum NnError {
    #[error("input width {got} does not match layer width {expected}")]
    WidthMismatch { expected: usize, got: usize },
    #[error("batch norm unit {unit} has degenerate running variance {variance}")]
    DegenerateBatchNorm { unit: usize, variance: f64 },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("{what}: expected {expected} values, got {got}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("non-finite loss {value} at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize, value: f64 },
    #[error("model has no {0} head")]
    MissingHead(&'static str),
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("bad weights file: {0}")]
    Format(String),
    #[error(transparent)]
    Event(#[from] EventError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
