//! Recursive event-stream processing for event cameras.
//!
//! Each event is mapped to a K-channel feature through a precomputed lookup
//! table, coded by elapsed time (linear magnitude decay plus phase rotation)
//! and folded into a single global feature with a magnitude-based complex
//! max. Because the decay is linear and shared by every channel, the fold can
//! be carried forward one event at a time instead of being recomputed over
//! the whole temporal window.
//!
//! Module map:
//!
//! - [`events`]: event types, sliding windows, noise filters, file formats.
//! - [`coding`]: temporal code, complex max, rectangular conversion.
//! - [`nn`]: dense layers, batch norm, Adam, and the batch training graph.
//! - [`lut`]: per-pixel feature tables built from a trained model.
//! - [`engine`]: event-driven state update and on-demand head inference.
//! - [`oracle`]: batch reference aggregation and ablation variants.
//! - [`synth`]: labelled synthetic scenes of moving polygons.
//! - [`metrics`]: segmentation and motion-regression scores.

// Checks are written `!(x > 0.0)` so that NaN is rejected as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod coding;
pub mod engine;
pub mod events;
pub mod lut;
pub mod metrics;
pub mod nn;
pub mod oracle;
pub mod real;
pub mod synth;

pub use coding::{AblationMode, ChannelCode, CodedVector};
pub use engine::{Engine, EngineConfig, EngineMode, GlobalFeature};
pub use events::{Event, EventWindow, Polarity, SensorGeometry};
pub use lut::FeatureLut;
pub use nn::{MlpModel, ModelConfig, TrainConfig};
pub use real::Real;
