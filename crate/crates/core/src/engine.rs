//! Event-driven global-feature update and on-demand head inference.
//!
//! Per channel the state keeps the winning event's stored feature `r`, its
//! timestamp `t_w` and its reach `|r|·τ`. A channel's coded magnitude at time
//! `t` is `(|r|·τ − (t − t_w)) / τ`, so decay never has to be applied to the
//! state: a new event at `t` wins iff `|r_new|·τ ≥ |r_w|·τ − (t − t_w)`.
//! With `f32` features and integer timestamps both sides are exact in `f64`,
//! and the coded value is produced only when the state is read, by the same
//! coding routine the batch reference uses.
//!
//! Ties go to the newer event and, between simultaneous events, to the
//! larger signed feature, so the order of same-timestamp events never
//! matters.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::sync::{Arc, Mutex, MutexGuard};

use thiserror::Error;

use crate::coding::{code_channel, to_real_pairs, AblationMode, ChannelCode, CodedVector};
use crate::events::{Event, SensorGeometry};
use crate::lut::{build_local_lut, FeatureLut, LutError, LutKind};
use crate::nn::{InferenceMlp, MlpModel, NnError};
use crate::real::Real;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("mode {0} has no decay term and cannot run recursively")]
    NonRecursiveMode(AblationMode),
    #[error("event at t={t} precedes the state time {last_t}")]
    OutOfOrder { t: u64, last_t: u64 },
    #[error("event ({x}, {y}) lies outside the {width}x{height} table")]
    OutOfBounds { x: u16, y: u16, width: u16, height: u16 },
    #[error("query time {query_t} precedes the state time {last_t}")]
    QueryBeforeState { query_t: u64, last_t: u64 },
    #[error("the engine needs a global feature table, got a local one")]
    WrongTable,
    #[error("table was built from weights {lut:016x}, model has {weights:016x}")]
    ChecksumMismatch { lut: u64, weights: u64 },
    #[error("model has no {0} head")]
    MissingHead(&'static str),
    #[error("window length tau must be positive")]
    ZeroTau,
    #[error(transparent)]
    Lut(#[from] LutError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// Coding variants that admit the one-event recursion.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EngineMode {
    Full,
    /// Decay without phase rotation.
    NoRotation,
}

impl EngineMode {
    pub fn coding(self) -> AblationMode {
        match self {
            EngineMode::Full => AblationMode::Full,
            EngineMode::NoRotation => AblationMode::NoTr,
        }
    }
}

impl TryFrom<AblationMode> for EngineMode {
    type Error = EngineError;

    fn try_from(mode: AblationMode) -> Result<Self, Self::Error> {
        match mode {
            AblationMode::Full => Ok(EngineMode::Full),
            AblationMode::NoTr => Ok(EngineMode::NoRotation),
            other => Err(EngineError::NonRecursiveMode(other)),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EngineConfig {
    pub tau_us: u64,
    pub mode: EngineMode,
}

impl EngineConfig {
    pub fn new(tau_us: u64, mode: AblationMode) -> Result<Self, EngineError> {
        if tau_us == 0 {
            return Err(EngineError::ZeroTau);
        }
        Ok(Self {
            tau_us,
            mode: mode.try_into()?,
        })
    }
}

/// The recursive state: per-channel winners plus the time of the last
/// update.
#[derive(Clone, Debug, PartialEq)]
pub struct GlobalFeature<R> {
    values: Vec<R>,
    reach: Vec<f64>,
    winner_t: Vec<u64>,
    last_t: u64,
    config: EngineConfig,
}

impl<R: Real> GlobalFeature<R> {
    pub fn zeros(k: usize, config: EngineConfig) -> Self {
        Self {
            values: vec![R::zero(); k],
            reach: vec![0.0; k],
            winner_t: vec![0; k],
            last_t: 0,
            config,
        }
    }

    pub fn k(&self) -> usize {
        self.values.len()
    }

    pub fn last_t(&self) -> u64 {
        self.last_t
    }

    pub fn config(&self) -> EngineConfig {
        self.config
    }

    /// Timestamp of the event currently holding each channel.
    pub fn winner_times(&self) -> &[u64] {
        &self.winner_t
    }

    /// Stored feature of the event currently holding each channel.
    pub fn winner_values(&self) -> &[R] {
        &self.values
    }

    /// Folds one feature row observed at `t ≥ last_t` into the state.
    #[inline]
    pub fn absorb(&mut self, row: &[R], t: u64) {
        debug_assert!(t >= self.last_t);
        debug_assert_eq!(row.len(), self.values.len());
        let tau = self.config.tau_us as f64;
        for (((&r, value), reach), winner_t) in row
            .iter()
            .zip(self.values.iter_mut())
            .zip(self.reach.iter_mut())
            .zip(self.winner_t.iter_mut())
        {
            let candidate = r.to_f64().abs() * tau;
            let d = t - *winner_t;
            // Exact: the subtraction is exact whenever it can be non-negative.
            let threshold = *reach - d as f64;
            if candidate > threshold || (candidate == threshold && (d > 0 || r >= *value)) {
                *value = r;
                *reach = candidate;
                *winner_t = t;
            }
        }
        self.last_t = t;
    }

    /// The state coded at time `t` (`t ≥ last_t`).
    pub fn decoded_at(&self, t: u64) -> Result<CodedVector<R>, EngineError> {
        if t < self.last_t {
            return Err(EngineError::QueryBeforeState {
                query_t: t,
                last_t: self.last_t,
            });
        }
        let mode = self.config.mode.coding();
        Ok(CodedVector {
            channels: self
                .values
                .iter()
                .zip(&self.winner_t)
                .map(|(&r, &tw)| code_channel(ChannelCode::from_real(r), t - tw, self.config.tau_us, mode))
                .collect(),
        })
    }

    /// The state coded at its own time, `s_j` in the recursion.
    pub fn channels(&self) -> CodedVector<R> {
        self.decoded_at(self.last_t).expect("last_t is never in the past")
    }

    pub fn reset(&mut self) {
        self.values.fill(R::zero());
        self.reach.fill(0.0);
        self.winner_t.fill(0);
        self.last_t = 0;
    }
}

/// The event-driven module: one table read and K comparisons per event.
#[derive(Clone, Debug)]
pub struct Engine<R> {
    config: EngineConfig,
    lut: Arc<FeatureLut<R>>,
    state: GlobalFeature<R>,
    processed: u64,
}

impl<R: Real> Engine<R> {
    pub fn new(config: EngineConfig, lut: Arc<FeatureLut<R>>) -> Result<Self, EngineError> {
        if lut.kind() != LutKind::Global {
            return Err(EngineError::WrongTable);
        }
        Ok(Self {
            state: GlobalFeature::zeros(lut.channels(), config),
            config,
            lut,
            processed: 0,
        })
    }

    pub fn config(&self) -> EngineConfig {
        self.config
    }

    pub fn lut(&self) -> &Arc<FeatureLut<R>> {
        &self.lut
    }

    pub fn geometry(&self) -> SensorGeometry {
        self.lut.geometry()
    }

    pub fn processed(&self) -> u64 {
        self.processed
    }

    pub fn state(&self) -> &GlobalFeature<R> {
        &self.state
    }

    #[inline]
    pub fn on_event(&mut self, e: &Event) -> Result<(), EngineError> {
        if e.t < self.state.last_t {
            return Err(EngineError::OutOfOrder {
                t: e.t,
                last_t: self.state.last_t,
            });
        }
        let g = self.lut.geometry();
        if !g.contains(e.x, e.y) {
            return Err(EngineError::OutOfBounds {
                x: e.x,
                y: e.y,
                width: g.width,
                height: g.height,
            });
        }
        let row = self.lut.cell_row(g.cell_index(e.x, e.y, e.p));
        self.state.absorb(row, e.t);
        self.processed += 1;
        Ok(())
    }

    pub fn on_events(&mut self, events: &[Event]) -> Result<(), EngineError> {
        events.iter().try_for_each(|e| self.on_event(e))
    }

    /// Copy of the state; unaffected by later events.
    pub fn snapshot(&self) -> GlobalFeature<R> {
        self.state.clone()
    }

    pub fn reset(&mut self) {
        self.state.reset();
        self.processed = 0;
    }
}

/// The on-demand module: heads evaluated on a state snapshot.
#[derive(Clone, Debug)]
pub struct Heads {
    pub global: Option<InferenceMlp>,
    pub eventwise: Option<InferenceMlp>,
    /// mlp1 outputs per cell, read by the per-event head.
    pub local: Option<FeatureLut<f32>>,
    checksum: u64,
}

impl Heads {
    pub fn from_model(model: &MlpModel) -> Result<Self, EngineError> {
        let global = model.mlp3.as_ref().map(InferenceMlp::from_mlp).transpose()?;
        let eventwise = model.mlp4.as_ref().map(InferenceMlp::from_mlp).transpose()?;
        let local = match eventwise {
            Some(_) => Some(build_local_lut(model, model.config.geometry)?),
            None => None,
        };
        Ok(Self {
            global,
            eventwise,
            local,
            checksum: model.checksum(),
        })
    }

    /// Refuses a feature table built from different weights.
    pub fn check_table<R: Real>(&self, lut: &FeatureLut<R>) -> Result<(), EngineError> {
        if lut.checksum() != self.checksum {
            return Err(EngineError::ChecksumMismatch {
                lut: lut.checksum(),
                weights: self.checksum,
            });
        }
        Ok(())
    }

    fn global_input<R: Real>(snapshot: &GlobalFeature<R>, query_t: u64) -> Result<Vec<f32>, EngineError> {
        let coded = snapshot.decoded_at(query_t)?;
        Ok(to_real_pairs(&coded).into_iter().map(|v| v.to_f64() as f32).collect())
    }

    /// Global head on the snapshot coded at `query_t`.
    pub fn infer_global<R: Real>(&self, snapshot: &GlobalFeature<R>, query_t: u64) -> Result<Vec<f32>, EngineError> {
        let head = self.global.as_ref().ok_or(EngineError::MissingHead("global"))?;
        Ok(head.forward(&Self::global_input(snapshot, query_t)?)?)
    }

    /// Per-event head on `[local feature ‖ snapshot coded at query_t]`.
    pub fn infer_eventwise<R: Real>(
        &self,
        snapshot: &GlobalFeature<R>,
        query_t: u64,
        events: &[Event],
    ) -> Result<Vec<Vec<f32>>, EngineError> {
        let head = self.eventwise.as_ref().ok_or(EngineError::MissingHead("per-event"))?;
        let local = self.local.as_ref().ok_or(EngineError::MissingHead("per-event"))?;
        let global = Self::global_input(snapshot, query_t)?;
        let width = local.channels();
        let mut input = vec![0.0f32; width + global.len()];
        input[width..].copy_from_slice(&global);
        let (mut scratch, mut out) = (Vec::new(), Vec::new());
        let mut scores = Vec::with_capacity(events.len());
        for e in events {
            let row = local.row(e.x, e.y, e.p).map_err(|_| EngineError::OutOfBounds {
                x: e.x,
                y: e.y,
                width: local.geometry().width,
                height: local.geometry().height,
            })?;
            input[..width].copy_from_slice(row);
            head.forward_into(&input, &mut scratch, &mut out)?;
            scores.push(out.clone());
        }
        Ok(scores)
    }
}

/// An engine shared between the event-driven updater and on-demand
/// readers. Readers hold the lock only for an O(K) copy.
#[derive(Clone, Debug)]
pub struct SharedEngine<R> {
    inner: Arc<Mutex<Engine<R>>>,
}

impl<R: Real> SharedEngine<R> {
    pub fn new(engine: Engine<R>) -> Self {
        Self {
            inner: Arc::new(Mutex::new(engine)),
        }
    }

    fn lock(&self) -> MutexGuard<'_, Engine<R>> {
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn on_event(&self, e: &Event) -> Result<(), EngineError> {
        self.lock().on_event(e)
    }

    /// Applies a batch under one lock; readers see all of it or none.
    pub fn on_events(&self, events: &[Event]) -> Result<(), EngineError> {
        self.lock().on_events(events)
    }

    pub fn snapshot(&self) -> GlobalFeature<R> {
        self.lock().snapshot()
    }

    pub fn processed(&self) -> u64 {
        self.lock().processed()
    }
}

/// Heap entry ordered by `(t, arrival)`.
#[derive(Debug)]
struct Pending {
    seq: u64,
    event: Event,
}

impl Pending {
    fn key(&self) -> (u64, u64) {
        (self.event.t, self.seq)
    }
}

impl PartialEq for Pending {
    fn eq(&self, other: &Self) -> bool {
        self.key() == other.key()
    }
}

impl Eq for Pending {}

impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Pending {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.key().cmp(&other.key())
    }
}

/// Bounded-depth reordering for sources with slightly jittered timestamps.
///
/// Holds up to `depth` events and releases the earliest once full. An
/// event arriving after a later one has already been released is dropped
/// and counted.
#[derive(Debug)]
pub struct ReorderBuffer {
    depth: usize,
    heap: BinaryHeap<Reverse<Pending>>,
    seq: u64,
    released_t: Option<u64>,
    dropped: u64,
}

impl ReorderBuffer {
    pub fn new(depth: usize) -> Self {
        Self {
            depth,
            heap: BinaryHeap::with_capacity(depth + 1),
            seq: 0,
            released_t: None,
            dropped: 0,
        }
    }

    pub fn dropped(&self) -> u64 {
        self.dropped
    }

    pub fn push(&mut self, e: Event) -> Option<Event> {
        if self.released_t.is_some_and(|t| e.t < t) {
            self.dropped += 1;
            return None;
        }
        self.heap.push(Reverse(Pending {
            seq: self.seq,
            event: e,
        }));
        self.seq += 1;
        if self.heap.len() > self.depth {
            self.pop()
        } else {
            None
        }
    }

    fn pop(&mut self) -> Option<Event> {
        let Reverse(Pending { event, .. }) = self.heap.pop()?;
        self.released_t = Some(event.t);
        Some(event)
    }

    /// Releases everything still held, in time order.
    pub fn drain(&mut self) -> Vec<Event> {
        let mut out = Vec::with_capacity(self.heap.len());
        while let Some(e) = self.pop() {
            out.push(e);
        }
        out
    }
}
