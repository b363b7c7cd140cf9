//! Batch reference implementations.
//!
//! [`batch_global_feature`] recomputes the global feature of a window from
//! scratch: every event's feature is coded by its age and the coded vectors
//! are reduced with the complex max. It works for every ablation mode,
//! including the ones the recursive engine refuses. Arithmetic is `f64`.
//!
//! Checking a recursion at every prefix of long streams against a full
//! recomputation is quadratic, so [`SlidingOracle`] maintains the same
//! per-channel argmax over the live window with monotone deques. Its
//! agreement with [`batch_global_feature`] is checked at sampled prefixes
//! inside [`equivalence_report`].

use std::collections::VecDeque;
use std::fmt;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use thiserror::Error;

use crate::coding::{
    code_channel, complex_max, temporal_code_with, to_real_pairs, AblationMode, ChannelCode, CodedVector, CodingError,
};
use crate::engine::{Engine, EngineError};
use crate::events::{Event, EventError, EventWindow, Polarity, SensorGeometry};
use crate::lut::{FeatureLut, LutError};
use crate::nn::{BnMode, MlpModel, NnError, TrainingWindow};
use crate::real::Real;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("model runs in mode {got}, expected {expected}")]
    ModeMismatch { expected: AblationMode, got: AblationMode },
    #[error("feature source has {got} channels, expected {expected}")]
    Channels { expected: usize, got: usize },
    #[error("the sliding reference needs features that do not depend on event age")]
    AgeDependent,
    #[error(transparent)]
    Lut(#[from] LutError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Event(#[from] EventError),
    #[error(transparent)]
    Coding(#[from] CodingError),
}

/// Per-event K-channel signed features.
pub trait FeatureSource {
    fn channels(&self) -> usize;

    /// Row-major `n × K` features for `events`, aged relative to `anchor_t`.
    fn features(&self, events: &[Event], anchor_t: u64) -> Result<Vec<f64>, OracleError>;

    /// Whether features depend on event age.
    fn age_dependent(&self) -> bool {
        false
    }
}

impl<R: Real> FeatureSource for FeatureLut<R> {
    fn channels(&self) -> usize {
        FeatureLut::channels(self)
    }

    fn features(&self, events: &[Event], _anchor_t: u64) -> Result<Vec<f64>, OracleError> {
        let mut out = Vec::with_capacity(events.len() * FeatureLut::channels(self));
        for e in events {
            out.extend(self.row(e.x, e.y, e.p)?.iter().map(|&v| v.to_f64()));
        }
        Ok(out)
    }
}

impl FeatureSource for MlpModel {
    fn channels(&self) -> usize {
        self.k()
    }

    fn features(&self, events: &[Event], anchor_t: u64) -> Result<Vec<f64>, OracleError> {
        if events.is_empty() {
            return Ok(Vec::new());
        }
        let (_, z) = MlpModel::features(self, self.encode(events, anchor_t))?;
        Ok(z.iter().copied().collect())
    }

    fn age_dependent(&self) -> bool {
        self.config.mode.age_input()
    }
}

/// Whether event `i` (feature `r_i`, time `t_i`) outranks event `j` in one
/// channel. The rank is the coded magnitude at any common later time, then
/// recency, then the signed feature, which makes the winner independent of
/// the order of simultaneous events. For decaying modes the magnitude rank
/// is `|r|·τ + t`, compared exactly in `f64` for features with at most 24
/// significant bits.
#[inline]
fn outranks(r_i: f64, t_i: u64, r_j: f64, t_j: u64, tau: u64, decays: bool) -> bool {
    let (a_i, a_j) = if decays {
        (r_i.abs() * tau as f64, r_j.abs() * tau as f64)
    } else {
        (r_i.abs(), r_j.abs())
    };
    if !decays || t_i == t_j {
        return a_i > a_j || (a_i == a_j && (t_i > t_j || (t_i == t_j && r_i >= r_j)));
    }
    if t_i > t_j {
        let threshold = a_j - (t_i - t_j) as f64;
        a_i >= threshold
    } else {
        let threshold = a_i - (t_j - t_i) as f64;
        threshold > a_j
    }
}

/// Global feature of `window` recomputed from all of its events.
///
/// Each event is coded by its age with `mode`; per channel the event with
/// the largest coded magnitude wins. Decaying modes rank by `|r|·τ − Δt`.
/// An empty window gives the zero vector.
pub fn batch_global_feature<F: FeatureSource + ?Sized>(
    window: &EventWindow,
    source: &F,
    mode: AblationMode,
) -> Result<CodedVector<f64>, OracleError> {
    let k = source.channels();
    let events = window.to_vec();
    if events.is_empty() {
        return Ok(CodedVector::zeros(k));
    }
    let anchor = window.anchor_t();
    let tau = window.tau();
    let z = source.features(&events, anchor)?;
    if z.len() != events.len() * k {
        return Err(OracleError::Channels {
            expected: k,
            got: z.len() / events.len(),
        });
    }
    let ages: Vec<u64> = events.iter().map(|e| anchor - e.t).collect();
    let tau_f = tau as f64;
    let score = |i: usize, c: usize| {
        let r = z[i * k + c].abs();
        if mode.decays() {
            r * tau_f - ages[i] as f64
        } else {
            r
        }
    };
    let channels = (0..k)
        .map(|c| {
            let mut best = 0;
            for i in 1..events.len() {
                let (si, sb) = (score(i, c), score(best, c));
                let wins = si > sb
                    || (si == sb
                        && (ages[i] < ages[best] || (ages[i] == ages[best] && z[i * k + c] >= z[best * k + c])));
                if wins {
                    best = i;
                }
            }
            code_channel(ChannelCode::from_real(z[best * k + c]), ages[best], tau, mode)
        })
        .collect();
    Ok(CodedVector { channels })
}

/// Global head output on a window, evaluated by the batch graph in
/// inference mode. Works for every mode, including the non-recursive ones.
pub fn batch_global_output(window: &EventWindow, model: &MlpModel) -> Result<Vec<f64>, OracleError> {
    let fwd = model.forward_batch(&[TrainingWindow::unlabeled(window)], BnMode::Running)?;
    let out = fwd.global_output().ok_or(NnError::MissingHead("global"))?;
    Ok(out.row(0).to_vec())
}

/// Per-event head scores for every event of a window, in window order.
pub fn batch_eventwise_output(window: &EventWindow, model: &MlpModel) -> Result<Array2<f64>, OracleError> {
    let fwd = model.forward_batch(&[TrainingWindow::unlabeled(window)], BnMode::Running)?;
    Ok(fwd.logits().ok_or(NnError::MissingHead("per-event"))?.clone())
}

/// Symmetric-function baseline: the global head applied to the channel-wise
/// max of features computed with the event age as an input.
pub fn pointnet_forward(window: &EventWindow, model: &MlpModel) -> Result<Vec<f64>, OracleError> {
    if model.config.mode != AblationMode::Pointnet {
        return Err(OracleError::ModeMismatch {
            expected: AblationMode::Pointnet,
            got: model.config.mode,
        });
    }
    let global = batch_global_feature(window, model, AblationMode::Pointnet)?;
    let head = model.mlp3.as_ref().ok_or(NnError::MissingHead("global"))?;
    let pairs = to_real_pairs(&global);
    let out = head.infer(Array2::from_shape_vec((1, pairs.len()), pairs).expect("one row"))?;
    Ok(out.row(0).to_vec())
}

/// Exact per-prefix reference: the batch argmax over the live window,
/// maintained incrementally with one monotone deque per channel.
#[derive(Clone, Debug)]
pub struct SlidingOracle {
    k: usize,
    tau: u64,
    mode: AblationMode,
    times: Vec<u64>,
    features: Vec<f64>,
    queues: Vec<VecDeque<usize>>,
    anchor_t: u64,
}

impl SlidingOracle {
    pub fn new(k: usize, tau: u64, mode: AblationMode) -> Result<Self, OracleError> {
        if tau == 0 {
            return Err(EventError::ZeroTau.into());
        }
        if mode.age_input() {
            return Err(OracleError::AgeDependent);
        }
        Ok(Self {
            k,
            tau,
            mode,
            times: Vec::new(),
            features: Vec::new(),
            queues: vec![VecDeque::new(); k],
            anchor_t: 0,
        })
    }

    pub fn reset(&mut self) {
        self.times.clear();
        self.features.clear();
        self.queues.iter_mut().for_each(VecDeque::clear);
        self.anchor_t = 0;
    }

    /// Appends an event with its K-channel feature.
    pub fn push(&mut self, t: u64, feature: &[f64]) -> Result<(), OracleError> {
        if t < self.anchor_t {
            return Err(EventError::OutOfOrder {
                t,
                anchor_t: self.anchor_t,
            }
            .into());
        }
        if feature.len() != self.k {
            return Err(OracleError::Channels {
                expected: self.k,
                got: feature.len(),
            });
        }
        let idx = self.times.len();
        self.times.push(t);
        self.features.extend_from_slice(feature);
        self.anchor_t = t;
        let decays = self.mode.decays();
        for (c, queue) in self.queues.iter_mut().enumerate() {
            let r = feature[c];
            while let Some(&back) = queue.back() {
                if outranks(
                    r,
                    t,
                    self.features[back * self.k + c],
                    self.times[back],
                    self.tau,
                    decays,
                ) {
                    queue.pop_back();
                } else {
                    break;
                }
            }
            queue.push_back(idx);
            while let Some(&front) = queue.front() {
                if t - self.times[front] >= self.tau {
                    queue.pop_front();
                } else {
                    break;
                }
            }
        }
        Ok(())
    }

    /// The window aggregate at the newest event's time.
    pub fn decoded(&self) -> CodedVector<f64> {
        CodedVector {
            channels: self
                .queues
                .iter()
                .enumerate()
                .map(|(c, queue)| match queue.front() {
                    Some(&i) => code_channel(
                        ChannelCode::from_real(self.features[i * self.k + c]),
                        self.anchor_t - self.times[i],
                        self.tau,
                        self.mode,
                    ),
                    None => ChannelCode::zero(),
                })
                .collect(),
        }
    }
}

/// A one-event-at-a-time implementation under test.
pub trait RecursiveState {
    fn push(&mut self, e: &Event) -> Result<(), OracleError>;

    /// State coded at the time of the newest event.
    fn decoded(&self) -> CodedVector<f64>;

    fn reset(&mut self);
}

impl<R: Real> RecursiveState for Engine<R> {
    fn push(&mut self, e: &Event) -> Result<(), OracleError> {
        Ok(self.on_event(e)?)
    }

    fn decoded(&self) -> CodedVector<f64> {
        self.state().channels().cast()
    }

    fn reset(&mut self) {
        Engine::reset(self);
    }
}

/// Deliberate fault for mutation testing of the report.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    /// The update at this event index skips the temporal code.
    SkipDecay { at: usize },
}

/// The recursion written with whole-vector operations: decode the state
/// forward by the inter-event interval, then complex-max in the new feature.
/// Repeated decay accumulates rounding, so it matches the batch result only
/// to about machine precision.
#[derive(Clone, Debug)]
pub struct LiteralRecursion {
    lut: FeatureLut<f64>,
    tau: u64,
    mode: AblationMode,
    state: CodedVector<f64>,
    last_t: u64,
    seen: usize,
    fault: Option<Fault>,
}

impl LiteralRecursion {
    pub fn new<R: Real>(lut: &FeatureLut<R>, tau: u64, mode: AblationMode, fault: Option<Fault>) -> Self {
        Self {
            lut: lut.cast(),
            tau,
            mode,
            state: CodedVector::zeros(lut.channels()),
            last_t: 0,
            seen: 0,
            fault,
        }
    }
}

impl RecursiveState for LiteralRecursion {
    fn push(&mut self, e: &Event) -> Result<(), OracleError> {
        if e.t < self.last_t {
            return Err(EventError::OutOfOrder {
                t: e.t,
                anchor_t: self.last_t,
            }
            .into());
        }
        let skip = self.fault == Some(Fault::SkipDecay { at: self.seen });
        let decayed = if skip {
            self.state.clone()
        } else {
            temporal_code_with(&self.state, e.t - self.last_t, self.tau, self.mode)
        };
        self.state = complex_max(&decayed, &self.lut.lookup(e.x, e.y, e.p)?)?;
        self.last_t = e.t;
        self.seen += 1;
        Ok(())
    }

    fn decoded(&self) -> CodedVector<f64> {
        self.state.clone()
    }

    fn reset(&mut self) {
        self.state = CodedVector::zeros(self.state.k());
        self.last_t = 0;
        self.seen = 0;
    }
}

/// Random streams with Poisson arrivals at a per-stream rate.
#[derive(Clone, Debug, PartialEq)]
pub struct RandomStreamConfig {
    pub geometry: SensorGeometry,
    /// Stream lengths are uniform in `0..=max_events`.
    pub max_events: usize,
    /// Mean inter-event interval in µs, drawn log-uniformly per stream.
    pub mean_interval_us: (f64, f64),
    /// Probability that an event shares the previous event's timestamp.
    pub simultaneous: f64,
}

impl RandomStreamConfig {
    pub fn new(geometry: SensorGeometry, max_events: usize) -> Self {
        Self {
            geometry,
            max_events,
            mean_interval_us: (200.0, 5_000.0),
            simultaneous: 0.05,
        }
    }
}

pub fn random_stream<G: Rng + ?Sized>(config: &RandomStreamConfig, rng: &mut G) -> Vec<Event> {
    let n = rng.random_range(0..=config.max_events);
    let (lo, hi) = config.mean_interval_us;
    let mean = if hi > lo {
        (lo.ln() + rng.random::<f64>() * (hi.ln() - lo.ln())).exp()
    } else {
        lo
    };
    let gaps = Exp::new(1.0 / mean).expect("positive rate");
    let g = config.geometry;
    let mut t = 0u64;
    (0..n)
        .map(|i| {
            if i > 0 && !rng.random_bool(config.simultaneous) {
                t += gaps.sample(rng).round() as u64;
            }
            let p = if rng.random_bool(0.5) {
                Polarity::Positive
            } else {
                Polarity::Negative
            };
            Event::new(rng.random_range(0..g.width), rng.random_range(0..g.height), p, t)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct EquivalenceConfig {
    pub trials: usize,
    pub seed: u64,
    pub tau_us: u64,
    pub mode: AblationMode,
    pub stream: RandomStreamConfig,
    pub tolerance: f64,
    /// Prefixes per trial at which the sliding reference is also checked
    /// against a full recomputation.
    pub batch_checks: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrialRow {
    pub seed: u64,
    pub events: usize,
    /// Largest channel-wise deviation between the recursion and the
    /// reference over every prefix.
    pub max_deviation: f64,
    /// Largest deviation between the sliding reference and the full batch
    /// recomputation at the sampled prefixes.
    pub batch_deviation: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EquivalenceReport {
    pub rows: Vec<TrialRow>,
    pub tolerance: f64,
}

impl EquivalenceReport {
    pub fn max_deviation(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| r.max_deviation.max(r.batch_deviation))
            .fold(0.0, f64::max)
    }

    /// Whether every prefix matched bit for bit.
    pub fn exact(&self) -> bool {
        self.max_deviation() == 0.0
    }

    pub fn passed(&self) -> bool {
        self.max_deviation() < self.tolerance
    }
}

impl fmt::Display for EquivalenceReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "seed,events,max_deviation,batch_deviation")?;
        for r in &self.rows {
            writeln!(
                f,
                "{},{},{:e},{:e}",
                r.seed, r.events, r.max_deviation, r.batch_deviation
            )?;
        }
        write!(
            f,
            "trials={} max_deviation={:e} tolerance={:e} pass={}",
            self.rows.len(),
            self.max_deviation(),
            self.tolerance,
            self.passed()
        )
    }
}

/// Runs `candidate` over seeded random streams and compares its state at
/// every prefix with the window reference built from `source`.
pub fn equivalence_report<S, F>(
    candidate: &mut S,
    source: &F,
    config: &EquivalenceConfig,
) -> Result<EquivalenceReport, OracleError>
where
    S: RecursiveState + ?Sized,
    F: FeatureSource + ?Sized,
{
    if source.age_dependent() {
        return Err(OracleError::AgeDependent);
    }
    let k = source.channels();
    let mut sliding = SlidingOracle::new(k, config.tau_us, config.mode)?;
    let mut rows = Vec::with_capacity(config.trials);
    for trial in 0..config.trials {
        let seed = config.seed.wrapping_add(trial as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let stream = random_stream(&config.stream, &mut rng);
        let mut checks: Vec<usize> = (0..config.batch_checks.min(stream.len()))
            .map(|_| rng.random_range(0..stream.len()))
            .collect();
        if let Some(last) = stream.len().checked_sub(1) {
            checks.push(last);
        }
        checks.sort_unstable();
        checks.dedup();

        candidate.reset();
        sliding.reset();
        let features = source.features(&stream, stream.last().map_or(0, |e| e.t))?;
        let mut max_deviation: f64 = 0.0;
        let mut batch_deviation: f64 = 0.0;
        let mut next_check = checks.iter().peekable();
        for (j, e) in stream.iter().enumerate() {
            candidate.push(e)?;
            sliding.push(e.t, &features[j * k..(j + 1) * k])?;
            let reference = sliding.decoded();
            max_deviation = max_deviation.max(candidate.decoded().max_deviation(&reference)?);
            if next_check.peek() == Some(&&j) {
                next_check.next();
                let window = EventWindow::from_events(&stream[..=j], config.tau_us, e.t)?;
                let batch = batch_global_feature(&window, source, config.mode)?;
                batch_deviation = batch_deviation.max(batch.max_deviation(&reference)?);
            }
        }
        rows.push(TrialRow {
            seed,
            events: stream.len(),
            max_deviation,
            batch_deviation,
        });
    }
    Ok(EquivalenceReport {
        rows,
        tolerance: config.tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::EngineConfig;
    use crate::lut::build_lut;
    use crate::nn::ModelConfig;
    use std::sync::Arc;

    fn model(mode: AblationMode) -> MlpModel {
        MlpModel::new(
            ModelConfig {
                geometry: SensorGeometry::new(8, 8).unwrap(),
                tau_us: 5_000,
                mode,
                mlp1: vec![8],
                mlp2: vec![8, 6],
                mlp3: Some(vec![5, 2]),
                mlp4: Some(vec![4, 2]),
            },
            3,
        )
        .unwrap()
    }

    fn config(trials: usize) -> EquivalenceConfig {
        EquivalenceConfig {
            trials,
            seed: 100,
            tau_us: 5_000,
            mode: AblationMode::Full,
            stream: RandomStreamConfig::new(SensorGeometry::new(8, 8).unwrap(), 400),
            tolerance: 1e-5,
            batch_checks: 40,
        }
    }

    fn ev(x: u16, t: u64) -> Event {
        Event::new(x, 0, Polarity::Positive, t)
    }

    #[test]
    fn single_event_at_age_zero_is_its_feature() {
        let m = model(AblationMode::Full);
        let lut: FeatureLut<f64> = build_lut(&m, m.config.geometry).unwrap();
        let w = EventWindow::from_events(&[ev(3, 40)], 5_000, 40).unwrap();
        let got = batch_global_feature(&w, &lut, AblationMode::Full).unwrap();
        assert_eq!(got, lut.lookup(3, 0, Polarity::Positive).unwrap());
        let repeated = EventWindow::from_events(&[ev(3, 40), ev(3, 40), ev(3, 40)], 5_000, 40).unwrap();
        assert_eq!(batch_global_feature(&repeated, &lut, AblationMode::Full).unwrap(), got);
        let empty = EventWindow::new(5_000).unwrap();
        assert!(batch_global_feature(&empty, &lut, AblationMode::Full)
            .unwrap()
            .is_zero());
    }

    #[test]
    fn lut_and_model_sources_agree() {
        let m = model(AblationMode::Full);
        let lut: FeatureLut<f64> = build_lut(&m, m.config.geometry).unwrap();
        let w = EventWindow::from_events(&[ev(1, 0), ev(2, 900), ev(7, 3_000)], 5_000, 3_500).unwrap();
        let a = batch_global_feature(&w, &lut, AblationMode::Full).unwrap();
        let b = batch_global_feature(&w, &m, AblationMode::Full).unwrap();
        assert!(a.max_deviation(&b).unwrap() < 1e-12);
    }

    #[test]
    fn engine_matches_reference_bitwise_in_double() {
        let m = model(AblationMode::Full);
        let lut32: FeatureLut<f32> = build_lut(&m, m.config.geometry).unwrap();
        let lut = Arc::new(lut32.cast::<f64>());
        let mut engine = Engine::new(EngineConfig::new(5_000, AblationMode::Full).unwrap(), lut.clone()).unwrap();
        let report = equivalence_report(&mut engine, lut.as_ref(), &config(30)).unwrap();
        assert!(report.exact(), "{report}");
    }

    #[test]
    fn single_precision_engine_within_tolerance() {
        let m = model(AblationMode::Full);
        let lut = Arc::new(build_lut::<f32>(&m, m.config.geometry).unwrap());
        let mut engine = Engine::new(EngineConfig::new(5_000, AblationMode::Full).unwrap(), lut.clone()).unwrap();
        let report = equivalence_report(&mut engine, lut.as_ref(), &config(20)).unwrap();
        assert!(report.passed(), "{report}");
        assert!(report.rows.iter().all(|r| r.batch_deviation == 0.0));
    }

    #[test]
    fn skipped_decay_is_detected() {
        let m = model(AblationMode::Full);
        let lut: FeatureLut<f64> = build_lut(&m, m.config.geometry).unwrap();
        let mut clean = LiteralRecursion::new(&lut, 5_000, AblationMode::Full, None);
        let mut cfg = config(10);
        cfg.stream.max_events = 300;
        cfg.stream.simultaneous = 0.0;
        assert!(equivalence_report(&mut clean, &lut, &cfg).unwrap().passed());
        let mut faulty = LiteralRecursion::new(&lut, 5_000, AblationMode::Full, Some(Fault::SkipDecay { at: 1 }));
        let report = equivalence_report(&mut faulty, &lut, &cfg).unwrap();
        assert!(!report.passed(), "{report}");
    }

    #[test]
    fn zero_event_stream_has_zero_deviation() {
        let m = model(AblationMode::Full);
        let lut = Arc::new(build_lut::<f32>(&m, m.config.geometry).unwrap());
        let mut engine = Engine::new(EngineConfig::new(5_000, AblationMode::Full).unwrap(), lut.clone()).unwrap();
        let mut cfg = config(3);
        cfg.stream.max_events = 0;
        let report = equivalence_report(&mut engine, lut.as_ref(), &cfg).unwrap();
        assert_eq!(report.max_deviation(), 0.0);
        assert!(report.to_string().starts_with("seed,events"));
    }

    #[test]
    fn sliding_reference_tracks_batch_in_every_mode() {
        for mode in [
            AblationMode::Full,
            AblationMode::NoTr,
            AblationMode::NoTd,
            AblationMode::NoAll,
        ] {
            let m = model(mode);
            let lut: FeatureLut<f32> = build_lut(&m, m.config.geometry).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let stream = random_stream(&RandomStreamConfig::new(m.config.geometry, 300), &mut rng);
            let mut sliding = SlidingOracle::new(6, 5_000, mode).unwrap();
            for (j, e) in stream.iter().enumerate() {
                let row: Vec<f64> = lut.row(e.x, e.y, e.p).unwrap().iter().map(|&v| v as f64).collect();
                sliding.push(e.t, &row).unwrap();
                let w = EventWindow::from_events(&stream[..=j], 5_000, e.t).unwrap();
                assert_eq!(
                    sliding.decoded(),
                    batch_global_feature(&w, &lut, mode).unwrap(),
                    "{mode} at {j}"
                );
            }
        }
    }

    #[test]
    fn pointnet_is_order_free_and_needs_its_mode() {
        let m = model(AblationMode::Pointnet);
        let events = [ev(1, 100), ev(5, 100), ev(2, 100)];
        let a = pointnet_forward(&EventWindow::from_events(&events, 5_000, 300).unwrap(), &m).unwrap();
        let swapped = [ev(2, 100), ev(1, 100), ev(5, 100)];
        let b = pointnet_forward(&EventWindow::from_events(&swapped, 5_000, 300).unwrap(), &m).unwrap();
        assert_eq!(a, b);
        let batch = batch_global_output(&EventWindow::from_events(&events, 5_000, 300).unwrap(), &m).unwrap();
        for (x, y) in a.iter().zip(&batch) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!(pointnet_forward(&EventWindow::new(5_000).unwrap(), &model(AblationMode::Full)).is_err());
    }
}
