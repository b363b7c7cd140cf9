//! Single-core cost of the event-driven update and the on-demand heads.
//!
//! Input is synthetic: uniformly random positions and polarities at a
//! constant event rate. Throughput is timed over a tight loop with no I/O;
//! per-event percentiles come from a separate pass that times each call.
//! The table speedup compares the engine against the same update with the
//! feature network evaluated for every event.

use std::fmt;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use anyhow::anyhow;
use eventnet_core::engine::{Engine, EngineConfig, GlobalFeature, Heads};
use eventnet_core::events::{Event, Polarity};
use eventnet_core::lut::build_lut;
use eventnet_core::nn::InferenceMlp;
use eventnet_core::{AblationMode, FeatureLut, MlpModel, ModelConfig, SensorGeometry};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::train::{load_lut, load_model};
use crate::{CliError, CliResult};

#[derive(Clone, Debug, PartialEq)]
pub struct BenchOptions {
    pub k: usize,
    pub rate_meps: f64,
    pub duration_s: f64,
    pub tau_us: u64,
    pub seed: u64,
    /// Sensor size for the random model and the synthetic events.
    pub geometry: SensorGeometry,
    /// Events timed one by one for the percentiles.
    pub percentile_events: usize,
    pub head_queries: usize,
    /// Events pushed through the per-event network for the speedup.
    pub speedup_events: usize,
    pub pin: bool,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            k: 256,
            rate_meps: 1.0,
            duration_s: 1.0,
            tau_us: 32_000,
            seed: 0,
            geometry: SensorGeometry::new(128, 128).expect("valid"),
            percentile_events: 200_000,
            head_queries: 1_000,
            speedup_events: 20_000,
            pin: true,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct BenchReport {
    pub events: usize,
    pub k: usize,
    pub rate_meps: f64,
    pub wall_s: f64,
    pub us_per_event_mean: f64,
    pub us_per_event_p50: f64,
    pub us_per_event_p99: f64,
    pub meps: f64,
    pub head_latency_us_mean: f64,
    pub head_latency_us_p99: f64,
    /// Per-event cost with the feature network evaluated for each event.
    pub naive_us_per_event: f64,
    pub lut_speedup: f64,
    pub pinned_core: Option<usize>,
}

impl BenchReport {
    /// Whether the engine keeps up with the input rate.
    pub fn sustained(&self) -> bool {
        self.events == 0 || self.meps >= self.rate_meps
    }
}

impl fmt::Display for BenchReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "events={}", self.events)?;
        writeln!(f, "k={}", self.k)?;
        writeln!(f, "input_rate_meps={}", self.rate_meps)?;
        writeln!(f, "wall_s={:.6}", self.wall_s)?;
        writeln!(f, "us_per_event_mean={:.4}", self.us_per_event_mean)?;
        writeln!(f, "us_per_event_p50={:.4}", self.us_per_event_p50)?;
        writeln!(f, "us_per_event_p99={:.4}", self.us_per_event_p99)?;
        writeln!(f, "meps={:.4}", self.meps)?;
        writeln!(f, "sustained={}", self.sustained())?;
        writeln!(f, "head_latency_us_mean={:.3}", self.head_latency_us_mean)?;
        writeln!(f, "head_latency_us_p99={:.3}", self.head_latency_us_p99)?;
        writeln!(f, "naive_us_per_event={:.4}", self.naive_us_per_event)?;
        writeln!(f, "lut_speedup={:.2}", self.lut_speedup)?;
        match self.pinned_core {
            Some(c) => writeln!(f, "pinned_core={c}"),
            None => writeln!(f, "pinned_core=none"),
        }
    }
}

/// Restricts the calling thread to the core it is running on.
pub fn pin_to_current_core() -> Option<usize> {
    // SAFETY: `cpu_set_t` is plain data, zero is a valid empty set, and the
    // pointer passed to the kernel outlives the call.
    unsafe {
        let cpu = libc::sched_getcpu();
        if cpu < 0 {
            return None;
        }
        let mut set: libc::cpu_set_t = std::mem::zeroed();
        libc::CPU_SET(cpu as usize, &mut set);
        (libc::sched_setaffinity(0, std::mem::size_of::<libc::cpu_set_t>(), &set) == 0).then_some(cpu as usize)
    }
}

/// Events at a constant rate with random positions and polarities.
pub fn uniform_events(geometry: SensorGeometry, rate_meps: f64, duration_s: f64, seed: u64) -> Vec<Event> {
    let n = (rate_meps * 1e6 * duration_s).round().max(0.0) as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let p = if rng.random_bool(0.5) {
                Polarity::Positive
            } else {
                Polarity::Negative
            };
            let t = (i as f64 / rate_meps).floor() as u64;
            Event::new(
                rng.random_range(0..geometry.width),
                rng.random_range(0..geometry.height),
                p,
                t,
            )
        })
        .collect()
}

/// Value at quantile `q` of an ascending slice.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

fn micros(d: std::time::Duration) -> f64 {
    d.as_secs_f64() * 1e6
}

/// A model with the published widths and random weights.
pub fn random_model(opts: &BenchOptions) -> CliResult<MlpModel> {
    let mut config = ModelConfig::full_width(opts.geometry, opts.k, 2, 2);
    config.tau_us = opts.tau_us;
    config.mode = AblationMode::Full;
    MlpModel::new(config, opts.seed).map_err(CliError::config)
}

/// Runs the benchmark on `model` and its table.
pub fn run_bench(model: &MlpModel, lut: Arc<FeatureLut<f32>>, opts: &BenchOptions) -> CliResult<BenchReport> {
    let pinned_core = if opts.pin { pin_to_current_core() } else { None };
    let geometry = lut.geometry();
    let config = EngineConfig::new(model.config.tau_us, model.config.mode).map_err(CliError::config)?;
    let mut engine = Engine::new(config, lut.clone()).map_err(CliError::config)?;
    let events = uniform_events(geometry, opts.rate_meps, opts.duration_s, opts.seed);
    let mut report = BenchReport {
        events: events.len(),
        k: lut.channels(),
        rate_meps: opts.rate_meps,
        pinned_core,
        ..BenchReport::default()
    };
    if events.is_empty() {
        return Ok(report);
    }

    let warmup = events.len().min(50_000);
    engine.on_events(&events[..warmup]).map_err(CliError::runtime)?;
    engine.reset();
    let start = Instant::now();
    for e in &events {
        engine.on_event(e).map_err(CliError::runtime)?;
    }
    let wall = start.elapsed();
    report.wall_s = wall.as_secs_f64();
    report.us_per_event_mean = micros(wall) / events.len() as f64;
    report.meps = events.len() as f64 / report.wall_s / 1e6;

    engine.reset();
    let mut samples: Vec<f64> = events
        .iter()
        .take(opts.percentile_events)
        .map(|e| {
            let t = Instant::now();
            let r = engine.on_event(e);
            let d = micros(t.elapsed());
            r.map(|()| d)
        })
        .collect::<Result<_, _>>()
        .map_err(CliError::runtime)?;
    samples.sort_by(f64::total_cmp);
    report.us_per_event_p50 = percentile(&samples, 0.5);
    report.us_per_event_p99 = percentile(&samples, 0.99);

    let heads = Heads::from_model(model).map_err(CliError::config)?;
    if heads.global.is_some() && opts.head_queries > 0 {
        engine.reset();
        let stride = (events.len() / opts.head_queries).max(1);
        let mut latencies = Vec::with_capacity(opts.head_queries);
        for chunk in events.chunks(stride).take(opts.head_queries) {
            engine.on_events(chunk).map_err(CliError::runtime)?;
            let q = engine.state().last_t() + 500;
            let t = Instant::now();
            let snapshot = engine.snapshot();
            let out = heads.infer_global(&snapshot, q).map_err(CliError::runtime)?;
            latencies.push(micros(t.elapsed()));
            std::hint::black_box(out);
        }
        report.head_latency_us_mean = latencies.iter().sum::<f64>() / latencies.len() as f64;
        latencies.sort_by(f64::total_cmp);
        report.head_latency_us_p99 = percentile(&latencies, 0.99);
    }

    let n = events.len().min(opts.speedup_events);
    report.naive_us_per_event = naive_cost(model, config, &events[..n])?;
    report.lut_speedup = report.naive_us_per_event / report.us_per_event_mean;
    Ok(report)
}

/// Mean per-event cost when the feature network runs for every event.
fn naive_cost(model: &MlpModel, config: EngineConfig, events: &[Event]) -> CliResult<f64> {
    let mlp1 = InferenceMlp::from_mlp(&model.mlp1).map_err(CliError::runtime)?;
    let mlp2 = InferenceMlp::from_mlp(&model.mlp2).map_err(CliError::runtime)?;
    let mut state = GlobalFeature::<f32>::zeros(model.k(), config);
    let mut input64 = vec![0.0f64; model.config.input_dim()];
    let mut input = vec![0.0f32; input64.len()];
    let (mut scratch, mut local, mut z) = (Vec::new(), Vec::new(), Vec::new());
    let start = Instant::now();
    for e in events {
        model.encode_into(e, 0, &mut input64);
        for (dst, &src) in input.iter_mut().zip(&input64) {
            *dst = src as f32;
        }
        mlp1.forward_into(&input, &mut scratch, &mut local)
            .map_err(CliError::runtime)?;
        mlp2.forward_into(&local, &mut scratch, &mut z)
            .map_err(CliError::runtime)?;
        state.absorb(&z, e.t);
    }
    std::hint::black_box(&state);
    Ok(micros(start.elapsed()) / events.len().max(1) as f64)
}

pub fn cmd_bench(weights: Option<&Path>, lut: Option<&Path>, opts: &BenchOptions) -> CliResult<BenchReport> {
    if !(opts.rate_meps > 0.0)
        || !(opts.duration_s >= 0.0)
        || !opts.rate_meps.is_finite()
        || !opts.duration_s.is_finite()
    {
        return Err(CliError::config(anyhow!(
            "rate must be positive and duration non-negative"
        )));
    }
    let model = match weights {
        Some(path) => load_model(path)?,
        None => random_model(opts)?,
    };
    let lut = match lut {
        Some(path) => {
            let lut = load_lut(path)?;
            Heads::from_model(&model)
                .and_then(|h| h.check_table(&lut))
                .map_err(CliError::config)?;
            lut
        }
        None => build_lut(&model, model.config.geometry).map_err(CliError::config)?,
    };
    run_bench(&model, Arc::new(lut), opts)
}
