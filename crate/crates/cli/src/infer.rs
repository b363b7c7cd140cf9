//! Streaming inference: an event-driven updater and an on-demand query
//! loop running on separate threads.
//!
//! The updater owns the engine. At each query boundary `q` of the stream
//! clock it hands a snapshot, plus the events that arrived since the
//! previous query, to the query thread, which runs the heads. Queries are
//! placed on stream time, not wall time, so output is reproducible.
//!
//! Modes without the decay term cannot run recursively; for them every
//! query recomputes the window with the batch reference.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::mpsc::sync_channel;
use std::sync::Arc;
use std::thread;

use anyhow::{anyhow, Context};
use eventnet_core::coding::to_real_pairs;
use eventnet_core::engine::{Engine, EngineConfig, GlobalFeature, Heads};
use eventnet_core::events::{Event, EventWindow};
use eventnet_core::metrics::argmax;
use eventnet_core::nn::NnError;
use eventnet_core::oracle::{batch_global_feature, FeatureSource};
use eventnet_core::{FeatureLut, MlpModel};
use ndarray::{concatenate, Array2, Axis};

use crate::data::read_events;
use crate::train::{load_lut, load_model};
use crate::{CliError, CliResult, InferMode};

/// Depth of the snapshot queue between the two threads.
const QUEUE_DEPTH: usize = 64;

#[derive(Clone, Debug, PartialEq)]
pub enum InferRow {
    Global {
        t: u64,
        outputs: Vec<f32>,
    },
    Event {
        index: usize,
        t: u64,
        class: usize,
        scores: Vec<f32>,
    },
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct InferOutput {
    pub rows: Vec<InferRow>,
    pub queries: usize,
    pub events: usize,
    /// Whether the recursive engine ran, as opposed to the batch path.
    pub recursive: bool,
}

/// Query instants `t0 + round(n·10⁶/hz)`, `n ≥ 1`, up to `last_t`.
pub fn query_times(t0: u64, last_t: u64, hz: f64) -> Vec<u64> {
    if !(hz > 0.0) || last_t <= t0 {
        return Vec::new();
    }
    let period = 1e6 / hz;
    (1..)
        .map(|n| t0 + (n as f64 * period).round() as u64)
        .take_while(|&q| q <= last_t)
        .collect()
}

struct Query {
    t: u64,
    snapshot: GlobalFeature<f32>,
    pending: Vec<(usize, Event)>,
}

/// Runs the stream through the model and returns the head outputs.
///
/// `lut` must be present for recursive modes; the non-recursive modes use
/// it as the feature source when given and fall back to the model.
pub fn run_infer(
    model: &MlpModel,
    lut: Option<Arc<FeatureLut<f32>>>,
    events: &[Event],
    mode: InferMode,
    query_hz: f64,
) -> CliResult<InferOutput> {
    if !(query_hz >= 0.0) || !query_hz.is_finite() {
        return Err(CliError::config(anyhow!("query rate must be finite and non-negative")));
    }
    let heads = Heads::from_model(model).map_err(CliError::config)?;
    let missing = match mode {
        InferMode::Global => heads.global.is_none().then_some("global"),
        InferMode::Eventwise => heads.eventwise.is_none().then_some("per-event"),
    };
    if let Some(head) = missing {
        return Err(CliError::config(anyhow!("the weights have no {head} head")));
    }
    if let Some(lut) = &lut {
        heads.check_table(lut).map_err(CliError::config)?;
    }
    let schedule = match (events.first(), events.last()) {
        (Some(a), Some(b)) => query_times(a.t, b.t, query_hz),
        _ => Vec::new(),
    };
    if model.config.mode.is_recursive() {
        let lut = lut.ok_or_else(|| CliError::config(anyhow!("recursive inference needs a feature table")))?;
        run_recursive(model, lut, heads, events, mode, &schedule)
    } else {
        run_batch(model, lut.as_deref(), events, mode, &schedule)
    }
}

fn run_recursive(
    model: &MlpModel,
    lut: Arc<FeatureLut<f32>>,
    heads: Heads,
    events: &[Event],
    mode: InferMode,
    schedule: &[u64],
) -> CliResult<InferOutput> {
    let config = EngineConfig::new(model.config.tau_us, model.config.mode).map_err(CliError::config)?;
    let mut engine = Engine::new(config, lut).map_err(CliError::config)?;
    let (tx, rx) = sync_channel::<Query>(QUEUE_DEPTH);

    let responder = thread::spawn(move || -> CliResult<Vec<InferRow>> {
        let mut rows = Vec::new();
        for query in rx {
            match mode {
                InferMode::Global => {
                    let outputs = heads
                        .infer_global(&query.snapshot, query.t)
                        .map_err(CliError::runtime)?;
                    rows.push(InferRow::Global { t: query.t, outputs });
                }
                InferMode::Eventwise => {
                    let batch: Vec<Event> = query.pending.iter().map(|&(_, e)| e).collect();
                    let scores = heads
                        .infer_eventwise(&query.snapshot, query.t, &batch)
                        .map_err(CliError::runtime)?;
                    for ((index, e), scores) in query.pending.into_iter().zip(scores) {
                        rows.push(InferRow::Event {
                            index,
                            t: e.t,
                            class: argmax(&scores),
                            scores,
                        });
                    }
                }
            }
        }
        Ok(rows)
    });

    let mut queries = 0;
    let fed = (|| -> CliResult<()> {
        let mut next = schedule.iter().copied().peekable();
        let mut pending = Vec::new();
        let mut send = |t: u64, engine: &Engine<f32>, pending: &mut Vec<(usize, Event)>| {
            queries += 1;
            let query = Query {
                t,
                snapshot: engine.snapshot(),
                pending: std::mem::take(pending),
            };
            // A closed queue means the query thread failed; its error is
            // reported by the join below.
            tx.send(query).is_ok()
        };
        for (i, e) in events.iter().enumerate() {
            while let Some(q) = next.next_if(|&q| q < e.t) {
                if !send(q, &engine, &mut pending) {
                    return Ok(());
                }
            }
            engine.on_event(e).map_err(CliError::runtime)?;
            if mode == InferMode::Eventwise {
                pending.push((i, *e));
            }
        }
        for q in next {
            if !send(q, &engine, &mut pending) {
                return Ok(());
            }
        }
        if !pending.is_empty() {
            let last = engine.state().last_t();
            send(last, &engine, &mut pending);
        }
        Ok(())
    })();
    drop(tx);
    let rows = responder
        .join()
        .map_err(|_| CliError::runtime(anyhow!("query thread panicked")))??;
    fed?;
    Ok(InferOutput {
        queries,
        rows,
        events: events.len(),
        recursive: true,
    })
}

fn run_batch(
    model: &MlpModel,
    lut: Option<&FeatureLut<f32>>,
    events: &[Event],
    mode: InferMode,
    schedule: &[u64],
) -> CliResult<InferOutput> {
    let source: &dyn FeatureSource = match lut {
        Some(lut) if !model.config.mode.age_input() => lut,
        _ => model,
    };
    let tau = model.config.tau_us;
    let mut rows = Vec::new();
    let mut queries = 0;
    let mut start = 0;
    let mut pending_from = 0;
    let mut boundaries: Vec<u64> = schedule.to_vec();
    if mode == InferMode::Eventwise {
        if let Some(last) = events.last() {
            if boundaries.last() != Some(&last.t) {
                boundaries.push(last.t);
            }
        }
    }
    for q in boundaries {
        let end = events.partition_point(|e| e.t <= q);
        while start < end && q - events[start].t >= tau {
            start += 1;
        }
        let window = EventWindow::from_events(&events[start..end], tau, q).map_err(CliError::runtime)?;
        let global = batch_global_feature(&window, source, model.config.mode).map_err(CliError::runtime)?;
        let pairs = to_real_pairs(&global);
        let pairs = Array2::from_shape_vec((1, pairs.len()), pairs).expect("one row");
        queries += 1;
        match mode {
            InferMode::Global => {
                let head = model
                    .mlp3
                    .as_ref()
                    .ok_or(NnError::MissingHead("global"))
                    .map_err(CliError::config)?;
                let out = head.infer(pairs).map_err(CliError::runtime)?;
                rows.push(InferRow::Global {
                    t: q,
                    outputs: out.iter().map(|&v| v as f32).collect(),
                });
            }
            InferMode::Eventwise => {
                let head = model
                    .mlp4
                    .as_ref()
                    .ok_or(NnError::MissingHead("per-event"))
                    .map_err(CliError::config)?;
                let batch = &events[pending_from..end];
                pending_from = end;
                if batch.is_empty() {
                    continue;
                }
                let local = model.mlp1.infer(model.encode(batch, q)).map_err(CliError::runtime)?;
                let tiled = pairs
                    .broadcast((batch.len(), pairs.ncols()))
                    .expect("one row broadcasts");
                let joint = concatenate(Axis(1), &[local.view(), tiled]).expect("matching rows");
                let scores = head.infer(joint).map_err(CliError::runtime)?;
                for (offset, row) in scores.rows().into_iter().enumerate() {
                    let scores: Vec<f32> = row.iter().map(|&v| v as f32).collect();
                    let index = end - batch.len() + offset;
                    rows.push(InferRow::Event {
                        index,
                        t: events[index].t,
                        class: argmax(&scores),
                        scores,
                    });
                }
            }
        }
    }
    Ok(InferOutput {
        rows,
        queries,
        events: events.len(),
        recursive: false,
    })
}

pub fn write_rows<W: Write>(mut w: W, rows: &[InferRow]) -> std::io::Result<()> {
    match rows.first() {
        Some(InferRow::Global { outputs, .. }) => {
            write!(w, "t_us")?;
            for i in 0..outputs.len() {
                write!(w, ",y{i}")?;
            }
        }
        Some(InferRow::Event { scores, .. }) => {
            write!(w, "index,t_us,class")?;
            for i in 0..scores.len() {
                write!(w, ",s{i}")?;
            }
        }
        None => write!(w, "t_us")?,
    }
    writeln!(w)?;
    for row in rows {
        match row {
            InferRow::Global { t, outputs } => {
                write!(w, "{t}")?;
                for v in outputs {
                    write!(w, ",{v}")?;
                }
            }
            InferRow::Event {
                index,
                t,
                class,
                scores,
            } => {
                write!(w, "{index},{t},{class}")?;
                for v in scores {
                    write!(w, ",{v}")?;
                }
            }
        }
        writeln!(w)?;
    }
    w.flush()
}

pub fn cmd_infer(
    weights: &Path,
    lut: Option<&Path>,
    events: &Path,
    mode: InferMode,
    query_hz: f64,
    out: &Path,
) -> CliResult<()> {
    let model = load_model(weights)?;
    let lut = lut.map(load_lut).transpose()?.map(Arc::new);
    let events = read_events(events, model.config.geometry)?;
    let output = run_infer(&model, lut, &events, mode, query_hz)?;
    let file = File::create(out)
        .with_context(|| format!("cannot create {}", out.display()))
        .map_err(CliError::runtime)?;
    write_rows(BufWriter::new(file), &output.rows).map_err(CliError::runtime)?;
    println!("events={}", output.events);
    println!("queries={}", output.queries);
    println!("rows={}", output.rows.len());
    println!("path={}", if output.recursive { "recursive" } else { "batch" });
    Ok(())
}
