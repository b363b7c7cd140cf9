//! Scene directories: `events.csv`, `labels.csv` and, when the scene has a
//! motion target, `motion.csv`.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use anyhow::Context;
use eventnet_core::events::{read_csv, read_labels, write_csv, Event, LabeledStream, MotionTrack};
use eventnet_core::SensorGeometry;

use crate::{CliError, CliResult};

pub const EVENTS_FILE: &str = "events.csv";
pub const LABELS_FILE: &str = "labels.csv";
pub const MOTION_FILE: &str = "motion.csv";

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .with_context(|| format!("cannot create {}", path.display()))
        .map_err(CliError::runtime)
}

fn open(path: &Path) -> CliResult<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .with_context(|| format!("cannot open {}", path.display()))
        .map_err(CliError::runtime)
}

pub fn write_scene(dir: &Path, stream: &LabeledStream) -> CliResult<()> {
    std::fs::create_dir_all(dir)
        .with_context(|| format!("cannot create {}", dir.display()))
        .map_err(CliError::runtime)?;
    write_csv(create(&dir.join(EVENTS_FILE))?, &stream.events).map_err(CliError::runtime)?;
    stream
        .write_labels(create(&dir.join(LABELS_FILE))?)
        .map_err(CliError::runtime)?;
    if let Some(track) = &stream.motion {
        track
            .write_csv(create(&dir.join(MOTION_FILE))?)
            .map_err(CliError::runtime)?;
    }
    Ok(())
}

/// `path` itself, or its `events.csv` when it is a directory.
pub fn events_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(EVENTS_FILE)
    } else {
        path.to_path_buf()
    }
}

pub fn read_events(path: &Path, geometry: SensorGeometry) -> CliResult<Vec<Event>> {
    let path = events_path(path);
    let events = read_csv(open(&path)?)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(CliError::runtime)?;
    if let Some(e) = events.iter().find(|e| !geometry.contains(e.x, e.y)) {
        return Err(CliError::runtime(anyhow::anyhow!(
            "{}: event ({}, {}) outside the {}x{} model geometry",
            path.display(),
            e.x,
            e.y,
            geometry.width,
            geometry.height
        )));
    }
    if let Some(w) = events.windows(2).find(|w| w[1].t < w[0].t) {
        return Err(CliError::runtime(anyhow::anyhow!(
            "{}: timestamps go backwards at t={}",
            path.display(),
            w[1].t
        )));
    }
    Ok(events)
}

pub fn read_motion(path: &Path) -> CliResult<MotionTrack> {
    MotionTrack::read_csv(open(path)?)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(CliError::runtime)
}

pub fn read_label_file(path: &Path) -> CliResult<Vec<usize>> {
    read_labels(open(path)?)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(CliError::runtime)
}

/// Loads a scene directory. The covered span runs from the first event to
/// one past the last.
pub fn read_scene(dir: &Path, geometry: SensorGeometry) -> CliResult<LabeledStream> {
    let events = read_events(&dir.join(EVENTS_FILE), geometry)?;
    let labels = read_label_file(&dir.join(LABELS_FILE))?;
    if labels.len() != events.len() {
        return Err(CliError::runtime(anyhow::anyhow!(
            "{}: {} labels for {} events",
            dir.display(),
            labels.len(),
            events.len()
        )));
    }
    let motion_path = dir.join(MOTION_FILE);
    let motion = if motion_path.exists() {
        Some(read_motion(&motion_path)?)
    } else {
        None
    };
    Ok(LabeledStream {
        geometry,
        start_us: events.first().map_or(0, |e| e.t),
        end_us: events.last().map_or(0, |e| e.t + 1),
        events,
        labels,
        motion,
    })
}
