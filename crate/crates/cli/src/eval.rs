use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use anyhow::{anyhow, Context};
use eventnet_core::events::MotionTrack;
use eventnet_core::metrics::{motion_l2, segmentation_scores, SegmentationScores};

use crate::data::{read_label_file, read_motion};
use crate::{CliError, CliResult, EvalTask};

#[derive(Clone, Debug, PartialEq)]
pub enum Metrics {
    Segmentation {
        scores: SegmentationScores,
        count: usize,
    },
    Motion {
        /// Mean L2 error in pixels per window.
        l2: f64,
        /// Mean true speed in pixels per window.
        speed: f64,
        count: usize,
    },
}

impl fmt::Display for Metrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Metrics::Segmentation { scores, count } => {
                writeln!(f, "count={count}")?;
                writeln!(f, "ga={:.4}", scores.accuracy)?;
                writeln!(f, "miou={:.4}", scores.mean_iou)?;
                for (c, iou) in scores.iou.iter().enumerate() {
                    if let Some(iou) = iou {
                        writeln!(f, "iou_{c}={iou:.4}")?;
                    }
                }
                Ok(())
            }
            Metrics::Motion { l2, speed, count } => {
                writeln!(f, "count={count}")?;
                writeln!(f, "l2_px_per_window={l2:.6}")?;
                writeln!(f, "mean_speed_px_per_window={speed:.6}")?;
                writeln!(f, "relative_l2={:.6}", l2 / speed)
            }
        }
    }
}

/// Header plus rows of a prediction CSV.
fn read_table(path: &Path) -> CliResult<(Vec<String>, Vec<Vec<String>>)> {
    let file = File::open(path)
        .with_context(|| format!("cannot open {}", path.display()))
        .map_err(CliError::runtime)?;
    let mut lines = BufReader::new(file).lines();
    let header = match lines.next() {
        Some(line) => line.map_err(CliError::runtime)?,
        None => return Err(CliError::runtime(anyhow!("{} is empty", path.display()))),
    };
    let header: Vec<String> = header.split(',').map(|s| s.trim().to_string()).collect();
    let mut rows = Vec::new();
    for line in lines {
        let line = line.map_err(CliError::runtime)?;
        if !line.trim().is_empty() {
            rows.push(line.split(',').map(|s| s.trim().to_string()).collect());
        }
    }
    Ok((header, rows))
}

fn column(header: &[String], name: &str, path: &Path) -> CliResult<usize> {
    header
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| CliError::runtime(anyhow!("{}: no `{name}` column", path.display())))
}

fn parse<T: std::str::FromStr>(row: &[String], col: usize, line: usize, path: &Path) -> CliResult<T> {
    row.get(col)
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| CliError::runtime(anyhow!("{}: bad value on row {line}", path.display())))
}

pub fn cmd_eval(predictions: &Path, truth: &Path, task: EvalTask, tau_us: u64) -> CliResult<Metrics> {
    let (header, rows) = read_table(predictions)?;
    match task {
        EvalTask::Seg => {
            let labels = read_label_file(truth)?;
            let (ci, cc) = (
                column(&header, "index", predictions)?,
                column(&header, "class", predictions)?,
            );
            if rows.len() != labels.len() {
                return Err(CliError::runtime(anyhow!(
                    "{} predictions for {} labelled events",
                    rows.len(),
                    labels.len()
                )));
            }
            let mut predicted = vec![usize::MAX; labels.len()];
            for (line, row) in rows.iter().enumerate() {
                let index: usize = parse(row, ci, line + 2, predictions)?;
                let slot = predicted.get_mut(index).ok_or_else(|| {
                    CliError::runtime(anyhow!("{}: event index {index} out of range", predictions.display()))
                })?;
                *slot = parse(row, cc, line + 2, predictions)?;
            }
            if let Some(missing) = predicted.iter().position(|&p| p == usize::MAX) {
                return Err(CliError::runtime(anyhow!("no prediction for event {missing}")));
            }
            let scores = segmentation_scores(&predicted, &labels, 2).map_err(CliError::runtime)?;
            Ok(Metrics::Segmentation {
                scores,
                count: labels.len(),
            })
        }
        EvalTask::Motion => {
            let track = read_motion(truth)?;
            let (ct, cu, cv) = (
                column(&header, "t_us", predictions)?,
                column(&header, "y0", predictions)?,
                column(&header, "y1", predictions)?,
            );
            let mut predicted = Vec::with_capacity(rows.len());
            let mut times = Vec::with_capacity(rows.len());
            for (line, row) in rows.iter().enumerate() {
                times.push(parse::<u64>(row, ct, line + 2, predictions)?);
                predicted.push([
                    parse(row, cu, line + 2, predictions)?,
                    parse(row, cv, line + 2, predictions)?,
                ]);
            }
            motion_metrics(&predicted, &times, &track, tau_us)
        }
    }
}

/// Motion error of predictions made at `times` against a velocity track.
pub fn motion_metrics(predicted: &[[f64; 2]], times: &[u64], track: &MotionTrack, tau_us: u64) -> CliResult<Metrics> {
    let truth: Vec<[f64; 2]> = times
        .iter()
        .map(|&t| track.per_window(t, tau_us))
        .collect::<Option<_>>()
        .ok_or_else(|| CliError::runtime(anyhow!("the motion track is empty")))?;
    let l2 = motion_l2(predicted, &truth).map_err(CliError::runtime)?;
    let speed = truth.iter().map(|t| t[0].hypot(t[1])).sum::<f64>() / truth.len() as f64;
    Ok(Metrics::Motion {
        l2,
        speed,
        count: truth.len(),
    })
}
