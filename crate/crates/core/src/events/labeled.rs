use std::io::{BufRead, Write};

use super::{Event, EventError, SensorGeometry};

/// Planar velocity of the tracked object at time `t`, in pixels per second.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MotionSample {
    pub t: u64,
    pub u: f64,
    pub v: f64,
}

/// Piecewise-constant motion ground truth, sorted by time.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MotionTrack {
    pub samples: Vec<MotionSample>,
}

impl MotionTrack {
    /// Latest sample at or before `t` (the first sample if `t` precedes all).
    pub fn at(&self, t: u64) -> Option<MotionSample> {
        if self.samples.is_empty() {
            return None;
        }
        let i = self.samples.partition_point(|s| s.t <= t);
        Some(self.samples[i.saturating_sub(1)])
    }

    /// Velocity at `t` expressed in pixels per window length.
    pub fn per_window(&self, t: u64, tau_us: u64) -> Option<[f64; 2]> {
        let scale = tau_us as f64 * 1e-6;
        self.at(t).map(|s| [s.u * scale, s.v * scale])
    }

    pub fn write_csv<W: Write>(&self, mut writer: W) -> Result<(), EventError> {
        writeln!(writer, "t_us,u,v")?;
        for s in &self.samples {
            writeln!(writer, "{},{},{}", s.t, s.u, s.v)?;
        }
        writer.flush()?;
        Ok(())
    }

    pub fn read_csv<R: BufRead>(reader: R) -> Result<Self, EventError> {
        let mut samples = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || (i == 0 && line.starts_with('t')) {
                continue;
            }
            let parse_err = |msg: String| EventError::Parse { line: i + 1, msg };
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != 3 {
                return Err(parse_err(format!("expected 3 fields, got {}", f.len())));
            }
            samples.push(MotionSample {
                t: f[0].parse().map_err(|e| parse_err(format!("t_us: {e}")))?,
                u: f[1].parse().map_err(|e| parse_err(format!("u: {e}")))?,
                v: f[2].parse().map_err(|e| parse_err(format!("v: {e}")))?,
            });
        }
        Ok(Self { samples })
    }
}

/// An event stream with a class per event and optional motion ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledStream {
    pub geometry: SensorGeometry,
    pub events: Vec<Event>,
    pub labels: Vec<usize>,
    pub motion: Option<MotionTrack>,
    /// Covered time span `[start_us, end_us)`.
    pub start_us: u64,
    pub end_us: u64,
}

impl LabeledStream {
    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Writes `index,class` rows.
    pub fn write_labels<W: Write>(&self, mut writer: W) -> Result<(), EventError> {
        writeln!(writer, "index,class")?;
        for (i, c) in self.labels.iter().enumerate() {
            writeln!(writer, "{i},{c}")?;
        }
        writer.flush()?;
        Ok(())
    }
}

/// Reads `index,class` rows into a dense label vector.
pub fn read_labels<R: BufRead>(reader: R) -> Result<Vec<usize>, EventError> {
    let mut labels = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || (i == 0 && line.starts_with(|c: char| c.is_ascii_alphabetic())) {
            continue;
        }
        let parse_err = |msg: String| EventError::Parse { line: i + 1, msg };
        let (idx, class) = line
            .split_once(',')
            .ok_or_else(|| parse_err("expected index,class".into()))?;
        let idx: usize = idx.trim().parse().map_err(|e| parse_err(format!("index: {e}")))?;
        let class: usize = class.trim().parse().map_err(|e| parse_err(format!("class: {e}")))?;
        if idx != labels.len() {
            return Err(parse_err(format!("expected index {}, got {idx}", labels.len())));
        }
        labels.push(class);
    }
    Ok(labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn motion_lookup_is_piecewise_constant() {
        let track = MotionTrack {
            samples: vec![
                MotionSample { t: 0, u: 1.0, v: 0.0 },
                MotionSample {
                    t: 1_000,
                    u: -1.0,
                    v: 2.0,
                },
            ],
        };
        assert_eq!(track.at(999).unwrap().u, 1.0);
        assert_eq!(track.at(1_000).unwrap().u, -1.0);
        assert_eq!(track.per_window(5_000, 32_000).unwrap(), [-0.032, 0.064]);
    }

    #[test]
    fn label_file_round_trip() {
        let stream = LabeledStream {
            geometry: SensorGeometry::new(2, 2).unwrap(),
            events: vec![],
            labels: vec![0, 1, 1],
            motion: None,
            start_us: 0,
            end_us: 1,
        };
        let mut buf = Vec::new();
        stream.write_labels(&mut buf).unwrap();
        assert_eq!(read_labels(&buf[..]).unwrap(), vec![0, 1, 1]);
    }
}
