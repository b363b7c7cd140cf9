//! Event representation, temporal windows, noise filters and file formats.

mod filter;
mod io;
mod labeled;
mod window;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use filter::{nn_filter, refractory_filter};
pub use io::{read_binary, read_csv, write_binary, write_csv, BINARY_MAGIC, BINARY_VERSION};
pub use labeled::{read_labels, LabeledStream, MotionSample, MotionTrack};
pub use window::{compose_training_window, ComposedWindow, Crop, EventWindow, WindowComposer, MAX_COMPOSE_RETRIES};

#[derive(Debug, Error)]
pub enum EventError {
    #[error("event at t={t} precedes the window anchor t={anchor_t}")]
    OutOfOrder { t: u64, anchor_t: u64 },
    #[error("event ({x}, {y}) lies outside a {width}x{height} sensor")]
    OutOfBounds { x: u16, y: u16, width: u16, height: u16 },
    #[error("polarity must be +1 or -1, got {0}")]
    InvalidPolarity(i64),
    #[error("sensor geometry must be at least 1x1, got {width}x{height}")]
    InvalidGeometry { width: u16, height: u16 },
    #[error("window length tau must be positive")]
    ZeroTau,
    #[error("event stream is empty")]
    EmptyStream,
    #[error("no non-empty window found after {0} anchor draws")]
    NoWindow(usize),
    #[error("crop {crop_w}x{crop_h} does not fit a {width}x{height} sensor")]
    BadCrop {
        crop_w: u16,
        crop_h: u16,
        width: u16,
        height: u16,
    },
    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("bad binary header: {0}")]
    BadHeader(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Sign of the detected brightness change.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Polarity {
    Negative,
    Positive,
}

impl Polarity {
    pub fn from_sign(sign: i64) -> Result<Self, EventError> {
        match sign {
            1 => Ok(Polarity::Positive),
            -1 => Ok(Polarity::Negative),
            other => Err(EventError::InvalidPolarity(other)),
        }
    }

    #[inline]
    pub fn sign(self) -> i8 {
        match self {
            Polarity::Positive => 1,
            Polarity::Negative => -1,
        }
    }

    /// Table plane index: 0 for negative, 1 for positive.
    #[inline]
    pub fn index(self) -> usize {
        match self {
            Polarity::Negative => 0,
            Polarity::Positive => 1,
        }
    }
}

/// One camera event. Timestamps are integer microseconds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Event {
    pub x: u16,
    pub y: u16,
    pub p: Polarity,
    pub t: u64,
}

impl Event {
    pub fn new(x: u16, y: u16, p: Polarity, t: u64) -> Self {
        Self { x, y, p, t }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SensorGeometry {
    pub width: u16,
    pub height: u16,
}

impl SensorGeometry {
    pub fn new(width: u16, height: u16) -> Result<Self, EventError> {
        if width == 0 || height == 0 {
            return Err(EventError::InvalidGeometry { width, height });
        }
        Ok(Self { width, height })
    }

    /// DAVIS240 array.
    pub fn davis240() -> Self {
        Self {
            width: 240,
            height: 180,
        }
    }

    pub fn validate(&self) -> Result<(), EventError> {
        Self::new(self.width, self.height).map(|_| ())
    }

    #[inline]
    pub fn pixels(&self) -> usize {
        self.width as usize * self.height as usize
    }

    /// Number of distinct `(x, y, p)` inputs.
    #[inline]
    pub fn cells(&self) -> usize {
        self.pixels() * 2
    }

    #[inline]
    pub fn contains(&self, x: u16, y: u16) -> bool {
        x < self.width && y < self.height
    }

    pub fn check(&self, e: &Event) -> Result<(), EventError> {
        if self.contains(e.x, e.y) {
            Ok(())
        } else {
            Err(EventError::OutOfBounds {
                x: e.x,
                y: e.y,
                width: self.width,
                height: self.height,
            })
        }
    }

    /// Flat cell index `((p * H) + y) * W + x`.
    #[inline]
    pub fn cell_index(&self, x: u16, y: u16, p: Polarity) -> usize {
        (p.index() * self.height as usize + y as usize) * self.width as usize + x as usize
    }

    /// Inverse of [`SensorGeometry::cell_index`].
    pub fn cell_coords(&self, index: usize) -> (u16, u16, Polarity) {
        let w = self.width as usize;
        let h = self.height as usize;
        let x = index % w;
        let y = (index / w) % h;
        let p = if index / (w * h) == 0 {
            Polarity::Negative
        } else {
            Polarity::Positive
        };
        (x as u16, y as u16, p)
    }

    /// Maps a column index onto `[-1, 1]`.
    #[inline]
    pub fn normalize_x(&self, x: u16) -> f64 {
        normalize_axis(x, self.width)
    }

    #[inline]
    pub fn normalize_y(&self, y: u16) -> f64 {
        normalize_axis(y, self.height)
    }
}

#[inline]
fn normalize_axis(v: u16, extent: u16) -> f64 {
    if extent <= 1 {
        0.0
    } else {
        2.0 * v as f64 / (extent - 1) as f64 - 1.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cell_index_round_trips() {
        let g = SensorGeometry::new(5, 3).unwrap();
        for i in 0..g.cells() {
            let (x, y, p) = g.cell_coords(i);
            assert_eq!(g.cell_index(x, y, p), i);
        }
    }

    #[test]
    fn normalization_spans_unit_interval() {
        let g = SensorGeometry::new(64, 1).unwrap();
        assert_eq!(g.normalize_x(0), -1.0);
        assert_eq!(g.normalize_x(63), 1.0);
        assert_eq!(g.normalize_y(0), 0.0);
    }

    #[test]
    fn rejects_empty_geometry_and_bad_polarity() {
        assert!(SensorGeometry::new(0, 4).is_err());
        assert!(Polarity::from_sign(0).is_err());
        assert_eq!(Polarity::from_sign(-1).unwrap().sign(), -1);
    }
}
