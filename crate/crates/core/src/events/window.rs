use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Event, EventError, SensorGeometry};

/// Events whose age relative to the newest event is strictly below `tau`.
///
/// An event with age exactly `tau` has zero coded magnitude and is evicted.
#[derive(Clone, Debug, PartialEq)]
pub struct EventWindow {
    events: VecDeque<Event>,
    tau: u64,
    anchor_t: u64,
}

impl EventWindow {
    pub fn new(tau: u64) -> Result<Self, EventError> {
        if tau == 0 {
            return Err(EventError::ZeroTau);
        }
        Ok(Self {
            events: VecDeque::new(),
            tau,
            anchor_t: 0,
        })
    }

    /// Builds a window from an already time-ordered slice anchored at
    /// `anchor_t`. Events at or after `anchor_t + 1` or older than the
    /// window are dropped.
    pub fn from_events(events: &[Event], tau: u64, anchor_t: u64) -> Result<Self, EventError> {
        let mut window = Self::new(tau)?;
        let mut prev = 0;
        for e in events {
            if e.t < prev {
                return Err(EventError::OutOfOrder { t: e.t, anchor_t: prev });
            }
            prev = e.t;
            if e.t <= anchor_t && anchor_t - e.t < tau {
                window.events.push_back(*e);
            }
        }
        window.anchor_t = anchor_t;
        Ok(window)
    }

    /// Appends `e` and evicts every event with `e.t - t >= tau`.
    pub fn push(&mut self, e: Event) -> Result<(), EventError> {
        if e.t < self.anchor_t {
            return Err(EventError::OutOfOrder {
                t: e.t,
                anchor_t: self.anchor_t,
            });
        }
        while let Some(front) = self.events.front() {
            if e.t - front.t >= self.tau {
                self.events.pop_front();
            } else {
                break;
            }
        }
        self.events.push_back(e);
        self.anchor_t = e.t;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn tau(&self) -> u64 {
        self.tau
    }

    pub fn anchor_t(&self) -> u64 {
        self.anchor_t
    }

    pub fn events(&self) -> impl ExactSizeIterator<Item = &Event> + DoubleEndedIterator {
        self.events.iter()
    }

    pub fn to_vec(&self) -> Vec<Event> {
        self.events.iter().copied().collect()
    }

    /// Age of the oldest retained event, if any.
    pub fn max_age(&self) -> Option<u64> {
        self.events.front().map(|e| self.anchor_t - e.t)
    }
}

/// Spatial crop applied to composed training windows.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Crop {
    /// Crop of `size` at a uniformly drawn origin inside `source`.
    Random {
        source: SensorGeometry,
        size: SensorGeometry,
    },
    /// Crop of `size` at a fixed origin.
    Fixed { x0: u16, y0: u16, size: SensorGeometry },
}

impl Crop {
    /// Centred crop, used at test time.
    pub fn center(source: SensorGeometry, size: SensorGeometry) -> Result<Self, EventError> {
        check_fit(source, size)?;
        Ok(Crop::Fixed {
            x0: (source.width - size.width) / 2,
            y0: (source.height - size.height) / 2,
            size,
        })
    }

    pub fn size(&self) -> SensorGeometry {
        match *self {
            Crop::Random { size, .. } | Crop::Fixed { size, .. } => size,
        }
    }
}

fn check_fit(source: SensorGeometry, size: SensorGeometry) -> Result<(), EventError> {
    if size.width == 0 || size.height == 0 || size.width > source.width || size.height > source.height {
        return Err(EventError::BadCrop {
            crop_w: size.width,
            crop_h: size.height,
            width: source.width,
            height: source.height,
        });
    }
    Ok(())
}

/// A composed training window plus the positions of its events in the
/// source stream, so per-event labels can be gathered.
#[derive(Clone, Debug)]
pub struct ComposedWindow {
    pub window: EventWindow,
    pub anchor_index: usize,
    pub source_indices: Vec<usize>,
}

pub const MAX_COMPOSE_RETRIES: usize = 64;

/// Draws training windows from a full stream.
///
/// The anchor is drawn uniformly over all events; every event with
/// `t_anchor - tau < t <= t_anchor` is retained, so a window depends only
/// on its anchor time and never on the order of simultaneous events.
pub struct WindowComposer<'a> {
    stream: &'a [Event],
    tau: u64,
    crop: Option<Crop>,
    rng: ChaCha8Rng,
}

impl<'a> WindowComposer<'a> {
    pub fn new(stream: &'a [Event], tau: u64, crop: Option<Crop>, seed: u64) -> Result<Self, EventError> {
        if stream.is_empty() {
            return Err(EventError::EmptyStream);
        }
        if tau == 0 {
            return Err(EventError::ZeroTau);
        }
        if stream.windows(2).any(|w| w[1].t < w[0].t) {
            let bad = stream.windows(2).find(|w| w[1].t < w[0].t).unwrap();
            return Err(EventError::OutOfOrder {
                t: bad[1].t,
                anchor_t: bad[0].t,
            });
        }
        match crop {
            Some(Crop::Random { source, size }) => check_fit(source, size)?,
            Some(Crop::Fixed { size, .. }) if size.width == 0 || size.height == 0 => {
                return Err(EventError::InvalidGeometry {
                    width: size.width,
                    height: size.height,
                })
            }
            _ => {}
        }
        Ok(Self {
            stream,
            tau,
            crop,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn next_window(&mut self) -> Result<ComposedWindow, EventError> {
        for _ in 0..MAX_COMPOSE_RETRIES {
            let anchor_index = self.rng.random_range(0..self.stream.len());
            let origin = match self.crop {
                Some(Crop::Random { source, size }) => Some((
                    self.rng.random_range(0..=source.width - size.width),
                    self.rng.random_range(0..=source.height - size.height),
                    size,
                )),
                Some(Crop::Fixed { x0, y0, size }) => Some((x0, y0, size)),
                None => None,
            };
            let composed = self.window_at(anchor_index, origin)?;
            if !composed.window.is_empty() {
                return Ok(composed);
            }
        }
        Err(EventError::NoWindow(MAX_COMPOSE_RETRIES))
    }

    /// Window anchored at the event `anchor_index`, optionally cropped at
    /// `(x0, y0, size)` with coordinates re-based to the crop origin.
    pub fn window_at(
        &self,
        anchor_index: usize,
        crop: Option<(u16, u16, SensorGeometry)>,
    ) -> Result<ComposedWindow, EventError> {
        let t_anchor = self.stream[anchor_index].t;
        let lo = self.stream.partition_point(|e| e.t + self.tau <= t_anchor);
        let hi = self.stream.partition_point(|e| e.t <= t_anchor);
        let mut window = EventWindow::new(self.tau)?;
        let mut source_indices = Vec::with_capacity(hi - lo);
        for (i, e) in self.stream[lo..hi].iter().enumerate() {
            let kept = match crop {
                None => Some(*e),
                Some((x0, y0, size)) => {
                    if e.x >= x0 && e.y >= y0 && e.x - x0 < size.width && e.y - y0 < size.height {
                        Some(Event::new(e.x - x0, e.y - y0, e.p, e.t))
                    } else {
                        None
                    }
                }
            };
            if let Some(ev) = kept {
                window.events.push_back(ev);
                source_indices.push(lo + i);
            }
        }
        window.anchor_t = t_anchor;
        Ok(ComposedWindow {
            window,
            anchor_index,
            source_indices,
        })
    }
}

/// One-shot window draw with its own seed.
pub fn compose_training_window(
    full_stream: &[Event],
    tau: u64,
    crop: Option<Crop>,
    rng_seed: u64,
) -> Result<EventWindow, EventError> {
    let mut composer = WindowComposer::new(full_stream, tau, crop, rng_seed)?;
    composer.next_window().map(|c| c.window)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::Polarity;

    fn ev(t: u64) -> Event {
        Event::new(0, 0, Polarity::Positive, t)
    }

    #[test]
    fn push_into_empty_window() {
        let mut w = EventWindow::new(32_000).unwrap();
        w.push(ev(100)).unwrap();
        assert_eq!(w.len(), 1);
        assert_eq!(w.anchor_t(), 100);
    }

    #[test]
    fn event_at_exactly_tau_is_evicted() {
        let mut w = EventWindow::new(32_000).unwrap();
        w.push(ev(0)).unwrap();
        w.push(ev(32_000)).unwrap();
        assert_eq!(w.len(), 1);
        assert_eq!(w.events().next().unwrap().t, 32_000);
    }

    #[test]
    fn ten_events_at_1ms_spacing_keep_five() {
        let mut w = EventWindow::new(5_000).unwrap();
        for i in 0..10 {
            w.push(ev(i * 1_000)).unwrap();
        }
        // Oracle: count t with 9000 - t < 5000 among 0, 1000, ..., 9000.
        let expected = (0..10u64).filter(|i| 9_000 - i * 1_000 < 5_000).count();
        assert_eq!(expected, 5);
        assert_eq!(w.len(), expected);
    }

    #[test]
    fn out_of_order_push_is_rejected() {
        let mut w = EventWindow::new(10).unwrap();
        w.push(ev(50)).unwrap();
        let err = w.push(ev(49)).unwrap_err();
        assert!(matches!(err, EventError::OutOfOrder { t: 49, anchor_t: 50 }));
        assert_eq!(w.len(), 1);
    }

    #[test]
    fn simultaneous_events_are_kept_in_arrival_order() {
        let mut w = EventWindow::new(10).unwrap();
        w.push(Event::new(1, 0, Polarity::Positive, 5)).unwrap();
        w.push(Event::new(2, 0, Polarity::Negative, 5)).unwrap();
        let xs: Vec<u16> = w.events().map(|e| e.x).collect();
        assert_eq!(xs, vec![1, 2]);
    }

    #[test]
    fn single_event_stream_composes_to_that_event() {
        let stream = [ev(42)];
        let w = compose_training_window(&stream, 1_000, None, 7).unwrap();
        assert_eq!(w.to_vec(), stream.to_vec());
        assert_eq!(w.anchor_t(), 42);
    }

    #[test]
    fn composition_is_seeded() {
        let stream: Vec<Event> = (0..500).map(|i| ev(i * 37)).collect();
        let a = compose_training_window(&stream, 2_000, None, 99).unwrap();
        let b = compose_training_window(&stream, 2_000, None, 99).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn window_covers_half_open_interval() {
        let stream: Vec<Event> = [0, 10, 10, 20, 30, 30].iter().map(|&t| ev(t)).collect();
        let composer = WindowComposer::new(&stream, 20, None, 0).unwrap();
        // Anchor at the first t=10 event still includes its simultaneous twin.
        let c = composer.window_at(1, None).unwrap();
        assert_eq!(c.source_indices, vec![0, 1, 2]);
        let c = composer.window_at(4, None).unwrap();
        assert_eq!(c.source_indices, vec![3, 4, 5]);
    }

    #[test]
    fn random_crop_rebases_coordinates() {
        let source = SensorGeometry::new(240, 180).unwrap();
        let size = SensorGeometry::new(128, 128).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let stream: Vec<Event> = (0..20_000)
            .map(|i| {
                Event::new(
                    rng.random_range(0..240),
                    rng.random_range(0..180),
                    Polarity::Positive,
                    i,
                )
            })
            .collect();
        let mut composer = WindowComposer::new(&stream, 5_000, Some(Crop::Random { source, size }), 11).unwrap();
        for _ in 0..50 {
            let c = composer.next_window().unwrap();
            assert!(!c.window.is_empty());
            for e in c.window.events() {
                assert!(e.x < 128 && e.y < 128);
            }
        }
    }

    #[test]
    fn crop_that_never_hits_events_errors() {
        let stream = vec![Event::new(0, 0, Polarity::Positive, 0)];
        let crop = Crop::Fixed {
            x0: 10,
            y0: 10,
            size: SensorGeometry::new(4, 4).unwrap(),
        };
        let err = compose_training_window(&stream, 100, Some(crop), 0).unwrap_err();
        assert!(matches!(err, EventError::NoWindow(_)));
    }

    #[test]
    fn oversized_crop_is_rejected() {
        let source = SensorGeometry::new(10, 10).unwrap();
        let size = SensorGeometry::new(11, 4).unwrap();
        assert!(Crop::center(source, size).is_err());
    }
}
