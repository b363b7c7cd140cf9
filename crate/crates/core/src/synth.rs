//! Labelled synthetic scenes: bright polygons translating over a dark
//! background, bouncing off the frame edges.
//!
//! The sensor model is deliberately simple and non-physical. A pixel
//! changes state when its centre enters or leaves a shape; each change
//! emits `floor(r)` events plus one more with probability `frac(r)`, where
//! `r` is the configured edge rate. Entering a bright shape gives positive
//! polarity and leaving it negative. Shapes are transparent, so overlapping
//! shapes emit independently. Background noise is uniform in space and time.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::events::{Event, EventError, LabeledStream, MotionSample, MotionTrack, Polarity, SensorGeometry};

/// Simulation step as a fraction of a pixel travelled by the fastest shape.
const STEP_PX: f64 = 0.25;
const MIN_AREA: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("shape {shape} is degenerate: it needs at least 3 vertices and a non-zero area")]
    DegeneratePolygon { shape: usize },
    #[error("invalid scene: {0}")]
    Config(String),
    #[error("train fraction {0} lies outside (0, 1]")]
    Fraction(f64),
    #[error(transparent)]
    Event(#[from] EventError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeConfig {
    /// Polygon vertices in pixel coordinates at `t = 0`.
    pub vertices: Vec<[f64; 2]>,
    /// Pixels per second.
    pub velocity: [f64; 2],
    pub class: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    pub geometry: SensorGeometry,
    pub shapes: Vec<ShapeConfig>,
    /// Background events per pixel per second.
    #[serde(default)]
    pub noise_rate: f64,
    /// Expected events per pixel crossed by an edge.
    #[serde(default = "default_edge_rate")]
    pub edge_rate: f64,
    pub duration_s: f64,
    /// Standard deviation of the timestamp jitter in µs.
    #[serde(default)]
    pub jitter_us: f64,
    #[serde(default)]
    pub seed: u64,
    /// Label given to background noise.
    #[serde(default)]
    pub noise_class: usize,
    /// Index of the shape whose velocity is the motion ground truth.
    #[serde(default)]
    pub target: Option<usize>,
    /// Whether shapes reflect off the frame edges.
    #[serde(default = "default_bounce")]
    pub bounce: bool,
}

fn default_edge_rate() -> f64 {
    1.0
}

fn default_bounce() -> bool {
    true
}

impl SceneConfig {
    /// 64×64, 20 s: a triangle (class 1, motion target) and a square
    /// (class 0) moving in different directions over sparse noise.
    pub fn desk(seed: u64) -> Self {
        Self {
            geometry: SensorGeometry::new(64, 64).expect("valid"),
            shapes: vec![
                ShapeConfig {
                    vertices: vec![[12.0, 27.0], [28.0, 27.0], [20.0, 13.0]],
                    velocity: [120.0, 80.0],
                    class: 1,
                },
                ShapeConfig {
                    vertices: vec![[38.0, 34.0], [50.0, 34.0], [50.0, 46.0], [38.0, 46.0]],
                    velocity: [-90.0, 110.0],
                    class: 0,
                },
            ],
            noise_rate: 0.05,
            edge_rate: 1.0,
            duration_s: 20.0,
            jitter_us: 20.0,
            seed,
            noise_class: 0,
            target: Some(0),
            bounce: true,
        }
    }

    pub fn duration_us(&self) -> u64 {
        (self.duration_s * 1e6).round() as u64
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        self.geometry.validate()?;
        let bad = |m: String| Err(SynthError::Config(m));
        if !(self.duration_s > 0.0) || !self.duration_s.is_finite() {
            return bad(format!("duration_s must be positive, got {}", self.duration_s));
        }
        for (name, v) in [
            ("noise_rate", self.noise_rate),
            ("edge_rate", self.edge_rate),
            ("jitter_us", self.jitter_us),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return bad(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        if let Some(t) = self.target {
            if t >= self.shapes.len() {
                return bad(format!("target shape {t} does not exist"));
            }
        }
        for (i, s) in self.shapes.iter().enumerate() {
            if s.velocity
                .iter()
                .chain(s.vertices.iter().flatten())
                .any(|v| !v.is_finite())
            {
                return bad(format!("shape {i} has non-finite coordinates or velocity"));
            }
            if s.vertices.len() < 3 || polygon_area(&s.vertices).abs() < MIN_AREA {
                return Err(SynthError::DegeneratePolygon { shape: i });
            }
        }
        Ok(())
    }
}

fn polygon_area(v: &[[f64; 2]]) -> f64 {
    let n = v.len();
    (0..n)
        .map(|i| {
            let (a, b) = (v[i], v[(i + 1) % n]);
            a[0] * b[1] - b[0] * a[1]
        })
        .sum::<f64>()
        / 2.0
}

/// Even-odd rule.
fn contains(v: &[[f64; 2]], offset: [f64; 2], x: f64, y: f64) -> bool {
    let (x, y) = (x - offset[0], y - offset[1]);
    let mut inside = false;
    let mut j = v.len() - 1;
    for i in 0..v.len() {
        let (a, b) = (v[i], v[j]);
        if (a[1] > y) != (b[1] > y) && x < (b[0] - a[0]) * (y - a[1]) / (b[1] - a[1]) + a[0] {
            inside = !inside;
        }
        j = i;
    }
    inside
}

struct Body<'a> {
    shape: &'a ShapeConfig,
    offset: [f64; 2],
    velocity: [f64; 2],
    /// Local bounding box `[min_x, min_y, max_x, max_y]` of the vertices.
    local_box: [f64; 4],
    covered: Vec<bool>,
}

impl<'a> Body<'a> {
    fn new(shape: &'a ShapeConfig, g: SensorGeometry) -> Self {
        let mut b = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
        for v in &shape.vertices {
            b = [b[0].min(v[0]), b[1].min(v[1]), b[2].max(v[0]), b[3].max(v[1])];
        }
        let mut body = Self {
            shape,
            offset: [0.0, 0.0],
            velocity: shape.velocity,
            local_box: b,
            covered: vec![false; g.pixels()],
        };
        let full = body.pixel_box(g);
        for (x, y) in pixels(full) {
            body.covered[y * g.width as usize + x] = body.covers(x, y);
        }
        body
    }

    fn covers(&self, x: usize, y: usize) -> bool {
        contains(&self.shape.vertices, self.offset, x as f64 + 0.5, y as f64 + 0.5)
    }

    /// Pixel range `[x0, y0, x1, y1)` whose centres may lie inside.
    fn pixel_box(&self, g: SensorGeometry) -> [usize; 4] {
        let lb = self.local_box;
        let clamp = |v: f64, hi: u16| v.clamp(0.0, hi as f64) as usize;
        [
            clamp((lb[0] + self.offset[0] - 0.5).floor(), g.width),
            clamp((lb[1] + self.offset[1] - 0.5).floor(), g.height),
            clamp((lb[2] + self.offset[0] + 0.5).ceil(), g.width),
            clamp((lb[3] + self.offset[1] + 0.5).ceil(), g.height),
        ]
    }

    /// Reflects the velocity when the bounding box leaves the frame while
    /// still moving outwards. Returns whether anything flipped.
    fn bounce(&mut self, g: SensorGeometry) -> bool {
        let lb = self.local_box;
        let limits = [g.width as f64, g.height as f64];
        let mut flipped = false;
        for axis in 0..2 {
            let lo = lb[axis] + self.offset[axis];
            let hi = lb[axis + 2] + self.offset[axis];
            let v = self.velocity[axis];
            if (lo < 0.0 && v < 0.0) || (hi > limits[axis] && v > 0.0) {
                self.velocity[axis] = -v;
                flipped = true;
            }
        }
        flipped
    }
}

fn pixels(b: [usize; 4]) -> impl Iterator<Item = (usize, usize)> {
    (b[1]..b[3]).flat_map(move |y| (b[0]..b[2]).map(move |x| (x, y)))
}

fn union(a: [usize; 4], b: [usize; 4]) -> [usize; 4] {
    [a[0].min(b[0]), a[1].min(b[1]), a[2].max(b[2]), a[3].max(b[3])]
}

/// Draws `floor(rate)` plus a Bernoulli(`frac(rate)`) count.
fn thinned_count<G: Rng>(rate: f64, rng: &mut G) -> usize {
    let whole = rate.floor();
    whole as usize + usize::from(rng.random_bool(rate - whole))
}

/// Generates the labelled stream of `config`.
pub fn generate(config: &SceneConfig) -> Result<LabeledStream, SynthError> {
    config.validate()?;
    let g = config.geometry;
    let end_us = config.duration_us();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut tagged: Vec<(Event, usize)> = Vec::new();
    let mut bodies: Vec<Body> = config.shapes.iter().map(|s| Body::new(s, g)).collect();

    let mut track = config.target.map(|i| MotionTrack {
        samples: vec![MotionSample {
            t: 0,
            u: bodies[i].velocity[0],
            v: bodies[i].velocity[1],
        }],
    });

    let max_speed = bodies
        .iter()
        .map(|b| b.velocity[0].hypot(b.velocity[1]))
        .fold(0.0, f64::max);
    if max_speed > 0.0 && config.edge_rate > 0.0 {
        let step_us = STEP_PX / max_speed * 1e6;
        let steps = (end_us as f64 / step_us).ceil() as usize;
        for step in 0..steps {
            let t0 = step as f64 * step_us;
            let t1 = ((step + 1) as f64 * step_us).min(end_us as f64);
            let dt_s = (t1 - t0) * 1e-6;
            for (index, body) in bodies.iter_mut().enumerate() {
                let before = body.pixel_box(g);
                body.offset[0] += body.velocity[0] * dt_s;
                body.offset[1] += body.velocity[1] * dt_s;
                for (x, y) in pixels(union(before, body.pixel_box(g))) {
                    let cell = y * g.width as usize + x;
                    let now = body.covers(x, y);
                    if now == body.covered[cell] {
                        continue;
                    }
                    body.covered[cell] = now;
                    let p = if now { Polarity::Positive } else { Polarity::Negative };
                    for _ in 0..thinned_count(config.edge_rate, &mut rng) {
                        let t = rng.random_range(t0..t1).floor() as u64;
                        tagged.push((Event::new(x as u16, y as u16, p, t.min(end_us - 1)), body.shape.class));
                    }
                }
                if config.bounce && body.bounce(g) && config.target == Some(index) {
                    if let Some(track) = &mut track {
                        track.samples.push(MotionSample {
                            t: t1.round() as u64,
                            u: body.velocity[0],
                            v: body.velocity[1],
                        });
                    }
                }
            }
        }
    }

    let expected_noise = config.noise_rate * g.pixels() as f64 * config.duration_s;
    if expected_noise > 0.0 {
        let count = Poisson::new(expected_noise).expect("positive mean").sample(&mut rng) as usize;
        for _ in 0..count {
            let p = if rng.random_bool(0.5) {
                Polarity::Positive
            } else {
                Polarity::Negative
            };
            let e = Event::new(
                rng.random_range(0..g.width),
                rng.random_range(0..g.height),
                p,
                rng.random_range(0..end_us),
            );
            tagged.push((e, config.noise_class));
        }
    }

    // Sort first so jitter is applied in a seed-determined order.
    tagged.sort_by_key(|(e, _)| e.t);
    if config.jitter_us > 0.0 {
        let jitter = Normal::new(0.0, config.jitter_us).expect("finite sigma");
        for (e, _) in &mut tagged {
            let t = e.t as f64 + jitter.sample(&mut rng);
            e.t = (t.round().max(0.0) as u64).min(end_us - 1);
        }
        tagged.sort_by_key(|(e, _)| e.t);
    }

    let (events, labels) = tagged.into_iter().unzip();
    Ok(LabeledStream {
        geometry: g,
        events,
        labels,
        motion: track,
        start_us: 0,
        end_us,
    })
}

/// Contiguous temporal split: events before `start + fraction·span` go to
/// the first stream. The motion track is shared by both halves.
pub fn split(stream: &LabeledStream, train_fraction: f64) -> Result<(LabeledStream, LabeledStream), SynthError> {
    if !(train_fraction > 0.0 && train_fraction <= 1.0) {
        return Err(SynthError::Fraction(train_fraction));
    }
    let span = stream.end_us - stream.start_us;
    let boundary = stream.start_us + (span as f64 * train_fraction).round() as u64;
    let cut = stream.events.partition_point(|e| e.t < boundary);
    let half = |range: std::ops::Range<usize>, start_us, end_us| LabeledStream {
        geometry: stream.geometry,
        events: stream.events[range.clone()].to_vec(),
        labels: stream.labels[range].to_vec(),
        motion: stream.motion.clone(),
        start_us,
        end_us,
    };
    Ok((
        half(0..cut, stream.start_us, boundary),
        half(cut..stream.events.len(), boundary, stream.end_us),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn still(seed: u64) -> SceneConfig {
        let mut c = SceneConfig::desk(seed);
        for s in &mut c.shapes {
            s.velocity = [0.0, 0.0];
        }
        c.noise_rate = 0.0;
        c.duration_s = 1.0;
        c
    }

    #[test]
    fn still_scene_without_noise_is_empty() {
        let s = generate(&still(1)).unwrap();
        assert!(s.is_empty());
        assert_eq!(s.motion.unwrap().samples.len(), 1);
    }

    #[test]
    fn single_shape_labels_everything_with_its_class() {
        let mut c = SceneConfig::desk(2);
        c.shapes.truncate(1);
        c.noise_rate = 0.0;
        c.duration_s = 2.0;
        let s = generate(&c).unwrap();
        assert!(s.len() > 1000);
        assert!(s.labels.iter().all(|&l| l == 1));
        assert!(s.events.windows(2).all(|w| w[0].t <= w[1].t));
        assert!(s
            .events
            .iter()
            .all(|e| c.geometry.contains(e.x, e.y) && e.t < 2_000_000));
    }

    #[test]
    fn deterministic_for_a_seed() {
        let c = SceneConfig::desk(5);
        let mut short = c.clone();
        short.duration_s = 1.0;
        assert_eq!(generate(&short).unwrap(), generate(&short).unwrap());
        let mut other = short.clone();
        other.seed = 6;
        assert_ne!(generate(&short).unwrap().events, generate(&other).unwrap().events);
    }

    #[test]
    fn edge_count_matches_crossings() {
        // A tall bar whose trailing edge stays left of the frame: only its
        // leading edge crosses pixels, h·v·d crossings in total.
        let c = SceneConfig {
            geometry: SensorGeometry::new(64, 20).unwrap(),
            shapes: vec![ShapeConfig {
                vertices: vec![[-100.0, -5.0], [2.0, -5.0], [2.0, 30.0], [-100.0, 30.0]],
                velocity: [40.0, 0.0],
                class: 0,
            }],
            noise_rate: 0.0,
            edge_rate: 2.5,
            duration_s: 1.0,
            jitter_us: 0.0,
            seed: 3,
            noise_class: 0,
            target: None,
            bounce: false,
        };
        let s = generate(&c).unwrap();
        let expected = 20.0 * 40.0 * 1.0 * 2.5;
        let n = s.len() as f64;
        assert!((n - expected).abs() < 4.0 * expected.sqrt(), "{n} vs {expected}");
        assert!(s.events.iter().all(|e| e.p == Polarity::Positive));
    }

    #[test]
    fn bounces_are_recorded_in_the_track() {
        let s = generate(&SceneConfig {
            duration_s: 3.0,
            ..SceneConfig::desk(4)
        })
        .unwrap();
        let track = s.motion.unwrap();
        assert!(track.samples.len() > 2);
        for w in track.samples.windows(2) {
            assert!(w[0].t <= w[1].t);
            assert_eq!(w[0].u.abs(), w[1].u.abs());
        }
    }

    #[test]
    fn degenerate_polygons_are_rejected() {
        let mut c = SceneConfig::desk(0);
        c.shapes[1].vertices = vec![[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]];
        assert!(matches!(generate(&c), Err(SynthError::DegeneratePolygon { shape: 1 })));
        c.shapes[1].vertices.truncate(2);
        assert!(matches!(generate(&c), Err(SynthError::DegeneratePolygon { shape: 1 })));
        let mut c = SceneConfig::desk(0);
        c.duration_s = 0.0;
        assert!(generate(&c).is_err());
    }

    #[test]
    fn temporal_split() {
        let mut c = SceneConfig::desk(8);
        c.duration_s = 6.0;
        let s = generate(&c).unwrap();
        let (train, test) = split(&s, 5.0 / 6.0).unwrap();
        assert_eq!(train.end_us, 5_000_000);
        assert_eq!(test.start_us, 5_000_000);
        assert!(train.events.iter().all(|e| e.t < 5_000_000));
        assert!(test.events.iter().all(|e| e.t >= 5_000_000));
        assert_eq!(train.len() + test.len(), s.len());
        let (all, none) = split(&s, 1.0).unwrap();
        assert_eq!((all.len(), none.len()), (s.len(), 0));
        assert_eq!(split(&s, 0.3).unwrap(), split(&s, 0.3).unwrap());
        assert!(split(&s, 0.0).is_err() && split(&s, 1.5).is_err());
    }

    #[test]
    fn config_round_trips_through_toml() {
        let c = SceneConfig::desk(11);
        let text = toml::to_string(&c).unwrap();
        assert_eq!(toml::from_str::<SceneConfig>(&text).unwrap(), c);
    }
}
