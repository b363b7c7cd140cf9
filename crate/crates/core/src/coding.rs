//! Complex temporal coding and the magnitude-based complex max.
//!
//! A channel is kept in polar form. Coding an age `dt` against a window
//! `tau` subtracts `dt / tau` from the magnitude (clamped at zero) and
//! rotates the phase by `-2π dt / tau`. Because the decay is linear and the
//! same for every channel, decaying two channels by a shared age never
//! changes which of them is larger, which is what lets the max be folded
//! forward one event at a time.

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::real::Real;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CodingError {
    #[error("channel count mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("window length tau must be positive")]
    ZeroTau,
}

/// Which terms of the temporal code are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AblationMode {
    /// Decay and rotation.
    #[default]
    Full,
    /// Rotation only; magnitude is never decayed.
    NoTd,
    /// Decay only; phase stays at the sign phase.
    NoTr,
    /// Neither term: an order-free max over the window.
    NoAll,
    /// Neither term, with the normalized age fed to the feature network.
    Pointnet,
}

impl AblationMode {
    pub const ALL: [AblationMode; 5] = [
        AblationMode::Full,
        AblationMode::NoTd,
        AblationMode::NoTr,
        AblationMode::NoAll,
        AblationMode::Pointnet,
    ];

    #[inline]
    pub fn decays(self) -> bool {
        matches!(self, AblationMode::Full | AblationMode::NoTr)
    }

    #[inline]
    pub fn rotates(self) -> bool {
        matches!(self, AblationMode::Full | AblationMode::NoTd)
    }

    /// Whether the feature network sees the event age as a fourth input.
    #[inline]
    pub fn age_input(self) -> bool {
        matches!(self, AblationMode::Pointnet)
    }

    /// Only modes with the decay term admit the one-event recursion.
    #[inline]
    pub fn is_recursive(self) -> bool {
        self.decays()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AblationMode::Full => "full",
            AblationMode::NoTd => "no_td",
            AblationMode::NoTr => "no_tr",
            AblationMode::NoAll => "no_all",
            AblationMode::Pointnet => "pointnet",
        }
    }

    pub(crate) fn to_byte(self) -> u8 {
        match self {
            AblationMode::Full => 0,
            AblationMode::NoTd => 1,
            AblationMode::NoTr => 2,
            AblationMode::NoAll => 3,
            AblationMode::Pointnet => 4,
        }
    }

    pub(crate) fn from_byte(b: u8) -> Option<Self> {
        Self::ALL.get(b as usize).copied()
    }
}

impl fmt::Display for AblationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AblationMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.replace('-', "_").to_ascii_lowercase().as_str() {
            "full" => Ok(AblationMode::Full),
            "no_td" => Ok(AblationMode::NoTd),
            "no_tr" | "no_rotation" => Ok(AblationMode::NoTr),
            "no_all" => Ok(AblationMode::NoAll),
            "pointnet" => Ok(AblationMode::Pointnet),
            other => Err(format!("unknown ablation mode `{other}`")),
        }
    }
}

/// One complex channel in polar form. Zero magnitude implies phase 0.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct ChannelCode<R> {
    pub magnitude: R,
    pub phase: R,
}

impl<R: Real> ChannelCode<R> {
    pub fn new(magnitude: R, phase: R) -> Self {
        if magnitude <= R::zero() {
            return Self::zero();
        }
        Self {
            magnitude,
            phase: R::from_f64(wrap_phase(phase.to_f64())),
        }
    }

    pub fn zero() -> Self {
        Self {
            magnitude: R::zero(),
            phase: R::zero(),
        }
    }

    /// Maps a real feature onto the sign phase: `|r|` at 0 or π.
    #[inline]
    pub fn from_real(r: R) -> Self {
        if r == R::zero() {
            Self::zero()
        } else if r > R::zero() {
            Self {
                magnitude: r,
                phase: R::zero(),
            }
        } else {
            Self {
                magnitude: -r,
                phase: R::from_f64(PI),
            }
        }
    }

    /// `(magnitude·cos(phase), magnitude·sin(phase))`.
    #[inline]
    pub fn to_pair(self) -> (R, R) {
        let m = self.magnitude.to_f64();
        let (s, c) = self.phase.to_f64().sin_cos();
        (R::from_f64(m * c), R::from_f64(m * s))
    }

    pub fn cast<S: Real>(self) -> ChannelCode<S> {
        ChannelCode {
            magnitude: S::from_f64(self.magnitude.to_f64()),
            phase: S::from_f64(self.phase.to_f64()),
        }
    }
}

/// A K-channel coded feature.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct CodedVector<R> {
    pub channels: Vec<ChannelCode<R>>,
}

impl<R: Real> CodedVector<R> {
    pub fn zeros(k: usize) -> Self {
        Self {
            channels: vec![ChannelCode::zero(); k],
        }
    }

    pub fn from_reals(values: &[R]) -> Self {
        Self {
            channels: values.iter().map(|&r| ChannelCode::from_real(r)).collect(),
        }
    }

    #[inline]
    pub fn k(&self) -> usize {
        self.channels.len()
    }

    pub fn is_zero(&self) -> bool {
        self.channels.iter().all(|c| c.magnitude == R::zero())
    }

    pub fn cast<S: Real>(&self) -> CodedVector<S> {
        CodedVector {
            channels: self.channels.iter().map(|c| c.cast()).collect(),
        }
    }

    /// Largest per-channel distance `|a_k - b_k|` in the complex plane.
    pub fn max_deviation<S: Real>(&self, other: &CodedVector<S>) -> Result<f64, CodingError> {
        check_dims(self.k(), other.k())?;
        Ok(self
            .channels
            .iter()
            .zip(&other.channels)
            .map(|(a, b)| {
                let (ar, ai) = polar_to_pair(a.magnitude.to_f64(), a.phase.to_f64());
                let (br, bi) = polar_to_pair(b.magnitude.to_f64(), b.phase.to_f64());
                (ar - br).hypot(ai - bi)
            })
            .fold(0.0, f64::max))
    }
}

fn check_dims(left: usize, right: usize) -> Result<(), CodingError> {
    if left != right {
        Err(CodingError::DimensionMismatch { left, right })
    } else {
        Ok(())
    }
}

#[inline]
fn polar_to_pair(m: f64, phase: f64) -> (f64, f64) {
    let (s, c) = phase.sin_cos();
    (m * c, m * s)
}

/// Reduces a phase into `[0, 2π)`.
#[inline]
pub fn wrap_phase(phase: f64) -> f64 {
    let w = phase.rem_euclid(TAU);
    if w >= TAU {
        0.0
    } else {
        w
    }
}

/// Magnitude lost after `dt` µs.
#[inline]
pub fn decay_amount(dt: u64, tau: u64) -> f64 {
    dt as f64 / tau as f64
}

/// Rotation angle after `dt` µs. Whole windows are removed in integer
/// arithmetic first so long ages do not lose phase precision.
#[inline]
pub fn rotation_angle(dt: u64, tau: u64) -> f64 {
    TAU * ((dt % tau) as f64 / tau as f64)
}

/// Codes one channel by age `dt` under `mode`. All intermediate arithmetic
/// is `f64`; the result is narrowed once.
#[inline]
pub fn code_channel<R: Real>(c: ChannelCode<R>, dt: u64, tau: u64, mode: AblationMode) -> ChannelCode<R> {
    let mut m = c.magnitude.to_f64();
    if mode.decays() {
        m = (m - decay_amount(dt, tau)).max(0.0);
    }
    if m <= 0.0 {
        return ChannelCode::zero();
    }
    let mut phase = c.phase.to_f64();
    if mode.rotates() {
        phase = wrap_phase(phase - rotation_angle(dt, tau));
    }
    let phase = R::from_f64(phase);
    ChannelCode {
        magnitude: R::from_f64(m),
        phase: if phase.to_f64() >= TAU { R::zero() } else { phase },
    }
}

/// Applies decay and rotation for age `dt` to every channel.
pub fn temporal_code<R: Real>(z: &CodedVector<R>, dt: u64, tau: u64) -> CodedVector<R> {
    temporal_code_with(z, dt, tau, AblationMode::Full)
}

pub fn temporal_code_with<R: Real>(z: &CodedVector<R>, dt: u64, tau: u64, mode: AblationMode) -> CodedVector<R> {
    assert!(tau > 0, "tau must be positive");
    CodedVector {
        channels: z.channels.iter().map(|&c| code_channel(c, dt, tau, mode)).collect(),
    }
}

/// Codes by `a` then by `b`; agrees with coding by `a + b`.
pub fn compose_code<R: Real>(z: &CodedVector<R>, a: u64, b: u64, tau: u64) -> CodedVector<R> {
    temporal_code(&temporal_code(z, a, tau), b, tau)
}

/// Per channel, the operand with the larger magnitude; ties go to `b`,
/// the newer operand.
pub fn complex_max<R: Real>(a: &CodedVector<R>, b: &CodedVector<R>) -> Result<CodedVector<R>, CodingError> {
    check_dims(a.k(), b.k())?;
    Ok(CodedVector {
        channels: a
            .channels
            .iter()
            .zip(&b.channels)
            .map(|(x, y)| if y.magnitude >= x.magnitude { *y } else { *x })
            .collect(),
    })
}

/// Left fold of [`complex_max`]; `None` for an empty input.
pub fn complex_max_all<'a, R: Real, I>(vectors: I) -> Result<Option<CodedVector<R>>, CodingError>
where
    I: IntoIterator<Item = &'a CodedVector<R>>,
{
    let mut acc: Option<CodedVector<R>> = None;
    for v in vectors {
        acc = Some(match acc {
            None => v.clone(),
            Some(a) => complex_max(&a, v)?,
        });
    }
    Ok(acc)
}

/// Rectangular layout consumed by the heads: channel k occupies
/// positions `2k` (real part) and `2k + 1` (imaginary part).
pub fn to_real_pairs<R: Real>(v: &CodedVector<R>) -> Vec<R> {
    let mut out = Vec::with_capacity(2 * v.k());
    for c in &v.channels {
        let (re, im) = c.to_pair();
        out.push(re);
        out.push(im);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn single(m: f64, phase: f64) -> CodedVector<f64> {
        CodedVector {
            channels: vec![ChannelCode::new(m, phase)],
        }
    }

    #[test]
    fn zero_age_is_identity() {
        let z = single(0.8, 0.0);
        assert_eq!(temporal_code(&z, 0, 1_000), z);
    }

    #[test]
    fn full_window_age_clamps_to_zero() {
        let z = single(0.5, 0.0);
        assert_eq!(temporal_code(&z, 1_000, 1_000), CodedVector::zeros(1));
    }

    #[test]
    fn quarter_window_decays_and_rotates() {
        let out = temporal_code(&single(0.9, 0.0), 250, 1_000);
        let c = out.channels[0];
        assert!((c.magnitude - 0.65).abs() < 1e-15);
        assert!((c.phase - 3.0 * FRAC_PI_2).abs() < 1e-15);
    }

    #[test]
    fn larger_magnitude_wins() {
        let m = complex_max(&single(0.3, 0.0), &single(0.7, PI)).unwrap();
        assert_eq!(m, single(0.7, PI));
    }

    #[test]
    fn tie_selects_newer_operand() {
        let m = complex_max(&single(0.5, 0.1), &single(0.5, 2.0)).unwrap();
        assert_eq!(m, single(0.5, 2.0));
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let err = complex_max(&CodedVector::<f64>::zeros(2), &CodedVector::zeros(3)).unwrap_err();
        assert_eq!(err, CodingError::DimensionMismatch { left: 2, right: 3 });
    }

    #[test]
    fn compose_identity_and_full_decay() {
        let z = single(0.4, 1.0);
        assert_eq!(compose_code(&z, 0, 0, 100), z);
        let one = single(1.0, 0.0);
        assert_eq!(compose_code(&one, 50, 50, 100), CodedVector::zeros(1));
    }

    #[test]
    fn real_pairs_layout() {
        let v = CodedVector {
            channels: vec![ChannelCode::new(1.0, 0.0), ChannelCode::new(1.0, FRAC_PI_2)],
        };
        let p = to_real_pairs(&v);
        assert_eq!(&p[0..2], &[1.0, 0.0]);
        assert!(p[2].abs() < 1e-15 && (p[3] - 1.0).abs() < 1e-15);
        assert!(to_real_pairs(&CodedVector::<f64>::zeros(4)).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn negative_reals_sit_at_pi() {
        let c = ChannelCode::from_real(-0.25f64);
        assert_eq!(c.magnitude, 0.25);
        assert_eq!(c.phase, PI);
        assert_eq!(ChannelCode::from_real(-0.0f64), ChannelCode::zero());
    }

    #[test]
    fn ablation_terms() {
        let z = single(0.9, 0.0);
        let no_td = temporal_code_with(&z, 250, 1_000, AblationMode::NoTd);
        assert_eq!(no_td.channels[0].magnitude, 0.9);
        let no_tr = temporal_code_with(&z, 250, 1_000, AblationMode::NoTr);
        assert_eq!(no_tr.channels[0].phase, 0.0);
        assert!((no_tr.channels[0].magnitude - 0.65).abs() < 1e-15);
        assert_eq!(temporal_code_with(&z, 999, 1_000, AblationMode::NoAll), z);
        assert!(AblationMode::Full.is_recursive() && AblationMode::NoTr.is_recursive());
        assert!(!AblationMode::NoTd.is_recursive() && !AblationMode::NoAll.is_recursive());
    }

    #[test]
    fn phase_is_wrapped_below_two_pi() {
        assert_eq!(wrap_phase(-1e-300), 0.0);
        let c = code_channel(ChannelCode::new(0.5f32, 0.0), 1, 1_000_000, AblationMode::Full);
        assert!(c.phase.to_f64() < TAU);
    }
}
