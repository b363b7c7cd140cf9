//! Per-pixel feature tables.
//!
//! Event inputs are discrete: `W·H·2` combinations of position and
//! polarity. The feature network is evaluated once per combination after
//! training and the results are served by indexing.
//!
//! The global table stores one signed real per channel. Its sign carries
//! the phase (0 or π), so a channel costs one scalar. The local table holds
//! mlp1 outputs for the per-event head.

use std::io::{Read, Write};

use ndarray::Array2;
use thiserror::Error;

use crate::coding::{ChannelCode, CodedVector};
use crate::events::{Event, Polarity, SensorGeometry};
use crate::nn::{folded_forward, FoldedLayer, MlpModel, NnError};
use crate::real::Real;

pub const LUT_MAGIC: &[u8; 4] = b"ELUT";
pub const LUT_VERSION: u32 = 1;
const BUILD_CHUNK: usize = 2048;

#[derive(Debug, Error)]
pub enum LutError {
    #[error(transparent)]
    Model(#[from] NnError),
    #[error("non-finite feature at cell ({x}, {y}, {p:?}), channel {channel}")]
    NonFinite {
        x: u16,
        y: u16,
        p: Polarity,
        channel: usize,
    },
    #[error("({x}, {y}) lies outside the {width}x{height} table")]
    OutOfRange { x: u16, y: u16, width: u16, height: u16 },
    #[error("the model feeds event age to its feature network, so features are not per-cell")]
    AgeDependent,
    #[error("bad table file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LutKind {
    /// Signed K-channel features (mlp1 then mlp2).
    Global,
    /// Local features (mlp1 only).
    Local,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureLut<R> {
    geometry: SensorGeometry,
    channels: usize,
    kind: LutKind,
    table: Vec<R>,
    checksum: u64,
}

/// Table of K-channel features for every cell of `geometry`.
///
/// Coordinates are normalized with the model's geometry, so `geometry`
/// normally equals it. Stored magnitudes are clamped strictly below one.
pub fn build_lut<R: Real>(model: &MlpModel, geometry: SensorGeometry) -> Result<FeatureLut<R>, LutError> {
    let mut layers = model.mlp1.fold()?;
    layers.extend(model.mlp2.fold()?);
    build(model, geometry, &layers, LutKind::Global)
}

/// Table of mlp1 outputs for every cell of `geometry`.
pub fn build_local_lut<R: Real>(model: &MlpModel, geometry: SensorGeometry) -> Result<FeatureLut<R>, LutError> {
    let layers = model.mlp1.fold()?;
    build(model, geometry, &layers, LutKind::Local)
}

fn build<R: Real>(
    model: &MlpModel,
    geometry: SensorGeometry,
    layers: &[FoldedLayer],
    kind: LutKind,
) -> Result<FeatureLut<R>, LutError> {
    geometry.validate().map_err(NnError::from)?;
    if model.config.mode.age_input() {
        return Err(LutError::AgeDependent);
    }
    let channels = layers.last().expect("non-empty mlp").weights.nrows();
    let cells = geometry.cells();
    let mut table = Vec::with_capacity(cells * channels);
    let bound = R::below_one();
    let mut start = 0;
    while start < cells {
        let end = (start + BUILD_CHUNK).min(cells);
        let mut input = Array2::zeros((end - start, model.config.input_dim()));
        for (cell, mut row) in (start..end).zip(input.rows_mut()) {
            let (x, y, p) = geometry.cell_coords(cell);
            model.encode_into(&Event::new(x, y, p, 0), 0, row.as_slice_mut().expect("row-major"));
        }
        let out = folded_forward(layers, &input);
        for (cell, row) in (start..end).zip(out.rows()) {
            for (channel, &v) in row.iter().enumerate() {
                if !v.is_finite() {
                    let (x, y, p) = geometry.cell_coords(cell);
                    return Err(LutError::NonFinite { x, y, p, channel });
                }
                let r = R::from_f64(v);
                table.push(match kind {
                    LutKind::Global => r.max(-bound).min(bound),
                    LutKind::Local => r,
                });
            }
        }
        start = end;
    }
    let lut = FeatureLut {
        geometry,
        channels,
        kind,
        table,
        checksum: model.checksum(),
    };
    assert_eq!(
        lut.table_bytes(),
        geometry.cells() * channels * R::BYTES,
        "table size must be W·H·2·K entries"
    );
    Ok(lut)
}

impl<R: Real> FeatureLut<R> {
    pub fn geometry(&self) -> SensorGeometry {
        self.geometry
    }

    /// Values per cell: K for a global table, the local width otherwise.
    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn kind(&self) -> LutKind {
        self.kind
    }

    /// Checksum of the weights the table was built from.
    pub fn checksum(&self) -> u64 {
        self.checksum
    }

    /// `W·H·2·channels·sizeof(R)`.
    pub fn table_bytes(&self) -> usize {
        self.table.len() * R::BYTES
    }

    pub fn as_slice(&self) -> &[R] {
        &self.table
    }

    /// Stored values of a cell, by flat cell index.
    #[inline(always)]
    pub fn cell_row(&self, cell: usize) -> &[R] {
        let start = cell * self.channels;
        &self.table[start..start + self.channels]
    }

    pub fn row(&self, x: u16, y: u16, p: Polarity) -> Result<&[R], LutError> {
        if !self.geometry.contains(x, y) {
            return Err(LutError::OutOfRange {
                x,
                y,
                width: self.geometry.width,
                height: self.geometry.height,
            });
        }
        Ok(self.cell_row(self.geometry.cell_index(x, y, p)))
    }

    /// Same table in another precision. Widening is exact.
    pub fn cast<S: Real>(&self) -> FeatureLut<S> {
        FeatureLut {
            geometry: self.geometry,
            channels: self.channels,
            kind: self.kind,
            table: self.table.iter().map(|&v| S::from_f64(v.to_f64())).collect(),
            checksum: self.checksum,
        }
    }

    /// The stored feature of a cell as a coded vector (sign phase).
    pub fn lookup(&self, x: u16, y: u16, p: Polarity) -> Result<CodedVector<R>, LutError> {
        Ok(CodedVector {
            channels: self.row(x, y, p)?.iter().map(|&r| ChannelCode::from_real(r)).collect(),
        })
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<(), LutError> {
        w.write_all(LUT_MAGIC)?;
        w.write_all(&LUT_VERSION.to_le_bytes())?;
        w.write_all(&(self.geometry.width as u32).to_le_bytes())?;
        w.write_all(&(self.geometry.height as u32).to_le_bytes())?;
        w.write_all(&(self.channels as u32).to_le_bytes())?;
        w.write_all(&[
            match self.kind {
                LutKind::Global => 0,
                LutKind::Local => 1,
            },
            R::BYTES as u8,
        ])?;
        w.write_all(&self.checksum.to_le_bytes())?;
        let mut buf = Vec::with_capacity(self.table_bytes());
        for &v in &self.table {
            if R::BYTES == 4 {
                buf.extend_from_slice(&(v.to_f64() as f32).to_le_bytes());
            } else {
                buf.extend_from_slice(&v.to_f64().to_le_bytes());
            }
        }
        w.write_all(&buf)?;
        w.flush()?;
        Ok(())
    }

    pub fn read<Rd: Read>(mut r: Rd) -> Result<Self, LutError> {
        let mut header = [0u8; 4 + 4 + 12 + 2 + 8];
        r.read_exact(&mut header)?;
        if &header[0..4] != LUT_MAGIC {
            return Err(LutError::Format("missing ELUT magic".into()));
        }
        let u32_at = |o: usize| u32::from_le_bytes(header[o..o + 4].try_into().unwrap());
        let version = u32_at(4);
        if version != LUT_VERSION {
            return Err(LutError::Format(format!("unsupported version {version}")));
        }
        let (width, height, channels) = (u32_at(8), u32_at(12), u32_at(16) as usize);
        if width > u16::MAX as u32 || height > u16::MAX as u32 {
            return Err(LutError::Format(format!("geometry {width}x{height} too large")));
        }
        let geometry = SensorGeometry::new(width as u16, height as u16).map_err(NnError::from)?;
        let kind = match header[20] {
            0 => LutKind::Global,
            1 => LutKind::Local,
            b => return Err(LutError::Format(format!("unknown table kind {b}"))),
        };
        if header[21] as usize != R::BYTES {
            return Err(LutError::Format(format!(
                "table stores {}-byte reals, reader expects {}",
                header[21],
                R::BYTES
            )));
        }
        let checksum = u64::from_le_bytes(header[22..30].try_into().unwrap());
        let mut body = Vec::new();
        r.read_to_end(&mut body)?;
        let expected = geometry.cells() * channels * R::BYTES;
        if body.len() != expected {
            return Err(LutError::Format(format!(
                "table body has {} bytes, expected {expected}",
                body.len()
            )));
        }
        let table = body
            .chunks_exact(R::BYTES)
            .map(|c| {
                if R::BYTES == 4 {
                    R::from_f64(f32::from_le_bytes(c.try_into().unwrap()) as f64)
                } else {
                    R::from_f64(f64::from_le_bytes(c.try_into().unwrap()))
                }
            })
            .collect();
        Ok(Self {
            geometry,
            channels,
            kind,
            table,
            checksum,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coding::AblationMode;
    use crate::nn::ModelConfig;

    fn model(seed: u64) -> MlpModel {
        MlpModel::new(
            ModelConfig {
                geometry: SensorGeometry::new(2, 2).unwrap(),
                tau_us: 1_000,
                mode: AblationMode::Full,
                mlp1: vec![8, 6],
                mlp2: vec![8, 5],
                mlp3: None,
                mlp4: None,
            },
            seed,
        )
        .unwrap()
    }

    #[test]
    fn every_cell_matches_direct_forward() {
        let m = model(1);
        let g = m.config.geometry;
        let lut = build_lut::<f32>(&m, g).unwrap();
        assert_eq!(lut.as_slice().len(), 8 * 5);
        for cell in 0..g.cells() {
            let (x, y, p) = g.cell_coords(cell);
            let (_, z) = m.features(m.encode(&[Event::new(x, y, p, 0)], 0)).unwrap();
            for (a, b) in lut.row(x, y, p).unwrap().iter().zip(z.row(0)) {
                assert!((*a as f64 - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn zero_model_gives_zero_magnitudes() {
        let mut m = model(2);
        for p in m.params_mut() {
            p.iter_mut().for_each(|v| *v = 0.0);
        }
        let lut = build_lut::<f64>(&m, m.config.geometry).unwrap();
        assert!(lut.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rebuild_is_byte_identical_and_round_trips() {
        let m = model(3);
        let a = build_lut::<f32>(&m, m.config.geometry).unwrap();
        let b = build_lut::<f32>(&m, m.config.geometry).unwrap();
        let (mut ba, mut bb) = (Vec::new(), Vec::new());
        a.write(&mut ba).unwrap();
        b.write(&mut bb).unwrap();
        assert_eq!(ba, bb);
        assert_eq!(a.checksum(), m.checksum());
        assert_eq!(FeatureLut::<f32>::read(&ba[..]).unwrap(), a);
        assert!(FeatureLut::<f64>::read(&ba[..]).is_err());
    }

    #[test]
    fn out_of_range_lookup_is_an_error() {
        let m = model(4);
        let lut = build_lut::<f32>(&m, m.config.geometry).unwrap();
        assert!(matches!(
            lut.lookup(2, 0, Polarity::Positive),
            Err(LutError::OutOfRange { .. })
        ));
        assert_eq!(
            lut.lookup(1, 1, Polarity::Negative).unwrap(),
            lut.lookup(1, 1, Polarity::Negative).unwrap()
        );
    }

    #[test]
    fn saturated_features_stay_below_one() {
        let mut m = model(5);
        m.mlp2.layers.last_mut().unwrap().dense.bias.fill(1e3);
        let lut = build_lut::<f32>(&m, m.config.geometry).unwrap();
        assert!(lut.as_slice().iter().all(|v| v.abs() < 1.0));
    }

    #[test]
    fn local_table_holds_mlp1_outputs() {
        let m = model(6);
        let lut = build_local_lut::<f64>(&m, m.config.geometry).unwrap();
        assert_eq!(lut.channels(), 6);
        let (local, _) = m
            .features(m.encode(&[Event::new(1, 0, Polarity::Positive, 0)], 0))
            .unwrap();
        for (a, b) in lut.row(1, 0, Polarity::Positive).unwrap().iter().zip(local.row(0)) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
