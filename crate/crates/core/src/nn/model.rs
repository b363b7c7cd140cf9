use std::io::{Read, Write};

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::layer::{Activation, BatchNorm, Dense, Layer, LayerGrads, Mlp};
use super::NnError;
use crate::coding::AblationMode;
use crate::events::{Event, SensorGeometry};

pub const WEIGHTS_MAGIC: &[u8; 4] = b"EVNW";
pub const WEIGHTS_VERSION: u32 = 1;

/// Layer widths and coding setup for the four sub-networks.
///
/// `mlp1` maps an event to its local feature, `mlp2` maps the local feature
/// to the K-channel feature (last width is K), `mlp3` is the global head
/// and `mlp4` the per-event head over `[local ‖ global]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub geometry: SensorGeometry,
    pub tau_us: u64,
    #[serde(default)]
    pub mode: AblationMode,
    pub mlp1: Vec<usize>,
    pub mlp2: Vec<usize>,
    #[serde(default)]
    pub mlp3: Option<Vec<usize>>,
    #[serde(default)]
    pub mlp4: Option<Vec<usize>>,
}

impl ModelConfig {
    /// PointNet-family widths: mlp1 (64, 64), mlp2 (64, 128, K),
    /// mlp3 (512, 256, out), mlp4 (512, 256, 128, classes).
    pub fn full_width(geometry: SensorGeometry, k: usize, global_out: usize, classes: usize) -> Self {
        Self {
            geometry,
            tau_us: 32_000,
            mode: AblationMode::Full,
            mlp1: vec![64, 64],
            mlp2: vec![64, 128, k],
            mlp3: Some(vec![512, 256, global_out]),
            mlp4: Some(vec![512, 256, 128, classes]),
        }
    }

    /// Same feature network with narrower heads for single-core training:
    /// a 2-d motion head and a 2-class per-event head.
    pub fn desk(geometry: SensorGeometry, k: usize) -> Self {
        Self {
            mlp3: Some(vec![256, 128, 2]),
            mlp4: Some(vec![128, 64, 2]),
            ..Self::full_width(geometry, k, 2, 2)
        }
    }

    pub fn k(&self) -> usize {
        *self.mlp2.last().unwrap_or(&0)
    }

    pub fn local_dim(&self) -> usize {
        *self.mlp1.last().unwrap_or(&0)
    }

    /// `(x, y, p)`, plus the normalized age when the mode feeds it.
    pub fn input_dim(&self) -> usize {
        if self.mode.age_input() {
            4
        } else {
            3
        }
    }

    pub fn validate(&self) -> Result<(), NnError> {
        self.geometry.validate().map_err(|e| NnError::Config(e.to_string()))?;
        if self.tau_us == 0 {
            return Err(NnError::Config("tau_us must be positive".into()));
        }
        let named = [
            ("mlp1", Some(&self.mlp1)),
            ("mlp2", Some(&self.mlp2)),
            ("mlp3", self.mlp3.as_ref()),
            ("mlp4", self.mlp4.as_ref()),
        ];
        for (name, sizes) in named {
            if let Some(sizes) = sizes {
                if sizes.is_empty() || sizes.contains(&0) {
                    return Err(NnError::Config(format!("{name} needs non-zero layer widths")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpModel {
    pub config: ModelConfig,
    pub mlp1: Mlp,
    pub mlp2: Mlp,
    pub mlp3: Option<Mlp>,
    pub mlp4: Option<Mlp>,
}

/// Gradients in the same layout as [`MlpModel::params_mut`].
#[derive(Clone, Debug, PartialEq)]
pub struct ModelGrads {
    pub mlp1: Vec<LayerGrads>,
    pub mlp2: Vec<LayerGrads>,
    pub mlp3: Option<Vec<LayerGrads>>,
    pub mlp4: Option<Vec<LayerGrads>>,
}

impl ModelGrads {
    pub fn slices(&self) -> Vec<&[f64]> {
        let groups = [
            Some(&self.mlp1),
            Some(&self.mlp2),
            self.mlp3.as_ref(),
            self.mlp4.as_ref(),
        ];
        groups
            .into_iter()
            .flatten()
            .flat_map(|g| g.iter().flat_map(LayerGrads::slices))
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }
}

impl MlpModel {
    /// Hidden layers are ReLU with batch norm. mlp1 ends in ReLU + BN, mlp2
    /// in BN + tanh, and both heads end in a plain affine output layer.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, NnError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let local = config.local_dim();
        let k = config.k();
        let mlp1 = Mlp::new(config.input_dim(), &config.mlp1, Activation::Relu, true, &mut rng);
        let mlp2 = Mlp::new(local, &config.mlp2, Activation::Tanh, true, &mut rng);
        let mlp3 = config
            .mlp3
            .as_ref()
            .map(|s| Mlp::new(2 * k, s, Activation::Identity, false, &mut rng));
        let mlp4 = config
            .mlp4
            .as_ref()
            .map(|s| Mlp::new(local + 2 * k, s, Activation::Identity, false, &mut rng));
        Ok(Self {
            config,
            mlp1,
            mlp2,
            mlp3,
            mlp4,
        })
    }

    pub fn k(&self) -> usize {
        self.config.k()
    }

    pub fn local_dim(&self) -> usize {
        self.config.local_dim()
    }

    pub fn classes(&self) -> Option<usize> {
        self.mlp4.as_ref().map(Mlp::out_dim)
    }

    pub fn global_out(&self) -> Option<usize> {
        self.mlp3.as_ref().map(Mlp::out_dim)
    }

    /// Input row for `e` observed `age_us` before the window anchor:
    /// `x` and `y` scaled to `[-1, 1]` over the model geometry, polarity as
    /// ±1, and `age / tau` when the mode feeds the age.
    pub fn encode_into(&self, e: &Event, age_us: u64, row: &mut [f64]) {
        let g = self.config.geometry;
        row[0] = g.normalize_x(e.x);
        row[1] = g.normalize_y(e.y);
        row[2] = e.p.sign() as f64;
        if self.config.mode.age_input() {
            row[3] = age_us as f64 / self.config.tau_us as f64;
        }
    }

    pub fn encode(&self, events: &[Event], anchor_t: u64) -> Array2<f64> {
        let mut x = Array2::zeros((events.len(), self.config.input_dim()));
        for (e, mut row) in events.iter().zip(x.rows_mut()) {
            self.encode_into(e, anchor_t.saturating_sub(e.t), row.as_slice_mut().expect("row-major"));
        }
        x
    }

    /// Inference-mode local features (mlp1) and K-channel features (mlp2)
    /// for a batch of encoded inputs.
    pub fn features(&self, input: Array2<f64>) -> Result<(Array2<f64>, Array2<f64>), NnError> {
        let local = self.mlp1.infer(input)?;
        let z = self.mlp2.infer(local.clone())?;
        Ok((local, z))
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = self.mlp1.params_mut();
        out.extend(self.mlp2.params_mut());
        if let Some(m) = &mut self.mlp3 {
            out.extend(m.params_mut());
        }
        if let Some(m) = &mut self.mlp4 {
            out.extend(m.params_mut());
        }
        out
    }

    pub fn param_lengths(&mut self) -> Vec<usize> {
        self.params_mut().iter().map(|s| s.len()).collect()
    }

    pub fn param_count(&mut self) -> usize {
        self.param_lengths().iter().sum()
    }

    pub fn zero_grads(&self) -> ModelGrads {
        ModelGrads {
            mlp1: self.mlp1.zero_grads(),
            mlp2: self.mlp2.zero_grads(),
            mlp3: self.mlp3.as_ref().map(Mlp::zero_grads),
            mlp4: self.mlp4.as_ref().map(Mlp::zero_grads),
        }
    }

    /// Versioned little-endian weights file.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(WEIGHTS_MAGIC);
        buf.extend_from_slice(&WEIGHTS_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.config.geometry.width as u32).to_le_bytes());
        buf.extend_from_slice(&(self.config.geometry.height as u32).to_le_bytes());
        buf.extend_from_slice(&self.config.tau_us.to_le_bytes());
        buf.push(self.config.mode.to_byte());
        for mlp in [
            Some(&self.mlp1),
            Some(&self.mlp2),
            self.mlp3.as_ref(),
            self.mlp4.as_ref(),
        ] {
            match mlp {
                None => buf.push(0),
                Some(m) => {
                    buf.push(1);
                    write_mlp(&mut buf, m);
                }
            }
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, NnError> {
        let mut r = Cursor { bytes, pos: 0 };
        if r.take(4)? != WEIGHTS_MAGIC {
            return Err(NnError::Format("missing EVNW magic".into()));
        }
        let version = r.u32()?;
        if version != WEIGHTS_VERSION {
            return Err(NnError::Format(format!("unsupported version {version}")));
        }
        let width = r.u32()?;
        let height = r.u32()?;
        if width > u16::MAX as u32 || height > u16::MAX as u32 {
            return Err(NnError::Format(format!("geometry {width}x{height} too large")));
        }
        let geometry = SensorGeometry::new(width as u16, height as u16)?;
        let tau_us = r.u64()?;
        let mode = AblationMode::from_byte(r.u8()?).ok_or_else(|| NnError::Format("unknown ablation mode".into()))?;
        let mut mlps = Vec::with_capacity(4);
        for _ in 0..4 {
            mlps.push(match r.u8()? {
                0 => None,
                1 => Some(read_mlp(&mut r)?),
                b => return Err(NnError::Format(format!("bad presence flag {b}"))),
            });
        }
        if r.pos != bytes.len() {
            return Err(NnError::Format("trailing bytes".into()));
        }
        let mlp4 = mlps.pop().flatten();
        let mlp3 = mlps.pop().flatten();
        let mlp2 = mlps
            .pop()
            .flatten()
            .ok_or_else(|| NnError::Format("mlp2 missing".into()))?;
        let mlp1 = mlps
            .pop()
            .flatten()
            .ok_or_else(|| NnError::Format("mlp1 missing".into()))?;
        let config = ModelConfig {
            geometry,
            tau_us,
            mode,
            mlp1: mlp1.sizes(),
            mlp2: mlp2.sizes(),
            mlp3: mlp3.as_ref().map(Mlp::sizes),
            mlp4: mlp4.as_ref().map(Mlp::sizes),
        };
        config.validate()?;
        let model = Self {
            config,
            mlp1,
            mlp2,
            mlp3,
            mlp4,
        };
        model.check_wiring()?;
        Ok(model)
    }

    fn check_wiring(&self) -> Result<(), NnError> {
        let k2 = 2 * self.k();
        let local = self.local_dim();
        let expect = [
            (self.mlp1.in_dim(), self.config.input_dim()),
            (self.mlp2.in_dim(), local),
            (self.mlp3.as_ref().map_or(k2, Mlp::in_dim), k2),
            (self.mlp4.as_ref().map_or(local + k2, Mlp::in_dim), local + k2),
        ];
        for (got, expected) in expect {
            if got != expected {
                return Err(NnError::Format(format!(
                    "layer input width {got} does not match expected {expected}"
                )));
            }
        }
        Ok(())
    }

    pub fn save<W: Write>(&self, mut writer: W) -> Result<(), NnError> {
        writer.write_all(&self.to_bytes())?;
        writer.flush()?;
        Ok(())
    }

    pub fn load<R: Read>(mut reader: R) -> Result<Self, NnError> {
        let mut bytes = Vec::new();
        reader.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    /// First eight bytes of the SHA-256 of the serialized weights.
    pub fn checksum(&self) -> u64 {
        let digest = Sha256::digest(self.to_bytes());
        u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
    }
}

fn put_f64s<'a>(buf: &mut Vec<u8>, values: impl IntoIterator<Item = &'a f64>) {
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

fn write_mlp(buf: &mut Vec<u8>, mlp: &Mlp) {
    buf.extend_from_slice(&(mlp.layers.len() as u32).to_le_bytes());
    for layer in &mlp.layers {
        buf.extend_from_slice(&(layer.dense.in_dim() as u32).to_le_bytes());
        buf.extend_from_slice(&(layer.dense.out_dim() as u32).to_le_bytes());
        buf.push(layer.activation.to_byte());
        buf.push(layer.bn.is_some() as u8);
        put_f64s(buf, layer.dense.weights.iter());
        put_f64s(buf, layer.dense.bias.iter());
        if let Some(bn) = &layer.bn {
            put_f64s(buf, bn.gamma.iter());
            put_f64s(buf, bn.beta.iter());
            put_f64s(buf, bn.running_mean.iter());
            put_f64s(buf, bn.running_var.iter());
            put_f64s(buf, [bn.eps].iter());
        }
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NnError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| NnError::Format("truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, NnError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, NnError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, NnError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, NnError> {
        let raw = self.take(
            n.checked_mul(8)
                .ok_or_else(|| NnError::Format("size overflow".into()))?,
        )?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

fn read_mlp(r: &mut Cursor<'_>) -> Result<Mlp, NnError> {
    let n = r.u32()? as usize;
    if n == 0 {
        return Err(NnError::Format("empty mlp".into()));
    }
    let mut layers = Vec::with_capacity(n);
    for _ in 0..n {
        let in_dim = r.u32()? as usize;
        let out_dim = r.u32()? as usize;
        let activation = Activation::from_byte(r.u8()?).ok_or_else(|| NnError::Format("unknown activation".into()))?;
        let has_bn = r.u8()? != 0;
        let weights = Array2::from_shape_vec((out_dim, in_dim), r.f64s(out_dim * in_dim)?)
            .map_err(|e| NnError::Format(e.to_string()))?;
        let bias = Array1::from(r.f64s(out_dim)?);
        let bn = if has_bn {
            Some(BatchNorm {
                gamma: Array1::from(r.f64s(out_dim)?),
                beta: Array1::from(r.f64s(out_dim)?),
                running_mean: Array1::from(r.f64s(out_dim)?),
                running_var: Array1::from(r.f64s(out_dim)?),
                eps: r.f64s(1)?[0],
            })
        } else {
            None
        };
        if let Some(prev) = layers.last().map(|l: &Layer| l.dense.out_dim()) {
            if prev != in_dim {
                return Err(NnError::Format(format!("layer chain breaks: {prev} -> {in_dim}")));
            }
        }
        layers.push(Layer {
            dense: Dense { weights, bias },
            bn,
            activation,
        });
    }
    Ok(Mlp { layers })
}
