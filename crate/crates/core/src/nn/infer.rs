use super::layer::{Activation, Mlp};
use super::NnError;

#[derive(Clone, Debug, PartialEq)]
struct DenseF32 {
    in_dim: usize,
    out_dim: usize,
    /// Row-major `out × in`.
    weights: Vec<f32>,
    bias: Vec<f32>,
    activation: Activation,
}

/// Single-vector head evaluation in `f32` with batch norm folded away.
#[derive(Clone, Debug, PartialEq)]
pub struct InferenceMlp {
    layers: Vec<DenseF32>,
}

impl InferenceMlp {
    pub fn from_mlp(mlp: &Mlp) -> Result<Self, NnError> {
        let layers = mlp
            .fold()?
            .into_iter()
            .map(|l| DenseF32 {
                in_dim: l.weights.ncols(),
                out_dim: l.weights.nrows(),
                weights: l.weights.iter().map(|&w| w as f32).collect(),
                bias: l.bias.iter().map(|&b| b as f32).collect(),
                activation: l.activation,
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().expect("non-empty mlp").out_dim
    }

    pub fn forward(&self, input: &[f32]) -> Result<Vec<f32>, NnError> {
        let mut scratch = Vec::new();
        let mut out = Vec::new();
        self.forward_into(input, &mut scratch, &mut out)?;
        Ok(out)
    }

    /// Evaluates into `out`, reusing `scratch` for the hidden activations.
    pub fn forward_into(&self, input: &[f32], scratch: &mut Vec<f32>, out: &mut Vec<f32>) -> Result<(), NnError> {
        if input.len() != self.in_dim() {
            return Err(NnError::WidthMismatch {
                expected: self.in_dim(),
                got: input.len(),
            });
        }
        out.clear();
        out.extend_from_slice(input);
        for layer in &self.layers {
            std::mem::swap(scratch, out);
            out.clear();
            for (row, &b) in layer.weights.chunks_exact(layer.in_dim).zip(&layer.bias) {
                let v = dot(row, scratch) + b;
                out.push(match layer.activation {
                    Activation::Identity => v,
                    Activation::Relu => v.max(0.0),
                    Activation::Tanh => v.tanh(),
                });
            }
        }
        Ok(())
    }
}

/// Dot product with eight independent accumulators so the compiler can keep
/// a full vector register busy.
#[inline]
pub(crate) fn dot(a: &[f32], b: &[f32]) -> f32 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f32; 8];
    let chunks = n / 8;
    for c in 0..chunks {
        let (x, y) = (&a[c * 8..c * 8 + 8], &b[c * 8..c * 8 + 8]);
        for j in 0..8 {
            acc[j] += x[j] * y[j];
        }
    }
    let mut tail = 0.0;
    for i in chunks * 8..n {
        tail += a[i] * b[i];
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}
