use ndarray::{Array1, Array2, Axis, Zip};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::NnError;

pub const BN_EPS: f64 = 1e-5;
/// Folding refuses running variances below this.
pub const MIN_FOLD_VARIANCE: f64 = 1e-12;
const TANH_BOUND: f64 = 1.0 - f64::EPSILON / 2.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    pub fn apply_scalar(self, v: f64) -> f64 {
        match self {
            Activation::Identity => v,
            Activation::Relu => v.max(0.0),
            // Keeps |tanh| strictly below one where f64 tanh would round to ±1.
            Activation::Tanh => v.tanh().clamp(-TANH_BOUND, TANH_BOUND),
        }
    }

    pub(crate) fn to_byte(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::Relu => 1,
            Activation::Tanh => 2,
        }
    }

    pub(crate) fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(Activation::Identity),
            1 => Some(Activation::Relu),
            2 => Some(Activation::Tanh),
            _ => None,
        }
    }
}

/// Fully connected layer, `y = x Wᵀ + b` with `W` stored `out × in`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            weights: Array2::zeros((out_dim, in_dim)),
            bias: Array1::zeros(out_dim),
        }
    }

    /// He-normal for ReLU layers, LeCun-normal otherwise; zero bias.
    pub fn init<R: Rng>(in_dim: usize, out_dim: usize, activation: Activation, rng: &mut R) -> Self {
        let gain = if activation == Activation::Relu { 2.0 } else { 1.0 };
        let std = (gain / in_dim.max(1) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("finite std");
        Self {
            weights: Array2::from_shape_simple_fn((out_dim, in_dim), || normal.sample(rng)),
            bias: Array1::zeros(out_dim),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.nrows()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
    pub eps: f64,
}

impl BatchNorm {
    pub fn identity(width: usize) -> Self {
        Self {
            gamma: Array1::ones(width),
            beta: Array1::zeros(width),
            running_mean: Array1::zeros(width),
            running_var: Array1::ones(width),
            eps: BN_EPS,
        }
    }
}

/// Which statistics batch norm normalizes with.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnMode {
    /// Statistics of the current batch (training).
    Batch,
    /// Running statistics (inference).
    Running,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub dense: Dense,
    pub bn: Option<BatchNorm>,
    pub activation: Activation,
}

#[derive(Clone, Debug)]
pub struct LayerTrace {
    pub input: Array2<f64>,
    pub xhat: Option<Array2<f64>>,
    pub inv_std: Option<Array1<f64>>,
    pub batch_mean: Option<Array1<f64>>,
    pub batch_var: Option<Array1<f64>>,
    pub output: Array2<f64>,
    pub mode: BnMode,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrads {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub gamma: Option<Array1<f64>>,
    pub beta: Option<Array1<f64>>,
}

impl LayerGrads {
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out = vec![
            self.weights.as_slice().expect("standard layout"),
            self.bias.as_slice().expect("standard layout"),
        ];
        if let (Some(g), Some(b)) = (&self.gamma, &self.beta) {
            out.push(g.as_slice().expect("standard layout"));
            out.push(b.as_slice().expect("standard layout"));
        }
        out
    }
}

/// Affine layer with batch norm folded in, ready for inference.
#[derive(Clone, Debug, PartialEq)]
pub struct FoldedLayer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl FoldedLayer {
    pub fn forward(&self, input: &Array2<f64>) -> Array2<f64> {
        let mut y = input.dot(&self.weights.t());
        y += &self.bias;
        let act = self.activation;
        y.mapv_inplace(|v| act.apply_scalar(v));
        y
    }
}

impl Layer {
    pub fn forward(&self, input: Array2<f64>, mode: BnMode) -> Result<LayerTrace, NnError> {
        if input.ncols() != self.dense.in_dim() {
            return Err(NnError::WidthMismatch {
                expected: self.dense.in_dim(),
                got: input.ncols(),
            });
        }
        let mut y = input.dot(&self.dense.weights.t());
        y += &self.dense.bias;
        let (mut xhat, mut inv_std, mut batch_mean, mut batch_var) = (None, None, None, None);
        if let Some(bn) = &self.bn {
            let (mean, var) = match mode {
                BnMode::Batch => {
                    let n = y.nrows().max(1) as f64;
                    let mean = y.sum_axis(Axis(0)) / n;
                    let centered = &y - &mean;
                    let var = centered.mapv(|v| v * v).sum_axis(Axis(0)) / n;
                    (mean, var)
                }
                BnMode::Running => (bn.running_mean.clone(), bn.running_var.clone()),
            };
            let istd = var.mapv(|v| 1.0 / (v + bn.eps).sqrt());
            let xh = (&y - &mean) * &istd;
            y = &xh * &bn.gamma + &bn.beta;
            xhat = Some(xh);
            inv_std = Some(istd);
            if mode == BnMode::Batch {
                batch_mean = Some(mean);
                batch_var = Some(var);
            }
        }
        let act = self.activation;
        y.mapv_inplace(|v| act.apply_scalar(v));
        Ok(LayerTrace {
            input,
            xhat,
            inv_std,
            batch_mean,
            batch_var,
            output: y,
            mode,
        })
    }

    /// Returns parameter gradients and the gradient w.r.t. the layer input.
    pub fn backward(&self, trace: &LayerTrace, d_out: &Array2<f64>) -> (LayerGrads, Array2<f64>) {
        let mut d_y = d_out.clone();
        match self.activation {
            Activation::Identity => {}
            Activation::Relu => Zip::from(&mut d_y).and(&trace.output).for_each(|d, &o| {
                if o <= 0.0 {
                    *d = 0.0;
                }
            }),
            Activation::Tanh => Zip::from(&mut d_y)
                .and(&trace.output)
                .for_each(|d, &o| *d *= 1.0 - o * o),
        }
        let (d_z, gamma, beta) = match (&self.bn, &trace.xhat, &trace.inv_std) {
            (Some(bn), Some(xhat), Some(inv_std)) => {
                let d_gamma = (&d_y * xhat).sum_axis(Axis(0));
                let d_beta = d_y.sum_axis(Axis(0));
                let d_xhat = &d_y * &bn.gamma;
                let d_z = match trace.mode {
                    BnMode::Batch => {
                        let n = d_y.nrows() as f64;
                        let sum_dx = d_xhat.sum_axis(Axis(0));
                        let sum_dx_xhat = (&d_xhat * xhat).sum_axis(Axis(0));
                        let mut d_z = &d_xhat * n - &sum_dx;
                        d_z -= &(xhat * &sum_dx_xhat);
                        d_z *= &(inv_std / n);
                        d_z
                    }
                    BnMode::Running => &d_xhat * inv_std,
                };
                (d_z, Some(d_gamma), Some(d_beta))
            }
            _ => (d_y, None, None),
        };
        let grads = LayerGrads {
            weights: d_z.t().dot(&trace.input),
            bias: d_z.sum_axis(Axis(0)),
            gamma,
            beta,
        };
        let d_in = d_z.dot(&self.dense.weights);
        (grads, d_in)
    }

    pub fn zero_grads(&self) -> LayerGrads {
        LayerGrads {
            weights: Array2::zeros(self.dense.weights.raw_dim()),
            bias: Array1::zeros(self.dense.bias.len()),
            gamma: self.bn.as_ref().map(|b| Array1::zeros(b.gamma.len())),
            beta: self.bn.as_ref().map(|b| Array1::zeros(b.beta.len())),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = vec![
            self.dense.weights.as_slice_mut().expect("standard layout"),
            self.dense.bias.as_slice_mut().expect("standard layout"),
        ];
        if let Some(bn) = &mut self.bn {
            out.push(bn.gamma.as_slice_mut().expect("standard layout"));
            out.push(bn.beta.as_slice_mut().expect("standard layout"));
        }
        out
    }

    /// Folds inference-mode batch norm into the dense weights.
    pub fn fold(&self) -> Result<FoldedLayer, NnError> {
        let mut weights = self.dense.weights.clone();
        let mut bias = self.dense.bias.clone();
        if let Some(bn) = &self.bn {
            for (unit, &var) in bn.running_var.iter().enumerate() {
                if !(var >= MIN_FOLD_VARIANCE) {
                    return Err(NnError::DegenerateBatchNorm { unit, variance: var });
                }
                let scale = bn.gamma[unit] / (var + bn.eps).sqrt();
                weights.row_mut(unit).mapv_inplace(|w| w * scale);
                bias[unit] = (bias[unit] - bn.running_mean[unit]) * scale + bn.beta[unit];
            }
        }
        Ok(FoldedLayer {
            weights,
            bias,
            activation: self.activation,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Layer>,
}

#[derive(Clone, Debug)]
pub struct MlpTrace {
    pub layers: Vec<LayerTrace>,
}

impl MlpTrace {
    pub fn output(&self) -> &Array2<f64> {
        &self.layers.last().expect("non-empty mlp").output
    }
}

impl Mlp {
    /// Stack of ReLU + batch-norm hidden layers ending in a layer with
    /// `output` activation. The last layer carries batch norm only when
    /// `bn_on_output` is set.
    pub fn new<R: Rng>(in_dim: usize, sizes: &[usize], output: Activation, bn_on_output: bool, rng: &mut R) -> Self {
        assert!(!sizes.is_empty(), "an mlp needs at least one layer");
        let mut layers = Vec::with_capacity(sizes.len());
        let mut width = in_dim;
        for (i, &out) in sizes.iter().enumerate() {
            let last = i + 1 == sizes.len();
            let activation = if last { output } else { Activation::Relu };
            let with_bn = !last || bn_on_output;
            layers.push(Layer {
                dense: Dense::init(width, out, activation, rng),
                bn: with_bn.then(|| BatchNorm::identity(out)),
                activation,
            });
            width = out;
        }
        Self { layers }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].dense.in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().expect("non-empty mlp").dense.out_dim()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.dense.out_dim()).collect()
    }

    pub fn forward(&self, input: Array2<f64>, mode: BnMode) -> Result<MlpTrace, NnError> {
        let mut traces = Vec::with_capacity(self.layers.len());
        let mut x = input;
        for layer in &self.layers {
            let trace = layer.forward(x, mode)?;
            x = trace.output.clone();
            traces.push(trace);
        }
        Ok(MlpTrace { layers: traces })
    }

    /// Inference-mode output only.
    pub fn infer(&self, input: Array2<f64>) -> Result<Array2<f64>, NnError> {
        let mut trace = self.forward(input, BnMode::Running)?;
        Ok(trace.layers.pop().expect("non-empty mlp").output)
    }

    pub fn backward(&self, trace: &MlpTrace, d_out: Array2<f64>) -> (Vec<LayerGrads>, Array2<f64>) {
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut d = d_out;
        for (layer, t) in self.layers.iter().zip(&trace.layers).rev() {
            let (g, d_in) = layer.backward(t, &d);
            grads.push(g);
            d = d_in;
        }
        grads.reverse();
        (grads, d)
    }

    /// Blends batch statistics into the running statistics:
    /// `running = momentum · running + (1 - momentum) · batch`.
    pub fn absorb_batch_stats(&mut self, trace: &MlpTrace, momentum: f64) {
        for (layer, t) in self.layers.iter_mut().zip(&trace.layers) {
            if let (Some(bn), Some(mean), Some(var)) = (&mut layer.bn, &t.batch_mean, &t.batch_var) {
                Zip::from(&mut bn.running_mean)
                    .and(mean)
                    .for_each(|r, &b| *r = momentum * *r + (1.0 - momentum) * b);
                Zip::from(&mut bn.running_var)
                    .and(var)
                    .for_each(|r, &b| *r = momentum * *r + (1.0 - momentum) * b);
            }
        }
    }

    pub fn fold(&self) -> Result<Vec<FoldedLayer>, NnError> {
        self.layers.iter().map(Layer::fold).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers.iter_mut().flat_map(Layer::params_mut).collect()
    }

    pub fn zero_grads(&self) -> Vec<LayerGrads> {
        self.layers.iter().map(Layer::zero_grads).collect()
    }
}

/// Runs folded layers over a batch.
pub fn folded_forward(layers: &[FoldedLayer], input: &Array2<f64>) -> Array2<f64> {
    let mut x = input.clone();
    for l in layers {
        x = l.forward(&x);
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(5)
    }

    #[test]
    fn identity_layer_passes_input() {
        let layer = Layer {
            dense: Dense {
                weights: Array2::eye(3),
                bias: Array1::zeros(3),
            },
            bn: None,
            activation: Activation::Identity,
        };
        let x = array![[1.0, -2.0, 3.0], [0.5, 0.0, -0.25]];
        let t = layer.forward(x.clone(), BnMode::Batch).unwrap();
        assert_eq!(t.output, x);
    }

    #[test]
    fn running_batch_norm_with_unit_stats_is_pass_through() {
        let layer = Layer {
            dense: Dense {
                weights: Array2::eye(2),
                bias: Array1::zeros(2),
            },
            bn: Some(BatchNorm {
                eps: 0.0,
                ..BatchNorm::identity(2)
            }),
            activation: Activation::Identity,
        };
        let x = array![[0.3, -7.0]];
        let t = layer.forward(x.clone(), BnMode::Running).unwrap();
        assert_eq!(t.output, x);
    }

    #[test]
    fn width_mismatch_is_an_error() {
        let mlp = Mlp::new(3, &[4, 2], Activation::Identity, false, &mut rng());
        let err = mlp.forward(Array2::zeros((1, 5)), BnMode::Batch).unwrap_err();
        assert!(matches!(err, NnError::WidthMismatch { expected: 3, got: 5 }));
    }

    #[test]
    fn two_layer_forward_matches_straight_line_arithmetic() {
        let mut mlp = Mlp::new(3, &[4, 2], Activation::Tanh, false, &mut rng());
        // Non-trivial running statistics on the hidden layer.
        let bn = mlp.layers[0].bn.as_mut().unwrap();
        bn.running_mean = array![0.1, -0.2, 0.3, 0.0];
        bn.running_var = array![1.5, 0.5, 2.0, 1.0];
        bn.gamma = array![1.1, 0.9, 1.0, 0.7];
        bn.beta = array![0.05, 0.0, -0.1, 0.2];
        let x = array![[0.2, -0.4, 0.9], [-1.0, 0.3, 0.0]];
        let got = mlp.infer(x.clone()).unwrap();
        let (l0, l1) = (&mlp.layers[0], &mlp.layers[1]);
        let bn = l0.bn.as_ref().unwrap();
        for r in 0..2 {
            let mut hidden = [0.0; 4];
            for (j, h) in hidden.iter_mut().enumerate() {
                let mut z = l0.dense.bias[j];
                for i in 0..3 {
                    z += l0.dense.weights[[j, i]] * x[[r, i]];
                }
                let n = (z - bn.running_mean[j]) / (bn.running_var[j] + bn.eps).sqrt();
                *h = (bn.gamma[j] * n + bn.beta[j]).max(0.0);
            }
            for o in 0..2 {
                let mut z = l1.dense.bias[o];
                for (j, h) in hidden.iter().enumerate() {
                    z += l1.dense.weights[[o, j]] * h;
                }
                assert!((got[[r, o]] - z.tanh()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_output_gradient_gives_zero_gradients() {
        let mlp = Mlp::new(3, &[5, 2], Activation::Identity, false, &mut rng());
        let x = array![[0.1, 0.2, 0.3], [0.4, -0.5, 0.6], [1.0, 0.0, -1.0]];
        let trace = mlp.forward(x, BnMode::Batch).unwrap();
        let (grads, d_in) = mlp.backward(&trace, Array2::zeros((3, 2)));
        for g in &grads {
            assert!(g.slices().iter().all(|s| s.iter().all(|&v| v == 0.0)));
        }
        assert!(d_in.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_squared_loss_gradient_is_closed_form() {
        let layer = Layer {
            dense: Dense::init(3, 2, Activation::Identity, &mut rng()),
            bn: None,
            activation: Activation::Identity,
        };
        let x = array![[0.5, -1.0, 2.0]];
        let y = array![[0.25, -0.75]];
        let t = layer.forward(x.clone(), BnMode::Batch).unwrap();
        let residual = &t.output - &y;
        let (g, _) = layer.backward(&t, &(&residual * 2.0));
        // d/dW |Wx + b - y|² = 2 (Wx + b - y) xᵀ
        let expected = (&residual * 2.0).t().dot(&x);
        for (a, b) in g.weights.iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn folding_matches_running_batch_norm() {
        let mut r = rng();
        let mut mlp = Mlp::new(3, &[8, 8, 4], Activation::Tanh, true, &mut r);
        for l in &mut mlp.layers {
            let bn = l.bn.as_mut().unwrap();
            bn.running_mean.mapv_inplace(|_| r.random_range(-0.5..0.5));
            bn.running_var.mapv_inplace(|_| r.random_range(0.2..3.0));
            bn.gamma.mapv_inplace(|_| r.random_range(0.5..1.5));
            bn.beta.mapv_inplace(|_| r.random_range(-0.3..0.3));
        }
        let x = Array2::from_shape_fn((16, 3), |(i, j)| ((i * 3 + j) as f64 * 0.37).sin());
        let direct = mlp.infer(x.clone()).unwrap();
        let folded = folded_forward(&mlp.fold().unwrap(), &x);
        let dev = (&direct - &folded).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b));
        assert!(dev < 1e-6, "fold deviation {dev}");
    }

    #[test]
    fn folding_rejects_degenerate_variance() {
        let mut mlp = Mlp::new(2, &[3, 1], Activation::Identity, false, &mut rng());
        mlp.layers[0].bn.as_mut().unwrap().running_var[1] = 0.0;
        assert!(matches!(
            mlp.fold().unwrap_err(),
            NnError::DegenerateBatchNorm { unit: 1, .. }
        ));
    }
}
