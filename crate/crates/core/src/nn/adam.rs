use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction over a fixed list of parameter slices.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    steps: u64,
}

impl Adam {
    /// `lengths` lists the size of every parameter slice, in the order
    /// later passed to [`Adam::step`].
    pub fn new(config: AdamConfig, lengths: &[usize]) -> Self {
        Self {
            config,
            m: lengths.iter().map(|&n| vec![0.0; n]).collect(),
            v: lengths.iter().map(|&n| vec![0.0; n]).collect(),
            steps: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn step(&mut self, params: Vec<&mut [f64]>, grads: &[&[f64]], lr: f64) {
        assert_eq!(params.len(), self.m.len(), "parameter slice count changed");
        assert_eq!(grads.len(), self.m.len(), "gradient slice count mismatch");
        self.steps += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.steps as i32);
        let c2 = 1.0 - beta2.powi(self.steps as i32);
        for (((p, g), m), v) in params.into_iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            assert_eq!(p.len(), g.len(), "gradient length mismatch");
            for i in 0..p.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = vec![1.0, -2.0];
        let mut adam = Adam::new(AdamConfig::default(), &[2]);
        adam.step(vec![&mut p], &[&[0.0, 0.0]], 0.1);
        assert_eq!(p, vec![1.0, -2.0]);
    }

    #[test]
    fn first_step_moves_by_lr_against_the_gradient_sign() {
        // m̂ = g and v̂ = g², so the step is lr · g / (|g| + eps).
        let mut p = vec![0.0, 0.0];
        let g = [0.3, -4.0];
        let mut adam = Adam::new(AdamConfig::default(), &[2]);
        adam.step(vec![&mut p], &[&g], 0.01);
        for (pi, gi) in p.iter().zip(g) {
            let expected = -0.01 * gi / (gi.abs() + 1e-8);
            assert!((pi - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn quadratic_loss_decreases_towards_zero() {
        let mut x = vec![3.0];
        let mut adam = Adam::new(AdamConfig::default(), &[1]);
        let mut prev = f64::INFINITY;
        for _ in 0..100 {
            let loss = x[0] * x[0];
            assert!(loss <= prev);
            prev = loss;
            let g = [2.0 * x[0]];
            adam.step(vec![&mut x], &[&g], 0.02);
        }
        assert!(x[0] * x[0] < 9.0 * 0.5);
    }
}
