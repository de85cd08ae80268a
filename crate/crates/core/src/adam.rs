//! Adam over a fixed list of flat tensors.

use alloc::vec;
use alloc::vec::Vec;

use crate::linalg::Matrix;

/// An ordered, fixed set of named trainable tensors.
pub trait ParamSet {
    fn tensor_count(&self) -> usize;
    fn tensor(&self, slot: usize) -> (&'static str, &Matrix);
    fn tensor_mut(&mut self, slot: usize) -> &mut Matrix;

    fn tensor_sizes(&self) -> Vec<usize> {
        (0..self.tensor_count())
            .map(|i| self.tensor(i).1.as_slice().len())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.005,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, one buffer per tensor.
#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    step: u32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig, sizes: impl IntoIterator<Item = usize>) -> Self {
        let (m, v) = sizes.into_iter().map(|n| (vec![0.0; n], vec![0.0; n])).unzip();
        Self {
            config,
            step: 0,
            m,
            v,
        }
    }

    pub fn steps_taken(&self) -> u32 {
        self.step
    }

    /// Advances the step counter. Call once per optimizer step, before
    /// [`Adam::update`] is applied to each tensor.
    pub fn begin_step(&mut self) {
        self.step += 1;
    }

    /// Updates tensor `slot` in place from its gradient.
    pub fn update(&mut self, slot: usize, params: &mut [f64], grads: &[f64]) {
        assert!(self.step > 0, "begin_step must be called before update");
        assert_eq!(params.len(), grads.len());
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let bias1 = 1.0 - libm::pow(beta1, f64::from(self.step));
        let bias2 = 1.0 - libm::pow(beta2, f64::from(self.step));
        let m = &mut self.m[slot];
        let v = &mut self.v[slot];
        for i in 0..params.len() {
            let g = grads[i];
            m[i] = beta1 * m[i] + (1.0 - beta1) * g;
            v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
            let m_hat = m[i] / bias1;
            let v_hat = v[i] / bias2;
            let delta = lr * m_hat / (libm::sqrt(v_hat) + eps);
            if delta != 0.0 {
                params[i] -= delta;
            }
        }
    }
}

impl Adam {
    /// One full optimizer step over every tensor whose name `frozen` rejects.
    pub fn step<P: ParamSet>(&mut self, params: &mut P, grads: &P, frozen: impl Fn(&str) -> bool) {
        self.begin_step();
        for slot in 0..params.tensor_count() {
            let (name, g) = grads.tensor(slot);
            if frozen(name) {
                continue;
            }
            self.update(slot, params.tensor_mut(slot).as_mut_slice(), g.as_slice());
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters_untouched() {
        let mut adam = Adam::new(AdamConfig::default(), [3]);
        let mut p = vec![1.0, -0.0, 2.5];
        let before = p.clone();
        for _ in 0..5 {
            adam.begin_step();
            adam.update(0, &mut p, &[0.0, 0.0, 0.0]);
        }
        assert_eq!(p.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
                   before.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn zero_learning_rate_is_a_no_op() {
        let mut adam = Adam::new(AdamConfig::with_lr(0.0), [2]);
        let mut p = vec![-0.0, 3.0];
        adam.begin_step();
        adam.update(0, &mut p, &[-1.0, 2.0]);
        assert_eq!(p[0].to_bits(), (-0.0f64).to_bits());
        assert_eq!(p[1], 3.0);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // With bias correction the first update is lr · g / (|g| + eps).
        let mut adam = Adam::new(AdamConfig::with_lr(0.1), [2]);
        let mut p = vec![0.0, 0.0];
        adam.begin_step();
        adam.update(0, &mut p, &[4.0, -0.5]);
        assert!((p[0] + 0.1).abs() < 1e-8);
        assert!((p[1] - 0.1).abs() < 1e-8);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut adam = Adam::new(AdamConfig::with_lr(0.05), [1]);
        let mut x = vec![3.0];
        for _ in 0..2000 {
            let g = [2.0 * (x[0] - 1.0)];
            adam.begin_step();
            adam.update(0, &mut x, &g);
        }
        assert!((x[0] - 1.0).abs() < 1e-3);
    }
}
