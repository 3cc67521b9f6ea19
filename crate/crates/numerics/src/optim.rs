//! Adam with bias correction.

use crate::params::ParamStore;
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
        }
    }
}

/// One Adam step on a flat slice; `step` counts from 1.
pub fn adam_update<T: Real>(
    cfg: &AdamConfig,
    step: u64,
    value: &mut [T],
    grad: &[T],
    m: &mut [T],
    v: &mut [T],
) {
    let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
    let c1 = T::of(1.0 - cfg.beta1.powi(step as i32));
    let c2 = T::of(1.0 - cfg.beta2.powi(step as i32));
    let lr = T::of(cfg.learning_rate);
    let eps = T::of(cfg.epsilon);
    for i in 0..value.len() {
        let g = grad[i];
        m[i] = b1 * m[i] + (T::one() - b1) * g;
        v[i] = b2 * v[i] + (T::one() - b2) * g * g;
        let mhat = m[i] / c1;
        let vhat = v[i] / c2;
        value[i] -= lr * mhat / (vhat.sqrt() + eps);
    }
}

/// Moment state for every parameter of one store. Frozen parameters and
/// buffers are skipped and keep their moments.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig, store: &ParamStore<T>) -> Self {
        let zeros = |store: &ParamStore<T>| store.iter().map(|(_, e)| Tensor::zeros(e.value.shape())).collect();
        Self {
            config,
            step: 0,
            m: zeros(store),
            v: zeros(store),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies the accumulated gradients in `store`.
    pub fn step(&mut self, store: &mut ParamStore<T>) {
        assert_eq!(self.m.len(), store.len(), "optimizer built for another store");
        self.step += 1;
        for (k, e) in store.iter_mut().enumerate() {
            if !e.trainable || e.frozen {
                continue;
            }
            adam_update(
                &self.config,
                self.step,
                e.value.data_mut(),
                e.grad.data(),
                self.m[k].data_mut(),
                self.v[k].data_mut(),
            );
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        // After bias correction the first step is lr * g / (|g| + eps).
        let cfg = AdamConfig::default();
        let mut x = [2.0f64, -3.0];
        let mut m = [0.0; 2];
        let mut v = [0.0; 2];
        adam_update(&cfg, 1, &mut x, &[0.5, -4.0], &mut m, &mut v);
        assert!((x[0] - (2.0 - 1e-4 * 0.5 / (0.5 + 1e-7))).abs() < 1e-15);
        assert!((x[1] - (-3.0 + 1e-4 * 4.0 / (4.0 + 1e-7))).abs() < 1e-15);
    }

    #[test]
    fn frozen_params_do_not_move() {
        let mut store = ParamStore::<f32>::new();
        let a = store.add("a.w", Tensor::ones(&[2])).unwrap();
        let b = store.add("b.w", Tensor::ones(&[2])).unwrap();
        store.set_frozen("a.", true);
        for e in store.iter_mut() {
            e.grad = Tensor::ones(&[2]);
        }
        let mut opt = Adam::new(AdamConfig::default(), &store);
        opt.step(&mut store);
        assert_eq!(store.value(a).data(), &[1.0, 1.0]);
        assert!(store.value(b).data().iter().all(|&v| v < 1.0));
    }
}
