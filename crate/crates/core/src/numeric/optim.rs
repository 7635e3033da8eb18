use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use super::error::{NumericError, Result};
use super::params::ParamStore;
use crate::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adaptive moment estimation with bias correction.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    config: AdamConfig,
    step: u64,
    first: Vec<Option<Array2<T>>>,
    second: Vec<Option<Array2<T>>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Updates trainable parameters from their gradient buffers, then clears
    /// every gradient buffer. Fails without touching anything if a trainable
    /// gradient is not finite.
    pub fn step(&mut self, store: &mut ParamStore<T>) -> Result<()> {
        for (_, p) in store.iter() {
            if p.trainable && p.grad.iter().any(|g| !g.is_finite()) {
                return Err(NumericError::NanGradient(p.name.clone()));
            }
        }
        let params = store.params_mut();
        if self.first.len() < params.len() {
            self.first.resize(params.len(), None);
            self.second.resize(params.len(), None);
        }
        self.step += 1;
        let t = self.step as f64;
        let lr = T::of(self.config.learning_rate);
        let b1 = T::of(self.config.beta1);
        let b2 = T::of(self.config.beta2);
        let eps = T::of(self.config.epsilon);
        let c1 = T::of(1.0 - self.config.beta1.powf(t));
        let c2 = T::of(1.0 - self.config.beta2.powf(t));
        let one = T::one();

        for (i, p) in params.iter_mut().enumerate() {
            if p.trainable {
                let m = self.first[i].get_or_insert_with(|| Array2::zeros(p.value.raw_dim()));
                let v = self.second[i].get_or_insert_with(|| Array2::zeros(p.value.raw_dim()));
                Zip::from(&mut p.value)
                    .and(&p.grad)
                    .and(m)
                    .and(v)
                    .for_each(|w, &g, m, v| {
                        *m = b1 * *m + (one - b1) * g;
                        *v = b2 * *v + (one - b2) * g * g;
                        let m_hat = *m / c1;
                        let v_hat = *v / c2;
                        *w -= lr * m_hat / (v_hat.sqrt() + eps);
                    });
            }
            p.grad.fill(T::zero());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::Graph;
    use ndarray::array;

    #[test]
    fn zero_gradients_leave_params_unchanged() {
        let mut store = ParamStore::<f64>::new();
        let p = store.insert("p", array![[0.25, -1.0]], true).unwrap();
        let mut adam = Adam::new(AdamConfig::default());
        for _ in 0..5 {
            adam.step(&mut store).unwrap();
        }
        assert_eq!(store.value(p), &array![[0.25, -1.0]]);
    }

    #[test]
    fn frozen_params_are_bitwise_untouched() {
        let mut store = ParamStore::<f64>::new();
        let frozen = store.insert("graph", array![[0.1, 0.2], [0.3, 0.4]], false).unwrap();
        let w = store.insert("w", array![[1.0, 1.0]], true).unwrap();
        let before = store.value(frozen).clone();
        let mut adam = Adam::new(AdamConfig::default());
        for _ in 0..10 {
            let grads = {
                let mut g = Graph::new(&store);
                let t = g.param(frozen);
                let wv = g.param(w);
                let y = g.matmul(wv, t).unwrap();
                let l = g.sum(y);
                g.backward(l).unwrap()
            };
            store.accumulate(&grads);
            adam.step(&mut store).unwrap();
        }
        assert_ne!(store.value(w), &array![[1.0, 1.0]]);
        let after = store.value(frozen);
        assert!(before
            .iter()
            .zip(after.iter())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn step_clears_gradients() {
        let mut store = ParamStore::<f64>::new();
        let p = store.insert("p", array![[1.0]], true).unwrap();
        let mut g = super::super::params::Gradients::new(1);
        g.per_param[0] = Some(array![[2.0]]);
        store.accumulate(&g);
        Adam::new(AdamConfig::default()).step(&mut store).unwrap();
        assert_eq!(store.grad(p)[[0, 0]], 0.0);
    }

    #[test]
    fn nan_gradient_names_the_parameter() {
        let mut store = ParamStore::<f64>::new();
        store.insert("ok", array![[1.0]], true).unwrap();
        store.insert("bad", array![[1.0]], true).unwrap();
        let mut g = super::super::params::Gradients::new(2);
        g.per_param[1] = Some(array![[f64::NAN]]);
        store.accumulate(&g);
        let err = Adam::new(AdamConfig::default()).step(&mut store).unwrap_err();
        assert_eq!(err, NumericError::NanGradient("bad".into()));
    }

    #[test]
    fn descends_a_quadratic() {
        // f(θ) = (θ − 3)², θ₀ = 0. The step size is raised from the training
        // default: with 1e-3 Adam can move at most ~0.2 in 200 steps.
        let mut store = ParamStore::<f64>::new();
        let theta = store.insert("theta", array![[0.0]], true).unwrap();
        let mut adam = Adam::new(AdamConfig {
            learning_rate: 0.1,
            ..AdamConfig::default()
        });
        for _ in 0..200 {
            let grads = {
                let mut g = Graph::new(&store);
                let t = g.param(theta);
                let shift = g.row(&[-3.0]);
                let d = g.add(t, shift).unwrap();
                let sq = g.mul(d, d).unwrap();
                let l = g.sum(sq);
                g.backward(l).unwrap()
            };
            store.accumulate(&grads);
            adam.step(&mut store).unwrap();
        }
        assert!((store.value(theta)[[0, 0]] - 3.0).abs() < 0.1);
    }
}
