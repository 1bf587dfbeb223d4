use serde::{Deserialize, Serialize};

use super::mlp::{Gradients, Layer};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    /// `beta1 = 0`, `beta2 = 0.999`: the distillation setting.
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.0,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.0,
        }
    }
}

impl AdamConfig {
    pub fn learning_rate(self, learning_rate: f64) -> Self {
        Self {
            learning_rate,
            ..self
        }
    }

    pub fn weight_decay(self, weight_decay: f64) -> Self {
        Self {
            weight_decay,
            ..self
        }
    }

    pub fn betas(self, beta1: f64, beta2: f64) -> Self {
        Self {
            beta1,
            beta2,
            ..self
        }
    }
}

/// AdamW with bias correction and decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    first: Gradients<T>,
    second: Gradients<T>,
    step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(config: AdamConfig, params: &[Layer<T>]) -> Self {
        Self {
            config,
            first: Gradients::zeros_like(params),
            second: Gradients::zeros_like(params),
            step: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update. Rejects non-finite gradients without touching `params`.
    pub fn step(&mut self, params: &mut [Layer<T>], grads: &Gradients<T>) -> Result<()> {
        if params.len() != grads.layers.len() || params.len() != self.first.layers.len() {
            return Err(Error::shape("optimizer state does not match parameters"));
        }
        for (li, (p, g)) in params.iter().zip(&grads.layers).enumerate() {
            if p.weight.dim() != g.weight.dim() || p.bias.dim() != g.bias.dim() {
                return Err(Error::shape(format!("gradient shape mismatch in layer {li}")));
            }
            let bad = g
                .weight
                .iter()
                .chain(g.bias.iter())
                .filter(|v| !v.is_finite())
                .count();
            if bad > 0 {
                return Err(Error::NonFinite {
                    context: "gradient".into(),
                    detail: format!("layer {li}: {bad} non-finite entries at step {}", self.step + 1),
                });
            }
        }

        self.step += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powf(self.step as f64);
        let bc2 = 1.0 - c.beta2.powf(self.step as f64);
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let (one_b1, one_b2) = (T::of(1.0 - c.beta1), T::of(1.0 - c.beta2));
        let (inv_bc1, inv_bc2) = (T::of(1.0 / bc1), T::of(1.0 / bc2));
        let lr = T::of(c.learning_rate);
        let eps = T::of(c.epsilon);
        let decay = T::of(1.0 - c.learning_rate * c.weight_decay);

        let update = |p: &mut T, g: T, m: &mut T, v: &mut T| {
            *m = b1 * *m + one_b1 * g;
            *v = b2 * *v + one_b2 * g * g;
            let m_hat = *m * inv_bc1;
            let v_hat = *v * inv_bc2;
            *p = *p * decay - lr * m_hat / (v_hat.sqrt() + eps);
        };

        for (((p, g), m), v) in params
            .iter_mut()
            .zip(&grads.layers)
            .zip(&mut self.first.layers)
            .zip(&mut self.second.layers)
        {
            ndarray::Zip::from(&mut p.weight)
                .and(&g.weight)
                .and(&mut m.weight)
                .and(&mut v.weight)
                .for_each(|p, &g, m, v| update(p, g, m, v));
            ndarray::Zip::from(&mut p.bias)
                .and(&g.bias)
                .and(&mut m.bias)
                .and(&mut v.bias)
                .for_each(|p, &g, m, v| update(p, g, m, v));
        }
        Ok(())
    }
}
