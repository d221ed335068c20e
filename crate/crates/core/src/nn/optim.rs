//! ADAM with bias correction.

use super::network::{Gradients, Network, Params};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub epsilon: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// One bias-corrected update of a parameter slice. `t` is the step number
/// after incrementing (1 on the first step).
pub fn adam_update(param: &mut [f32], grad: &[f32], m: &mut [f32], v: &mut [f32], t: u64, cfg: &AdamConfig) {
    let bc1 = 1.0 - (cfg.beta1 as f64).powi(t as i32);
    let bc2 = 1.0 - (cfg.beta2 as f64).powi(t as i32);
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    for i in 0..param.len() {
        let g = grad[i];
        m[i] = b1 * m[i] + (1.0 - b1) * g;
        v[i] = b2 * v[i] + (1.0 - b2) * g * g;
        let m_hat = m[i] as f64 / bc1;
        let v_hat = v[i] as f64 / bc2;
        param[i] -= (cfg.learning_rate as f64 * m_hat / (v_hat.sqrt() + cfg.epsilon as f64)) as f32;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub config: AdamConfig,
    pub step: u64,
    /// First and second moments, aligned with the network's layers.
    pub moments: Vec<Option<(Params, Params)>>,
}

impl OptimizerState {
    pub fn new(network: &Network, config: AdamConfig) -> Self {
        let moments = network
            .layers()
            .iter()
            .map(|l| {
                l.params.as_ref().map(|p| {
                    let zero = || Params {
                        weight: Tensor::zeros(p.weight.shape()),
                        bias: Tensor::zeros(p.bias.shape()),
                    };
                    (zero(), zero())
                })
            })
            .collect();
        Self {
            config,
            step: 0,
            moments,
        }
    }

    /// Applies one step to every trainable layer. Frozen layers and their
    /// moments are left untouched.
    pub fn step(&mut self, network: &mut Network, grads: &Gradients) -> Result<()> {
        if grads.layers.len() != network.layers().len() || self.moments.len() != network.layers().len() {
            return Err(Error::Shape("gradient/optimizer state does not match network".into()));
        }
        for g in grads.layers.iter().flatten() {
            g.weight.ensure_finite("weight gradient")?;
            g.bias.ensure_finite("bias gradient")?;
        }
        self.step += 1;
        let t = self.step;
        let cfg = self.config;
        for ((layer, grad), moments) in network
            .layers_mut()
            .iter_mut()
            .zip(&grads.layers)
            .zip(&mut self.moments)
        {
            if !layer.trainable {
                continue;
            }
            let (Some(params), Some(grad), Some((m, v))) = (layer.params.as_mut(), grad, moments.as_mut()) else {
                continue;
            };
            if grad.weight.shape() != params.weight.shape() || grad.bias.shape() != params.bias.shape() {
                return Err(Error::Shape("gradient shape differs from parameter".into()));
            }
            adam_update(
                params.weight.data_mut(),
                grad.weight.data(),
                m.weight.data_mut(),
                v.weight.data_mut(),
                t,
                &cfg,
            );
            adam_update(
                params.bias.data_mut(),
                grad.bias.data(),
                m.bias.data_mut(),
                v.bias.data_mut(),
                t,
                &cfg,
            );
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = vec![0.5f32, -1.0];
        let (mut m, mut v) = (vec![0.0; 2], vec![0.0; 2]);
        adam_update(&mut p, &[0.0, 0.0], &mut m, &mut v, 1, &AdamConfig::default());
        assert_eq!(p, vec![0.5, -1.0]);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = vec![0.0f32];
        let (mut m, mut v) = (vec![0.0], vec![0.0]);
        adam_update(&mut p, &[1.0], &mut m, &mut v, 1, &AdamConfig::default());
        assert!((p[0] + 0.01).abs() < 1e-9);
    }

    #[test]
    fn two_constant_steps() {
        // Constant g: m̂ = g and v̂ = g² at every t, so each step is -lr·g/(|g|+ε).
        let cfg = AdamConfig::default();
        let mut p = vec![0.0f32];
        let (mut m, mut v) = (vec![0.0], vec![0.0]);
        for t in 1..=2 {
            adam_update(&mut p, &[0.5], &mut m, &mut v, t, &cfg);
        }
        let step = 0.01 * 0.5 / (0.5 + 1e-8);
        assert!((p[0] as f64 + 2.0 * step).abs() < 1e-6);
    }
}
