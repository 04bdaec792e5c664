//! Trainable parameters and the Adam optimizer.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A weight tensor with its accumulated gradient and Adam state.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    pub adam_m: Tensor,
    pub adam_v: Tensor,
    pub step_count: u64,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Tensor) -> Parameter {
        Parameter {
            name: name.into(),
            grad: Tensor::zeros_like(&value),
            adam_m: Tensor::zeros_like(&value),
            adam_v: Tensor::zeros_like(&value),
            value,
            step_count: 0,
        }
    }

    /// Clears the accumulated gradient. Optimizer steps leave the gradient
    /// intact for inspection; callers reset it explicitly.
    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    /// Adds `grad` into the accumulated gradient.
    pub fn accumulate(&mut self, grad: &Tensor) -> Result<()> {
        self.grad.axpy(1.0, grad)
    }
}

/// Adam hyperparameters. `beta1 = 0.5` follows the DCGAN training lineage;
/// the other defaults are the standard ones.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-4,
            beta1: 0.5,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// One Adam update with bias correction.
///
/// Rejects non-finite gradients; the value is untouched on error. The step
/// counter increments by exactly one per applied step.
pub fn adam_step(param: &mut Parameter, cfg: &AdamConfig) -> Result<()> {
    if !param.grad.all_finite() {
        return Err(Error::Numeric(format!(
            "non-finite gradient in parameter '{}'",
            param.name
        )));
    }
    debug_assert_eq!(param.grad.shape(), param.value.shape());
    param.step_count += 1;
    let t = param.step_count as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let prec = param.value.precision();
    for i in 0..param.value.len() {
        let g = param.grad.data()[i];
        let m = cfg.beta1 * param.adam_m.data()[i] + (1.0 - cfg.beta1) * g;
        let v = cfg.beta2 * param.adam_v.data()[i] + (1.0 - cfg.beta2) * g * g;
        param.adam_m.data_mut()[i] = prec.quantize(m);
        param.adam_v.data_mut()[i] = prec.quantize(v);
        let m_hat = m / bc1;
        let v_hat = v / bc2;
        let updated =
            param.value.data()[i] - cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
        param.value.data_mut()[i] = prec.quantize(updated);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_param(v: f64) -> Parameter {
        Parameter::new("p", Tensor::scalar(v))
    }

    #[test]
    fn zero_gradient_fresh_state_is_identity() {
        let mut p = scalar_param(1.5);
        adam_step(&mut p, &AdamConfig::default()).unwrap();
        assert_eq!(p.value.data()[0], 1.5);
        assert_eq!(p.step_count, 1);
    }

    #[test]
    fn first_step_magnitude_is_learning_rate() {
        // with bias correction the first update is lr * g / (|g| + eps)
        for g in [0.3, -2.0, 10.0] {
            let mut p = scalar_param(0.0);
            p.grad = Tensor::scalar(g);
            let cfg = AdamConfig {
                learning_rate: 1e-3,
                ..AdamConfig::default()
            };
            adam_step(&mut p, &cfg).unwrap();
            let update = p.value.data()[0];
            assert!(update * g < 0.0, "update opposes the gradient");
            assert!((update.abs() - 1e-3).abs() <= 1e-9, "magnitude {}", update.abs());
        }
    }

    #[test]
    fn nan_gradient_rejected_value_untouched() {
        let mut p = scalar_param(2.0);
        p.grad = Tensor::scalar(f64::NAN);
        let err = adam_step(&mut p, &AdamConfig::default()).unwrap_err();
        assert!(err.to_string().contains("non-finite"));
        assert_eq!(p.value.data()[0], 2.0);
        assert_eq!(p.step_count, 0);
    }

    #[test]
    fn grad_left_intact_until_zeroed() {
        let mut p = scalar_param(0.0);
        p.grad = Tensor::scalar(0.7);
        adam_step(&mut p, &AdamConfig::default()).unwrap();
        assert_eq!(p.grad.data()[0], 0.7);
        p.zero_grad();
        assert_eq!(p.grad.data()[0], 0.0);
    }

    #[test]
    fn trajectory_matches_independent_reference() {
        // straight-line Adam reimplementation minimizing f(x) = (x - 3)^2 / 2
        let cfg = AdamConfig {
            learning_rate: 0.05,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        };
        let (mut x, mut m, mut v) = (10.0f64, 0.0f64, 0.0f64);
        let mut reference = Vec::new();
        for t in 1..=10 {
            let g = x - 3.0;
            m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
            v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
            let mh = m / (1.0 - cfg.beta1.powi(t));
            let vh = v / (1.0 - cfg.beta2.powi(t));
            x -= cfg.learning_rate * mh / (vh.sqrt() + cfg.epsilon);
            reference.push(x);
        }

        let mut p = scalar_param(10.0);
        for &expect in &reference {
            p.grad = Tensor::scalar(p.value.data()[0] - 3.0);
            adam_step(&mut p, &cfg).unwrap();
            assert!((p.value.data()[0] - expect).abs() <= 1e-10);
        }
    }

    #[test]
    fn step_count_increments_once_per_step() {
        let mut p = scalar_param(0.0);
        p.grad = Tensor::scalar(1.0);
        for expected in 1..=5u64 {
            adam_step(&mut p, &AdamConfig::default()).unwrap();
            assert_eq!(p.step_count, expected);
        }
    }
}
