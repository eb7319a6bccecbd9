use crate::error::{Error, Result};

use super::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    /// L2 penalty coefficient added to the gradient before the moment updates.
    pub l2: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn new(lr: f64, l2: f64) -> Self {
        AdamConfig {
            lr,
            l2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with L2 regularisation folded into the gradient.
///
/// Moment buffers are allocated on the first step and bound to the order and
/// sizes of the tensors passed in; later steps must pass the same group.
#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Result<Self> {
        if !config.lr.is_finite() || config.lr <= 0.0 {
            return Err(Error::invalid(format!(
                "learning rate must be positive, got {}",
                config.lr
            )));
        }
        if config.l2 < 0.0 {
            return Err(Error::invalid("weight decay must be nonnegative"));
        }
        Ok(Adam {
            config,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        })
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update using each tensor's stored gradient, which the
    /// update consumes.
    pub fn step(&mut self, params: &mut [&mut Tensor]) -> Result<()> {
        if self.step == 0 {
            self.first = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.second = self.first.clone();
        } else if self.first.len() != params.len()
            || self
                .first
                .iter()
                .zip(params.iter())
                .any(|(m, p)| m.len() != p.len())
        {
            return Err(Error::invalid(
                "optimizer state does not match the parameter group",
            ));
        }
        for (i, p) in params.iter().enumerate() {
            if p.grad().is_none() {
                return Err(Error::MissingGradient(i));
            }
        }

        self.step += 1;
        let AdamConfig {
            lr,
            l2,
            beta1,
            beta2,
            eps,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for ((p, m), v) in params.iter_mut().zip(&mut self.first).zip(&mut self.second) {
            let grad = p.grad().expect("checked above").to_vec();
            let data = p.data_mut();
            for k in 0..data.len() {
                let g = grad[k] + l2 * data[k];
                m[k] = beta1 * m[k] + (1.0 - beta1) * g;
                v[k] = beta2 * v[k] + (1.0 - beta2) * g * g;
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                data[k] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
            p.zero_grad();
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(values: &[f64], grad: &[f64]) -> Tensor {
        let mut t = Tensor::vector(values.to_vec());
        t.set_grad(grad.to_vec()).unwrap();
        t
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut adam = Adam::new(AdamConfig::new(0.01, 0.0)).unwrap();
        let mut p = param(&[1.5, -2.0, 0.25], &[0.0, 0.0, 0.0]);
        for _ in 0..5 {
            p.set_grad(vec![0.0; 3]).unwrap();
            adam.step(&mut [&mut p]).unwrap();
        }
        assert_eq!(p.data(), &[1.5, -2.0, 0.25]);
    }

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let lr = 0.01;
        let mut adam = Adam::new(AdamConfig::new(lr, 0.0)).unwrap();
        let mut p = param(&[0.0, 1.0, -1.0], &[3.0, -0.5, 1e-3]);
        adam.step(&mut [&mut p]).unwrap();
        let moved = [p.data()[0], p.data()[1] - 1.0, p.data()[2] + 1.0];
        assert!((moved[0] + lr).abs() < 1e-8);
        assert!((moved[1] - lr).abs() < 1e-8);
        assert!((moved[2] + lr).abs() < 1e-7);
    }

    #[test]
    fn identical_inputs_give_bit_identical_updates() {
        let run = || {
            let mut adam = Adam::new(AdamConfig::new(0.003, 1e-5)).unwrap();
            let mut p = param(&[0.3, -0.7], &[0.11, -0.42]);
            for _ in 0..3 {
                p.set_grad(vec![0.11, -0.42]).unwrap();
                adam.step(&mut [&mut p]).unwrap();
            }
            p.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn weight_decay_pulls_towards_zero() {
        let mut adam = Adam::new(AdamConfig::new(0.01, 1.0)).unwrap();
        let mut p = param(&[2.0], &[0.0]);
        adam.step(&mut [&mut p]).unwrap();
        assert!(p.data()[0] < 2.0);
    }

    #[test]
    fn step_consumes_the_gradient() {
        let mut adam = Adam::new(AdamConfig::new(0.01, 0.0)).unwrap();
        let mut p = param(&[1.0], &[0.5]);
        adam.step(&mut [&mut p]).unwrap();
        assert!(p.grad().is_none());
        assert!(matches!(
            adam.step(&mut [&mut p]),
            Err(Error::MissingGradient(0))
        ));
    }

    #[test]
    fn rejects_nonpositive_learning_rate() {
        assert!(Adam::new(AdamConfig::new(0.0, 0.0)).is_err());
        assert!(Adam::new(AdamConfig::new(-1e-3, 0.0)).is_err());
    }

    #[test]
    fn missing_gradient_is_an_error() {
        let mut adam = Adam::new(AdamConfig::new(0.01, 0.0)).unwrap();
        let mut p = Tensor::vector(vec![1.0]);
        assert!(matches!(
            adam.step(&mut [&mut p]),
            Err(Error::MissingGradient(0))
        ));
    }
}
