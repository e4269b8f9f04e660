use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
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

/// Moment estimates for a fixed list of parameter tensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub config: AdamConfig,
    step_count: u64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new<'a>(config: AdamConfig, params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let sizes: Vec<usize> = params.into_iter().map(Tensor::len).collect();
        Self {
            config,
            step_count: 0,
            first_moment: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            second_moment: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// One bias-corrected Adam update of every parameter from its `grad`
    /// slot. Parameters without a gradient are treated as having zero grad.
    pub fn step<'a>(&mut self, params: impl IntoIterator<Item = &'a mut Tensor>) -> Result<()> {
        let mut params: Vec<&mut Tensor> = params.into_iter().collect();
        if params.len() != self.first_moment.len() {
            return Err(Error::Dimension {
                op: "adam_step",
                left: vec![self.first_moment.len()],
                right: vec![params.len()],
            });
        }
        for (p, m) in params.iter().zip(&self.first_moment) {
            if p.len() != m.len() {
                return Err(Error::Dimension {
                    op: "adam_step",
                    left: vec![m.len()],
                    right: p.shape().to_vec(),
                });
            }
        }

        self.step_count += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.step_count as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);

        for ((p, m), v) in params
            .iter_mut()
            .zip(&mut self.first_moment)
            .zip(&mut self.second_moment)
        {
            let Some(grad) = p.grad().map(<[f64]>::to_vec) else {
                continue;
            };
            let data = p.data_mut();
            for i in 0..data.len() {
                let g = grad[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                data[i] -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_grad_leaves_params() {
        let mut w = Tensor::new(&[3], vec![1.0, -2.0, 0.5]).unwrap();
        w.accumulate_grad(&[0.0; 3]).unwrap();
        let before = w.clone();
        let mut adam = AdamState::new(AdamConfig::default(), [&w]);
        adam.step([&mut w]).unwrap();
        assert_eq!(w.data(), before.data());
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut w = Tensor::scalar(3.0);
        w.accumulate_grad(&[1.0]).unwrap();
        let cfg = AdamConfig {
            learning_rate: 0.1,
            ..AdamConfig::default()
        };
        let mut adam = AdamState::new(cfg, [&w]);
        adam.step([&mut w]).unwrap();
        // m̂ = 1, v̂ = 1, so the update is lr / (1 + ε)
        assert!((w.data()[0] - (3.0 - 0.1 / (1.0 + 1e-8))).abs() < 1e-15);
    }

    #[test]
    fn quadratic_descent_is_monotone() {
        // f(w) = w², grad 2w
        let mut w = Tensor::scalar(1.0);
        let cfg = AdamConfig {
            learning_rate: 0.1,
            ..AdamConfig::default()
        };
        let mut adam = AdamState::new(cfg, [&w]);
        let mut prev = 1.0f64;
        for _ in 0..10 {
            w.zero_grad();
            let g = 2.0 * w.data()[0];
            w.accumulate_grad(&[g]).unwrap();
            adam.step([&mut w]).unwrap();
            let cur = w.data()[0].abs();
            assert!(cur < prev, "{cur} !< {prev}");
            prev = cur;
        }
        assert_eq!(adam.step_count(), 10);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let w = Tensor::zeros(&[2]);
        let mut other = Tensor::zeros(&[3]);
        let mut adam = AdamState::new(AdamConfig::default(), [&w]);
        assert!(matches!(
            adam.step([&mut other]),
            Err(Error::Dimension { .. })
        ));
    }
}
