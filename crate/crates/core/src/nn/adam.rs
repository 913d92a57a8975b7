use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use serde::{Deserialize, Serialize};

use super::Param;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamConfig {
    pub fn with_lr(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam with bias-corrected moment estimates. Moments are kept in the order
/// the parameters are presented, which must not change between steps.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Apply one update to every trainable parameter from its `grad`.
    pub fn update<'a>(&mut self, params: impl IntoIterator<Item = &'a mut Param>) {
        self.step += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for (slot, p) in params.into_iter().filter(|p| p.trainable()).enumerate() {
            if slot == self.m.len() {
                self.m.push(vec![0.0; p.len()]);
                self.v.push(vec![0.0; p.len()]);
            }
            let (m, v) = (&mut self.m[slot], &mut self.v[slot]);
            assert_eq!(m.len(), p.len(), "parameter order changed between steps");
            for i in 0..p.len() {
                let g = p.grad[i];
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g;
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
                p.value[i] -= c.learning_rate * (m[i] / bc1) / ((v[i] / bc2).sqrt() + c.epsilon);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamKind;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = Param::filled(&[2], 1.0, ParamKind::Weight);
        p.grad = vec![3.0, -0.5];
        let mut a = Adam::new(AdamConfig::with_lr(0.1));
        a.update([&mut p]);
        assert!((p.value[0] - 0.9).abs() < 1e-6);
        assert!((p.value[1] - 1.1).abs() < 1e-6);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut p = Param::filled(&[1], 5.0, ParamKind::Weight);
        let mut a = Adam::new(AdamConfig::with_lr(0.1));
        for _ in 0..500 {
            p.grad[0] = 2.0 * (p.value[0] - 2.0);
            a.update([&mut p]);
        }
        assert!((p.value[0] - 2.0).abs() < 1e-2);
    }

    #[test]
    fn buffers_are_not_updated() {
        let mut p = Param::filled(&[1], 5.0, ParamKind::Buffer);
        p.grad[0] = 1.0;
        Adam::new(AdamConfig::with_lr(0.1)).update([&mut p]);
        assert_eq!(p.value[0], 5.0);
    }
}
