//! Adam optimiser with bias correction.

use alloc::vec::Vec;

use super::matrix::Matrix;
use crate::fmath;

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
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
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        AdamConfig {
            learning_rate,
            ..AdamConfig::default()
        }
    }
}

/// Optimiser state; slots align with the parameter visit order of the models
/// it updates, fixed on the first step.
pub struct Adam {
    cfg: AdamConfig,
    steps: u64,
    slots: Vec<(Matrix, Matrix)>,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Adam {
            cfg,
            steps: 0,
            slots: Vec::new(),
        }
    }

    /// Advances the step counter. Call once per optimisation step, before
    /// [`Adam::update`].
    pub fn begin_step(&mut self) {
        self.steps += 1;
    }

    /// Updates one parameter tensor in its fixed slot. Slots are created on
    /// first use and must keep their shapes across steps.
    pub fn update(&mut self, slot: usize, param: &mut Matrix, grad: &Matrix) {
        assert_eq!(param.shape(), grad.shape());
        assert!(self.steps > 0, "begin_step before update");
        if self.slots.len() == slot {
            let (r, c) = param.shape();
            self.slots.push((Matrix::zeros(r, c), Matrix::zeros(r, c)));
        }
        let (m, v) = &mut self.slots[slot];
        assert_eq!(m.shape(), param.shape(), "slot shape changed");

        let t = self.steps as f64;
        let bc1 = 1.0 - fmath::powf(self.cfg.beta1, t);
        let bc2 = 1.0 - fmath::powf(self.cfg.beta2, t);
        for ((p, &g), (mi, vi)) in param
            .data_mut()
            .iter_mut()
            .zip(grad.data())
            .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()))
        {
            *mi = self.cfg.beta1 * *mi + (1.0 - self.cfg.beta1) * g;
            *vi = self.cfg.beta2 * *vi + (1.0 - self.cfg.beta2) * g * g;
            let m_hat = *mi / bc1;
            let v_hat = *vi / bc2;
            *p -= self.cfg.learning_rate * m_hat / (fmath::sqrt(v_hat) + self.cfg.epsilon);
        }
    }

    /// Applies one update over an aligned parameter/gradient list.
    pub fn step(&mut self, params: &mut [&mut Matrix], grads: &[Matrix]) {
        assert_eq!(params.len(), grads.len(), "params/grads misaligned");
        self.begin_step();
        for (slot, (param, grad)) in params.iter_mut().zip(grads).enumerate() {
            self.update(slot, param, grad);
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }
}
