//! Adam with bias correction.

use serde::{Deserialize, Serialize};

use super::{Matrix, Parameters};
use crate::error::{Error, Result};

pub const DEFAULT_LEARNING_RATE: f64 = 0.00039;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: DEFAULT_LEARNING_RATE,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Moment estimates for one parameter matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub first_moment: Matrix,
    pub second_moment: Matrix,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub learning_rate: f64,
}

impl AdamState {
    pub fn new(rows: usize, cols: usize, config: AdamConfig) -> Self {
        AdamState {
            first_moment: Matrix::zeros(rows, cols),
            second_moment: Matrix::zeros(rows, cols),
            step: 0,
            beta1: config.beta1,
            beta2: config.beta2,
            epsilon: config.epsilon,
            learning_rate: config.learning_rate,
        }
    }

    fn update_in_place(&mut self, param: &mut Matrix, grad: &Matrix) -> Result<()> {
        if param.shape() != grad.shape() {
            return Err(Error::shape("adam_step", param.shape(), grad.shape()));
        }
        if self.first_moment.shape() != param.shape() {
            return Err(Error::shape("adam_step", param.shape(), self.first_moment.shape()));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (self.beta1, self.beta2);
        let m = self.first_moment.data_mut();
        let v = self.second_moment.data_mut();
        for (((p, &g), m), v) in param.data_mut().iter_mut().zip(grad.data()).zip(m).zip(v) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
        }
        Ok(())
    }
}

/// One Adam update; returns the new parameter and state, leaving inputs untouched.
pub fn adam_step(param: &Matrix, grad: &Matrix, state: &AdamState) -> Result<(Matrix, AdamState)> {
    let mut p = param.clone();
    let mut s = state.clone();
    s.update_in_place(&mut p, grad)?;
    Ok((p, s))
}

/// Adam over every tensor of a parameter set, one state per tensor.
#[derive(Clone, Debug)]
pub struct Adam {
    config: AdamConfig,
    states: Vec<AdamState>,
}

impl Adam {
    pub fn new<P: Parameters>(params: &P, config: AdamConfig) -> Self {
        let states = params
            .tensors()
            .into_iter()
            .map(|(_, m)| AdamState::new(m.rows(), m.cols(), config))
            .collect();
        Adam { config, states }
    }

    pub fn config(&self) -> AdamConfig {
        self.config
    }

    pub fn step<P: Parameters>(&mut self, params: &mut P, grads: &P) -> Result<()> {
        let grads = grads.tensors();
        let params = params.tensors_mut();
        if params.len() != self.states.len() || grads.len() != self.states.len() {
            return Err(Error::Config(format!(
                "optimizer tracks {} tensors, got {} parameters and {} gradients",
                self.states.len(),
                params.len(),
                grads.len()
            )));
        }
        for ((state, (_, p)), (_, g)) in self.states.iter_mut().zip(params).zip(grads) {
            state.update_in_place(p, g)?;
        }
        Ok(())
    }
}
