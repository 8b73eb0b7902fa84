//! Dense linear algebra, activations, initialization, optimization and
//! gradient checking.

mod activation;
mod adam;
mod gradcheck;
mod init;
mod matrix;
mod rng;

pub use activation::{sigmoid, softmax, softmax_rows, softmax_rows_backward, Activation};
pub use adam::{adam_step, Adam, AdamConfig, AdamState, DEFAULT_LEARNING_RATE};
pub use gradcheck::{finite_diff_check, relative_error, GradCheckReport, DEFAULT_STEP};
pub use init::{dropout_mask, glorot_init, Mode};
pub use matrix::Matrix;
pub use rng::{splitmix64, Rng};

/// A fixed, ordered collection of named parameter tensors.
///
/// The same type doubles as its own gradient container: gradients are stored
/// in a value of identical layout.
pub trait Parameters: Clone {
    fn tensors(&self) -> Vec<(String, &Matrix)>;
    fn tensors_mut(&mut self) -> Vec<(String, &mut Matrix)>;

    /// Same layout, every entry zero.
    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, m) in z.tensors_mut() {
            m.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        z
    }

    fn scalar_count(&self) -> usize {
        self.tensors().iter().map(|(_, m)| m.len()).sum()
    }
}

/// Ad-hoc parameter list, handy for checking gradients with respect to inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct NamedParams(Vec<(String, Matrix)>);

impl NamedParams {
    pub fn new(entries: Vec<(String, Matrix)>) -> Self {
        NamedParams(entries)
    }

    pub fn get(&self, i: usize) -> &Matrix {
        &self.0[i].1
    }
}

impl Parameters for NamedParams {
    fn tensors(&self) -> Vec<(String, &Matrix)> {
        self.0.iter().map(|(n, m)| (n.clone(), m)).collect()
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Matrix)> {
        self.0.iter_mut().map(|(n, m)| (n.clone(), m)).collect()
    }
}
