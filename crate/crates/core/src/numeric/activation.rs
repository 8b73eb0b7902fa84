use serde::{Deserialize, Serialize};

use super::Matrix;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Sigmoid,
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply_scalar(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    x
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the pre-activation `x` and the output `y`.
    #[inline]
    pub fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }

    pub fn apply(self, x: &Matrix) -> Matrix {
        x.map(|v| self.apply_scalar(v))
    }

    /// Chain rule through the activation: `grad_out ⊙ f'(pre)`.
    pub fn backward(self, pre: &Matrix, out: &Matrix, grad_out: &Matrix) -> Result<Matrix> {
        if pre.shape() != grad_out.shape() || out.shape() != grad_out.shape() {
            return Err(Error::shape("activation backward", pre.shape(), grad_out.shape()));
        }
        let data = pre
            .data()
            .iter()
            .zip(out.data())
            .zip(grad_out.data())
            .map(|((&x, &y), &g)| g * self.derivative(x, y))
            .collect();
        Matrix::from_vec(pre.rows(), pre.cols(), data)
    }
}

/// Logistic function, evaluated on the branch that cannot overflow.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Max-subtracted softmax of a vector.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::shape("softmax", (0, 0), (1, 1)));
    }
    let mut out = vec![0.0; logits.len()];
    softmax_into(logits, &mut out);
    Ok(out)
}

pub(crate) fn softmax_into(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = (l - max).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

/// Row-wise softmax.
pub fn softmax_rows(logits: &Matrix) -> Result<Matrix> {
    if logits.cols() == 0 {
        return Err(Error::shape("softmax_rows", logits.shape(), (1, 1)));
    }
    let mut out = Matrix::zeros(logits.rows(), logits.cols());
    for r in 0..logits.rows() {
        softmax_into(logits.row(r), out.row_mut(r));
    }
    Ok(out)
}

/// Backward pass of a row-wise softmax given its output `probs`.
pub fn softmax_rows_backward(probs: &Matrix, grad_out: &Matrix) -> Result<Matrix> {
    if probs.shape() != grad_out.shape() {
        return Err(Error::shape("softmax backward", probs.shape(), grad_out.shape()));
    }
    let mut out = Matrix::zeros(probs.rows(), probs.cols());
    for r in 0..probs.rows() {
        let p = probs.row(r);
        let g = grad_out.row(r);
        let dot: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
        for ((o, &pi), &gi) in out.row_mut(r).iter_mut().zip(p).zip(g) {
            *o = pi * (gi - dot);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_anchors() {
        assert_eq!(Activation::Relu.apply_scalar(0.0), 0.0);
        assert_eq!(Activation::Relu.apply_scalar(-5.0), 0.0);
        assert_eq!(Activation::Relu.apply_scalar(5.0), 5.0);
        assert_eq!(Activation::Sigmoid.apply_scalar(0.0), 0.5);
        assert_eq!(Activation::Tanh.apply_scalar(0.0), 0.0);
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        for x in [-700.0, -100.0, 100.0, 700.0] {
            let s = sigmoid(x);
            assert!(s.is_finite() && (0.0..=1.0).contains(&s));
        }
        assert!((sigmoid(700.0) - 1.0).abs() < 1e-15);
        assert!(Activation::Tanh.apply_scalar(-700.0) == -1.0);
    }

    #[test]
    fn softmax_uniform_and_shift() {
        let p = softmax(&[0.0; 4]).unwrap();
        assert!(p.iter().all(|&v| (v - 0.25).abs() < 1e-15));
        for c in [-3.0, 0.0, 17.5] {
            let p = softmax(&[c, c + 3f64.ln()]).unwrap();
            assert!((p[0] - 0.25).abs() < 1e-12 && (p[1] - 0.75).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_does_not_overflow() {
        let p = softmax(&[1000.0, 0.0]).unwrap();
        assert!((p[0] - 1.0).abs() < 1e-15 && p[1] >= 0.0 && p[1] < 1e-300);
    }

    #[test]
    fn softmax_rejects_empty() {
        assert!(softmax(&[]).is_err());
    }
}
