use serde::{Deserialize, Serialize};

use super::{Matrix, Rng};
use crate::error::{Error, Result};

/// Whether a forward pass is part of training (dropout active, relaxed
/// thresholds) or evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

/// Glorot/Xavier uniform initialization on `±√(6 / (fan_in + fan_out))`.
pub fn glorot_init(fan_in: usize, fan_out: usize, rng: &mut Rng) -> Matrix {
    assert!(fan_in > 0 && fan_out > 0, "glorot_init needs positive dimensions");
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| rng.uniform_range(-bound, bound))
        .collect();
    Matrix::from_vec(fan_in, fan_out, data).expect("length matches")
}

/// Inverted dropout mask: entries are `0` or `1 / (1 - rate)`, all ones in
/// evaluation mode.
pub fn dropout_mask(
    rows: usize,
    cols: usize,
    rate: f64,
    mode: Mode,
    rng: &mut Rng,
) -> Result<Matrix> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!("dropout rate must lie in [0, 1), got {rate}")));
    }
    if mode == Mode::Eval || rate == 0.0 {
        return Ok(Matrix::filled(rows, cols, 1.0));
    }
    let keep = 1.0 / (1.0 - rate);
    let data = (0..rows * cols)
        .map(|_| if rng.uniform() < rate { 0.0 } else { keep })
        .collect();
    Matrix::from_vec(rows, cols, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn glorot_bounds_and_determinism() {
        let a = glorot_init(7, 5, &mut Rng::new(3));
        let b = glorot_init(7, 5, &mut Rng::new(3));
        assert_eq!(a, b);
        let bound = (6.0f64 / 12.0).sqrt();
        assert!(a.data().iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn glorot_variance_matches_uniform_law() {
        // Var(U(-b, b)) = b²/3 = 2 / (fan_in + fan_out).
        let (fan_in, fan_out) = (200, 500);
        let m = glorot_init(fan_in, fan_out, &mut Rng::new(11));
        assert_eq!(m.len(), 100_000);
        let n = m.len() as f64;
        let mean = m.sum() / n;
        let var = m.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let target = 2.0 / (fan_in + fan_out) as f64;
        assert!((var - target).abs() < 0.1 * target, "var {var} vs {target}");
    }

    #[test]
    fn dropout_rate_zero_and_eval_are_identity() {
        let mut rng = Rng::new(0);
        let ones = Matrix::filled(4, 3, 1.0);
        assert_eq!(dropout_mask(4, 3, 0.0, Mode::Train, &mut rng).unwrap(), ones);
        assert_eq!(dropout_mask(4, 3, 0.9, Mode::Eval, &mut rng).unwrap(), ones);
    }

    #[test]
    fn dropout_mask_has_unit_mean() {
        let m = dropout_mask(1000, 1000, 0.2, Mode::Train, &mut Rng::new(5)).unwrap();
        assert!(m.data().iter().all(|&v| v == 0.0 || v == 1.25));
        let mean = m.sum() / m.len() as f64;
        assert!((mean - 1.0).abs() < 1e-2, "mean {mean}");
    }

    #[test]
    fn dropout_rejects_rate_one() {
        assert!(dropout_mask(2, 2, 1.0, Mode::Train, &mut Rng::new(0)).is_err());
    }
}
