//! Central finite-difference verification of analytic gradients.

use super::Parameters;
use crate::error::{Error, Result};

pub const DEFAULT_STEP: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// `name[index]` of the entry with the largest error.
    pub worst: Option<String>,
    pub checked: usize,
}

/// Relative error `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Perturbs every scalar of `params` by `±h` and compares the central
/// difference of `loss_fn` against `analytic`.
pub fn finite_diff_check<P, F>(loss_fn: F, params: &P, analytic: &P, h: f64) -> Result<GradCheckReport>
where
    P: Parameters,
    F: Fn(&P) -> f64,
{
    if !(h > 0.0) {
        return Err(Error::Config(format!("finite-difference step must be positive, got {h}")));
    }
    let grads: Vec<(String, Vec<f64>)> = analytic
        .tensors()
        .into_iter()
        .map(|(n, m)| (n, m.data().to_vec()))
        .collect();
    let shapes: Vec<usize> = params.tensors().iter().map(|(_, m)| m.len()).collect();
    if grads.len() != shapes.len() || grads.iter().zip(&shapes).any(|((_, g), &n)| g.len() != n) {
        return Err(Error::Config("analytic gradients do not match parameter layout".into()));
    }

    let mut work = params.clone();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: None,
        checked: 0,
    };
    for (t, (name, grad)) in grads.iter().enumerate() {
        for (i, &a) in grad.iter().enumerate() {
            let original = work.tensors()[t].1.data()[i];
            set_entry(&mut work, t, i, original + h);
            let plus = loss_fn(&work);
            set_entry(&mut work, t, i, original - h);
            let minus = loss_fn(&work);
            set_entry(&mut work, t, i, original);
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::NonFinite(format!("loss while perturbing {name}[{i}]")));
            }
            let numeric = (plus - minus) / (2.0 * h);
            let err = relative_error(a, numeric);
            if report.worst.is_none() || err > report.max_relative_error {
                report.max_relative_error = err;
                report.worst = Some(format!("{name}[{i}]"));
            }
            report.checked += 1;
        }
    }
    Ok(report)
}

fn set_entry<P: Parameters>(p: &mut P, tensor: usize, index: usize, value: f64) {
    let mut tensors = p.tensors_mut();
    tensors[tensor].1.data_mut()[index] = value;
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{Matrix, NamedParams};

    fn params() -> NamedParams {
        NamedParams::new(vec![
            ("a".into(), Matrix::from_vec(2, 2, vec![0.6, -1.2, 1.5, 0.9]).unwrap()),
            ("b".into(), Matrix::from_vec(1, 3, vec![-0.7, 1.1, 1.7]).unwrap()),
        ])
    }

    fn half_norm(p: &NamedParams) -> f64 {
        p.tensors()
            .iter()
            .flat_map(|(_, m)| m.data().iter())
            .map(|v| 0.5 * v * v)
            .sum()
    }

    #[test]
    fn quadratic_gradient_is_exact() {
        let p = params();
        let r = finite_diff_check(half_norm, &p, &p, DEFAULT_STEP).unwrap();
        assert!(r.max_relative_error < 1e-9, "{r:?}");
        assert_eq!(r.checked, 7);
    }

    #[test]
    fn doubled_gradient_is_detected() {
        let p = params();
        let mut wrong = p.clone();
        for (_, m) in wrong.tensors_mut() {
            *m = m.scale(2.0);
        }
        let r = finite_diff_check(half_norm, &p, &wrong, DEFAULT_STEP).unwrap();
        assert!((r.max_relative_error - 0.5).abs() < 1e-6, "{r:?}");
    }

    #[test]
    fn non_finite_loss_names_parameter() {
        let p = params();
        let err = finite_diff_check(|_| f64::NAN, &p, &p, DEFAULT_STEP).unwrap_err();
        assert!(err.to_string().contains("a[0]"), "{err}");
    }
}
