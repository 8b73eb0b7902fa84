//! Mean imputation and z-scoring.

use super::{Cohort, NormStats};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct Imputation {
    pub cohort: Cohort,
    /// Per-variable fill values that were used.
    pub means: Vec<f64>,
    pub warnings: Vec<String>,
}

/// Per-variable mean over observed cells; `None` where nothing was observed.
fn observed_means(cohort: &Cohort) -> Vec<Option<f64>> {
    let m = cohort.schema.len();
    let mut sums = vec![0.0; m];
    let mut counts = vec![0usize; m];
    for p in &cohort.patients {
        for v in 0..m {
            for t in 0..p.series.hours() {
                if let Some(x) = p.series.get(v, t) {
                    sums[v] += x;
                    counts[v] += 1;
                }
            }
        }
    }
    sums.into_iter()
        .zip(counts)
        .map(|(s, c)| (c > 0).then(|| s / c as f64))
        .collect()
}

/// Fills absent cells with per-variable means: the supplied ones, or the
/// cohort's own observed means when `means` is `None`.
pub fn impute_mean(cohort: &Cohort, means: Option<&[f64]>) -> Result<Imputation> {
    let mut warnings = Vec::new();
    let means: Vec<f64> = match means {
        Some(m) => {
            if m.len() != cohort.schema.len() {
                return Err(Error::Data(format!(
                    "{} imputation means for {} variables",
                    m.len(),
                    cohort.schema.len()
                )));
            }
            m.to_vec()
        }
        None => observed_means(cohort)
            .into_iter()
            .zip(&cohort.schema)
            .map(|(mean, name)| {
                mean.unwrap_or_else(|| {
                    warnings.push(format!("variable {name:?} never observed; imputed with 0"));
                    0.0
                })
            })
            .collect(),
    };

    let mut out = cohort.clone();
    for p in &mut out.patients {
        for (v, &fill) in means.iter().enumerate() {
            for t in 0..p.series.hours() {
                if p.series.get(v, t).is_none() {
                    p.series.set(v, t, fill);
                }
            }
        }
    }
    Ok(Imputation {
        cohort: out,
        means,
        warnings,
    })
}

fn complete_moments(cohort: &Cohort) -> Result<NormStats> {
    let m = cohort.schema.len();
    let mut sums = vec![0.0; m];
    let mut n = 0usize;
    for p in &cohort.patients {
        let x = p.series.to_matrix()?;
        for (v, s) in sums.iter_mut().enumerate() {
            *s += x.row(v).iter().sum::<f64>();
        }
        n += x.cols();
    }
    let n = n.max(1) as f64;
    let mean: Vec<f64> = sums.iter().map(|s| s / n).collect();
    let mut sq = vec![0.0; m];
    for p in &cohort.patients {
        let x = p.series.to_matrix()?;
        for (v, s) in sq.iter_mut().enumerate() {
            *s += x.row(v).iter().map(|&a| (a - mean[v]).powi(2)).sum::<f64>();
        }
    }
    let std = sq.iter().map(|s| (s / n).sqrt()).collect();
    Ok(NormStats { mean, std })
}

/// Per-variable z-score with the given statistics, or with this cohort's
/// own when `stats` is `None`. Zero-variance variables map to 0.
pub fn standardize(cohort: &Cohort, stats: Option<&NormStats>) -> Result<Cohort> {
    let stats = match stats {
        Some(s) => {
            if s.mean.len() != cohort.schema.len() || s.std.len() != cohort.schema.len() {
                return Err(Error::Data(format!(
                    "normalization statistics cover {} variables, schema has {}",
                    s.mean.len(),
                    cohort.schema.len()
                )));
            }
            s.clone()
        }
        None => complete_moments(cohort)?,
    };
    let mut out = cohort.clone();
    for p in &mut out.patients {
        let hours = p.series.hours();
        for v in 0..stats.mean.len() {
            for t in 0..hours {
                let x = p.series.get(v, t).ok_or_else(|| {
                    Error::Data("series still has absent cells; impute first".into())
                })?;
                let z = if stats.std[v] > 1e-12 {
                    (x - stats.mean[v]) / stats.std[v]
                } else {
                    0.0
                };
                p.series.set(v, t, z);
            }
        }
    }
    out.norm_stats = Some(stats);
    Ok(out)
}

/// Imputes and standardizes a training cohort, returning the statistics to
/// reuse on every other split.
pub fn fit_preprocess(train: &Cohort) -> Result<(Cohort, NormStats, Vec<String>)> {
    let imp = impute_mean(train, None)?;
    let mut stats = complete_moments(&imp.cohort)?;
    stats.mean = imp.means.clone();
    let cohort = standardize(&imp.cohort, Some(&stats))?;
    Ok((cohort, stats, imp.warnings))
}

/// Applies training statistics to another split.
pub fn preprocess_with(cohort: &Cohort, stats: &NormStats) -> Result<Cohort> {
    let imp = impute_mean(cohort, Some(&stats.mean))?;
    standardize(&imp.cohort, Some(stats))
}

#[cfg(test)]
mod tests {
    use super::super::{PatientRecord, Series};
    use super::*;

    fn cohort(rows: &[&[Option<f64>]]) -> Cohort {
        // One variable per row of `rows`, one patient per column entry.
        let m = rows.len();
        let n = rows[0].len();
        let patients = (0..n)
            .map(|i| {
                let mut s = Series::empty(m, 1);
                for (v, row) in rows.iter().enumerate() {
                    if let Some(x) = row[i] {
                        s.set(v, 0, x);
                    }
                }
                PatientRecord {
                    patient_id: format!("p{i}"),
                    series: s,
                    icd: vec![],
                    label: i % 2 == 0,
                }
            })
            .collect();
        let schema = (0..m).map(|v| format!("v{v}")).collect();
        Cohort::new(patients, schema, vec![]).unwrap()
    }

    fn column(c: &Cohort, v: usize) -> Vec<f64> {
        c.patients.iter().map(|p| p.series.get(v, 0).unwrap()).collect()
    }

    #[test]
    fn fills_with_observed_mean() {
        let c = cohort(&[&[Some(1.0), None, Some(3.0)]]);
        let imp = impute_mean(&c, None).unwrap();
        assert_eq!(column(&imp.cohort, 0), vec![1.0, 2.0, 3.0]);
        assert!(imp.warnings.is_empty());
    }

    #[test]
    fn complete_cohort_is_unchanged() {
        let c = cohort(&[&[Some(1.0), Some(5.0)]]);
        assert_eq!(impute_mean(&c, None).unwrap().cohort, c);
    }

    #[test]
    fn never_observed_variable_becomes_zero_with_warning() {
        let c = cohort(&[&[Some(1.0), Some(2.0)], &[None, None]]);
        let imp = impute_mean(&c, None).unwrap();
        assert_eq!(column(&imp.cohort, 1), vec![0.0, 0.0]);
        assert_eq!(imp.warnings.len(), 1);
    }

    #[test]
    fn constant_variable_standardizes_to_zero() {
        let c = cohort(&[&[Some(4.0), Some(4.0), Some(4.0)]]);
        let s = standardize(&c, None).unwrap();
        assert_eq!(column(&s, 0), vec![0.0; 3]);
    }

    #[test]
    fn standardized_training_moments() {
        let c = cohort(&[
            &[Some(1.0), None, Some(3.0), Some(10.0), None],
            &[Some(-2.0), Some(0.5), None, Some(0.25), Some(7.0)],
        ]);
        let (s, stats, _) = fit_preprocess(&c).unwrap();
        for v in 0..2 {
            let col = column(&s, v);
            let n = col.len() as f64;
            let mean = col.iter().sum::<f64>() / n;
            let sd = (col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
            assert!(mean.abs() < 1e-10 && (sd - 1.0).abs() < 1e-10, "{mean} {sd}");
        }
        assert_eq!(s.norm_stats.as_ref(), Some(&stats));
    }

    #[test]
    fn train_means_reproduce_after_imputation() {
        let c = cohort(&[&[Some(1.5), None, Some(3.25), None, Some(-0.75)]]);
        let imp = impute_mean(&c, None).unwrap();
        let again = observed_means(&imp.cohort);
        assert!((again[0].unwrap() - imp.means[0]).abs() < 1e-10);
    }

    #[test]
    fn validation_uses_training_statistics() {
        let train = cohort(&[&[Some(0.0), Some(2.0)]]);
        let val = cohort(&[&[Some(10.0), Some(30.0)]]);
        let (_, stats, _) = fit_preprocess(&train).unwrap();
        let v = preprocess_with(&val, &stats).unwrap();
        assert_eq!(column(&v, 0), vec![9.0, 29.0]);
        assert_ne!(standardize(&val, None).unwrap(), v);
    }

    #[test]
    fn stats_schema_mismatch() {
        let c = cohort(&[&[Some(1.0)]]);
        let bad = NormStats {
            mean: vec![0.0, 0.0],
            std: vec![1.0, 1.0],
        };
        assert!(standardize(&c, Some(&bad)).is_err());
    }
}
