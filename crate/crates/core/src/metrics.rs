//! Ranking and threshold metrics for binary risk scores.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_DECISION_THRESHOLD: f64 = 0.5;

fn check(scores: &[f64], labels: &[bool]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::shape("metric inputs", (scores.len(), 1), (labels.len(), 1)));
    }
    if let Some(i) = scores.iter().position(|s| s.is_nan()) {
        return Err(Error::NonFinite(format!("score {i} is NaN")));
    }
    Ok(())
}

/// `(positives, negatives)` of each group of equal scores, ordered by
/// descending score.
fn tie_groups(scores: &[f64], labels: &[bool]) -> Vec<(f64, usize, usize)> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(Ordering::Equal));
    let mut groups: Vec<(f64, usize, usize)> = Vec::new();
    for i in order {
        let s = scores[i];
        match groups.last_mut() {
            Some(g) if g.0 == s => {}
            _ => groups.push((s, 0, 0)),
        }
        let g = groups.last_mut().expect("just pushed");
        if labels[i] {
            g.1 += 1;
        } else {
            g.2 += 1;
        }
    }
    groups
}

/// Probability that a random positive outranks a random negative, ties
/// counting one half.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check(scores, labels)?;
    let pos = labels.iter().filter(|&&y| y).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric("AUROC needs both classes"));
    }
    let mut negatives_below = neg;
    let (mut concordant, mut tied) = (0u64, 0u64);
    for (_, p, n) in tie_groups(scores, labels) {
        negatives_below -= n;
        concordant += (p * negatives_below) as u64;
        tied += (p * n) as u64;
    }
    Ok((concordant as f64 + 0.5 * tied as f64) / (pos as f64 * neg as f64))
}

/// Average precision over descending thresholds with tied scores admitted
/// together.
pub fn auprc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check(scores, labels)?;
    let pos = labels.iter().filter(|&&y| y).count();
    if pos == 0 {
        return Err(Error::UndefinedMetric("AUPRC needs at least one positive"));
    }
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut ap = 0.0;
    for (_, p, n) in tie_groups(scores, labels) {
        tp += p;
        fp += n;
        if p > 0 {
            ap += (p as f64 / pos as f64) * (tp as f64 / (tp + fp) as f64);
        }
    }
    Ok(ap)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Confusion {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Predicts positive when `score > threshold`; empty ratios are zero.
pub fn confusion_metrics(scores: &[f64], labels: &[bool], threshold: f64) -> Result<Confusion> {
    check(scores, labels)?;
    let (mut tp, mut fp, mut tn, mut fneg) = (0, 0, 0, 0);
    for (&s, &y) in scores.iter().zip(labels) {
        match (s > threshold, y) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fneg += 1,
        }
    }
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fneg);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(Confusion {
        accuracy: ratio(tp + tn, scores.len()),
        precision,
        recall,
        f1,
    })
}

/// `min(recall, precision)` at a fixed threshold.
pub fn min_se_pplus(scores: &[f64], labels: &[bool], threshold: f64) -> Result<f64> {
    let c = confusion_metrics(scores, labels, threshold)?;
    Ok(c.recall.min(c.precision))
}

/// Best `min(recall, precision)` over every threshold that separates
/// distinct scores.
pub fn min_se_pplus_sweep(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check(scores, labels)?;
    let pos = labels.iter().filter(|&&y| y).count();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut best = 0.0f64;
    for (_, p, n) in tie_groups(scores, labels) {
        tp += p;
        fp += n;
        best = best.max(ratio(tp, pos).min(ratio(tp, tp + fp)));
    }
    Ok(best)
}

/// Every metric for one set of scores.
///
/// Ranking metrics are `None` when the group lacks one of the classes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub auroc: Option<f64>,
    pub auprc: Option<f64>,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub min_se_pplus: f64,
    pub decision_threshold: f64,
    /// Whether `min_se_pplus` is the best value over all thresholds.
    pub min_se_pplus_sweep: bool,
    pub n_patients: usize,
    pub n_positive: usize,
}

impl MetricsReport {
    pub fn compute(scores: &[f64], labels: &[bool], threshold: f64, sweep: bool) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::Data("cannot evaluate an empty cohort".into()));
        }
        let defined = |r: Result<f64>| match r {
            Ok(v) => Ok(Some(v)),
            Err(Error::UndefinedMetric(_)) => Ok(None),
            Err(e) => Err(e),
        };
        let c = confusion_metrics(scores, labels, threshold)?;
        Ok(MetricsReport {
            auroc: defined(auroc(scores, labels))?,
            auprc: defined(auprc(scores, labels))?,
            accuracy: c.accuracy,
            precision: c.precision,
            recall: c.recall,
            f1: c.f1,
            min_se_pplus: if sweep {
                min_se_pplus_sweep(scores, labels)?
            } else {
                c.recall.min(c.precision)
            },
            decision_threshold: threshold,
            min_se_pplus_sweep: sweep,
            n_patients: scores.len(),
            n_positive: labels.iter().filter(|&&y| y).count(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn labels(bits: &[u8]) -> Vec<bool> {
        bits.iter().map(|&b| b == 1).collect()
    }

    fn pairwise_auroc(s: &[f64], y: &[bool]) -> f64 {
        let mut total = 0.0;
        let mut pairs = 0.0;
        for i in 0..s.len() {
            for j in 0..s.len() {
                if y[i] && !y[j] {
                    pairs += 1.0;
                    total += match s[i].partial_cmp(&s[j]).unwrap() {
                        Ordering::Greater => 1.0,
                        Ordering::Equal => 0.5,
                        Ordering::Less => 0.0,
                    };
                }
            }
        }
        total / pairs
    }

    #[test]
    fn auroc_cases() {
        let y = labels(&[0, 0, 1, 1]);
        assert_eq!(auroc(&[0.1, 0.4, 0.35, 0.8], &y).unwrap(), 0.75);
        assert_eq!(auroc(&[0.1, 0.2, 0.3, 0.4], &y).unwrap(), 1.0);
        assert_eq!(auroc(&[0.3; 4], &y).unwrap(), 0.5);
        assert!(matches!(auroc(&[0.1, 0.2], &labels(&[1, 1])), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn auprc_cases() {
        let v = auprc(&[0.9, 0.8, 0.2], &labels(&[1, 0, 1])).unwrap();
        assert!((v - 5.0 / 6.0).abs() < 1e-15);
        assert_eq!(auprc(&[0.1, 0.5, 0.3], &labels(&[1, 1, 1])).unwrap(), 1.0);
        assert_eq!(auprc(&[0.9, 0.8, 0.2, 0.1], &labels(&[1, 1, 0, 0])).unwrap(), 1.0);
        assert!(auprc(&[0.1], &labels(&[0])).is_err());
    }

    #[test]
    fn confusion_cases() {
        let y = labels(&[1, 0, 1]);
        let c = confusion_metrics(&[0.9, 0.8, 0.2], &y, 0.5).unwrap();
        assert_eq!((c.precision, c.recall, c.f1), (0.5, 0.5, 0.5));
        assert!((c.accuracy - 1.0 / 3.0).abs() < 1e-15);
        let none = confusion_metrics(&[0.9, 0.8, 0.2], &y, 1.0).unwrap();
        assert_eq!((none.precision, none.recall, none.f1), (0.0, 0.0, 0.0));
        let perfect = confusion_metrics(&[0.9, 0.1, 0.7], &y, 0.5).unwrap();
        assert_eq!(perfect, Confusion { accuracy: 1.0, precision: 1.0, recall: 1.0, f1: 1.0 });
    }

    #[test]
    fn min_se_pplus_cases() {
        let y = labels(&[1, 0, 1]);
        assert_eq!(min_se_pplus(&[0.9, 0.8, 0.2], &y, 0.5).unwrap(), 0.5);
        assert_eq!(min_se_pplus(&[0.9, 0.1, 0.7], &y, 0.5).unwrap(), 1.0);
        assert_eq!(min_se_pplus(&[0.4, 0.1, 0.3], &y, 0.5).unwrap(), 0.0);
        // Sweep: admitting everything gives recall 1, precision 2/3.
        assert!((min_se_pplus_sweep(&[0.9, 0.8, 0.2], &y).unwrap() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn report_handles_single_class_groups() {
        let r = MetricsReport::compute(&[0.2, 0.7], &[false, false], 0.5, false).unwrap();
        assert_eq!((r.auroc, r.auprc), (None, None));
        assert_eq!(r.n_positive, 0);
        assert!(MetricsReport::compute(&[], &[], 0.5, false).is_err());
    }

    proptest! {
        #[test]
        fn auroc_matches_pairwise_and_is_rank_invariant(
            raw in proptest::collection::vec((0u8..12, any::<bool>()), 2..80)
        ) {
            let s: Vec<f64> = raw.iter().map(|(v, _)| f64::from(*v) / 11.0).collect();
            let y: Vec<bool> = raw.iter().map(|(_, b)| *b).collect();
            prop_assume!(y.iter().any(|&b| b) && y.iter().any(|&b| !b));
            let a = auroc(&s, &y).unwrap();
            prop_assert!((a - pairwise_auroc(&s, &y)).abs() <= 1e-12);
            let warped: Vec<f64> = s.iter().map(|v| (3.0 * v).exp() - 7.0).collect();
            prop_assert_eq!(a, auroc(&warped, &y).unwrap());
        }

        #[test]
        fn f1_is_harmonic_mean(
            raw in proptest::collection::vec((0.0f64..1.0, any::<bool>()), 1..60),
            t in 0.0f64..1.0,
        ) {
            let s: Vec<f64> = raw.iter().map(|(v, _)| *v).collect();
            let y: Vec<bool> = raw.iter().map(|(_, b)| *b).collect();
            let c = confusion_metrics(&s, &y, t).unwrap();
            if c.precision + c.recall == 0.0 {
                prop_assert_eq!(c.f1, 0.0);
            } else {
                prop_assert!((c.f1 - 2.0 / (1.0 / c.precision + 1.0 / c.recall)).abs() < 1e-12);
            }
            let fixed = min_se_pplus(&s, &y, t).unwrap();
            prop_assert!(min_se_pplus_sweep(&s, &y).unwrap() >= fixed - 1e-15);
        }
    }
}
