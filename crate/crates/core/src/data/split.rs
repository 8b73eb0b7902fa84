use serde::{Deserialize, Serialize};

use super::Cohort;
use crate::error::{Error, Result};
use crate::numeric::Rng;

/// Train/validation/test fractions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios(pub f64, pub f64, pub f64);

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios(0.7, 0.15, 0.15)
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let SplitRatios(a, b, c) = *self;
        if a <= 0.0 || b <= 0.0 || c <= 0.0 || ((a + b + c) - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split ratios must be positive and sum to 1, got {a}:{b}:{c}"
            )));
        }
        Ok(())
    }

    /// Cut points `⌊aN⌋` and `⌊(a+b)N⌋`.
    pub fn cuts(&self, n: usize) -> (usize, usize) {
        // The epsilon keeps exact products such as 0.7·10 from flooring low.
        let first = (self.0 * n as f64 + 1e-9).floor() as usize;
        let second = ((self.0 + self.1) * n as f64 + 1e-9).floor() as usize;
        (first.min(n), second.min(n))
    }
}

/// Random permutation, then contiguous cuts.
pub fn split(cohort: &Cohort, ratios: SplitRatios, rng: &mut Rng) -> Result<(Cohort, Cohort, Cohort)> {
    ratios.validate()?;
    let n = cohort.len();
    let order = rng.permutation(n);
    let (a, b) = ratios.cuts(n);
    if a == 0 || b == a || b == n {
        return Err(Error::Data(format!(
            "split of {n} patients leaves an empty part ({a}/{}/{})",
            b - a,
            n - b
        )));
    }
    Ok((
        cohort.subset(&order[..a]),
        cohort.subset(&order[a..b]),
        cohort.subset(&order[b..]),
    ))
}

/// Splits into (carriers of `code`, everyone else).
pub fn filter_by_code(cohort: &Cohort, code: &str) -> Result<(Cohort, Cohort)> {
    let Some(col) = cohort.code_vocab.iter().position(|c| c == code) else {
        let mut ranked: Vec<(usize, &String)> = cohort
            .code_vocab
            .iter()
            .map(|c| (strsim::levenshtein(c, code), c))
            .collect();
        ranked.sort();
        return Err(Error::UnknownCode {
            code: code.to_string(),
            suggestions: ranked.into_iter().take(3).map(|(_, c)| c.clone()).collect(),
        });
    };
    let (with, without): (Vec<usize>, Vec<usize>) =
        (0..cohort.len()).partition(|&i| cohort.patients[i].icd[col]);
    Ok((cohort.subset(&with), cohort.subset(&without)))
}

#[cfg(test)]
mod tests {
    use super::super::{PatientRecord, Series};
    use super::*;

    fn cohort(n: usize, carriers: impl Fn(usize) -> bool) -> Cohort {
        let patients = (0..n)
            .map(|i| PatientRecord {
                patient_id: format!("p{i}"),
                series: Series::empty(1, 1),
                icd: vec![carriers(i), true],
                label: false,
            })
            .collect();
        Cohort::new(patients, vec!["x".into()], vec!["428.0".into(), "V00".into()]).unwrap()
    }

    fn ids(c: &Cohort) -> Vec<String> {
        c.patients.iter().map(|p| p.patient_id.clone()).collect()
    }

    #[test]
    fn floor_sizes() {
        for (n, expect) in [(100, (70, 15, 15)), (10, (7, 1, 2))] {
            let (a, b, c) = split(&cohort(n, |_| false), SplitRatios::default(), &mut Rng::new(1)).unwrap();
            assert_eq!((a.len(), b.len(), c.len()), expect);
        }
    }

    #[test]
    fn same_seed_same_split() {
        let c = cohort(50, |_| false);
        let x = split(&c, SplitRatios::default(), &mut Rng::new(4)).unwrap();
        let y = split(&c, SplitRatios::default(), &mut Rng::new(4)).unwrap();
        assert_eq!(ids(&x.0), ids(&y.0));
        assert_eq!(ids(&x.2), ids(&y.2));
    }

    #[test]
    fn pieces_are_disjoint_and_exhaustive() {
        let c = cohort(37, |_| false);
        for seed in 0..20 {
            let (a, b, t) = split(&c, SplitRatios::default(), &mut Rng::new(seed)).unwrap();
            let mut all: Vec<String> = [ids(&a), ids(&b), ids(&t)].concat();
            all.sort();
            let mut expect = ids(&c);
            expect.sort();
            assert_eq!(all, expect);
        }
    }

    #[test]
    fn empty_part_is_an_error() {
        assert!(split(&cohort(3, |_| false), SplitRatios::default(), &mut Rng::new(0)).is_err());
        assert!(split(&cohort(10, |_| false), SplitRatios(0.5, 0.5, 0.0), &mut Rng::new(0)).is_err());
    }

    #[test]
    fn filter_partitions() {
        let c = cohort(10, |i| i % 3 == 0);
        let (g1, g2) = filter_by_code(&c, "428.0").unwrap();
        assert_eq!(g1.len() + g2.len(), 10);
        assert_eq!(g1.len(), 4);
        let (none, all) = filter_by_code(&cohort(5, |_| false), "428.0").unwrap();
        assert_eq!((none.len(), all.len()), (0, 5));
        let (all, none) = filter_by_code(&c, "V00").unwrap();
        assert_eq!((all.len(), none.len()), (10, 0));
    }

    #[test]
    fn unknown_code_suggests_neighbors() {
        let err = filter_by_code(&cohort(2, |_| true), "428.1").unwrap_err();
        match err {
            Error::UnknownCode { suggestions, .. } => assert_eq!(suggestions[0], "428.0"),
            other => panic!("{other}"),
        }
    }
}
