//! Patient records, cohorts, and the preprocessing pipeline around them.

mod io;
mod preprocess;
pub mod schema;
mod split;
mod synthetic;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::Matrix;

pub use io::{load_cohort, write_cohort, LoadOptions, MAX_WINDOW_HOURS};
pub use preprocess::{fit_preprocess, impute_mean, preprocess_with, standardize, Imputation};
pub use split::{filter_by_code, split, SplitRatios};
pub use synthetic::{gen_synthetic, write_synthetic, SyntheticSpec};

/// An `M × T` grid of hourly measurements; unobserved cells are flagged
/// absent and hold `0.0` until imputed.
#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    values: Matrix,
    observed: Vec<bool>,
}

impl Series {
    pub fn empty(variables: usize, hours: usize) -> Self {
        Series {
            values: Matrix::zeros(variables, hours),
            observed: vec![false; variables * hours],
        }
    }

    /// A fully observed series.
    pub fn complete(values: Matrix) -> Self {
        let observed = vec![true; values.len()];
        Series { values, observed }
    }

    pub fn variables(&self) -> usize {
        self.values.rows()
    }

    pub fn hours(&self) -> usize {
        self.values.cols()
    }

    pub fn get(&self, var: usize, hour: usize) -> Option<f64> {
        let i = var * self.hours() + hour;
        self.observed[i].then(|| self.values.data()[i])
    }

    pub fn set(&mut self, var: usize, hour: usize, value: f64) {
        let i = var * self.hours() + hour;
        self.values.data_mut()[i] = value;
        self.observed[i] = true;
    }

    pub fn is_complete(&self) -> bool {
        self.observed.iter().all(|&o| o)
    }

    pub fn observed_count(&self) -> usize {
        self.observed.iter().filter(|&&o| o).count()
    }

    /// Variables × hours matrix; fails while any cell is absent.
    pub fn to_matrix(&self) -> Result<&Matrix> {
        if !self.is_complete() {
            return Err(Error::Data("series still has absent cells; impute first".into()));
        }
        Ok(&self.values)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PatientRecord {
    pub patient_id: String,
    pub series: Series,
    pub icd: Vec<bool>,
    /// `true` for in-hospital death.
    pub label: bool,
}

/// Per-variable mean and standard deviation shared by every split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Cohort {
    pub patients: Vec<PatientRecord>,
    pub schema: Vec<String>,
    pub code_vocab: Vec<String>,
    pub norm_stats: Option<NormStats>,
}

impl Cohort {
    /// Validates shared shapes and unique ids.
    pub fn new(
        patients: Vec<PatientRecord>,
        schema: Vec<String>,
        code_vocab: Vec<String>,
    ) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for p in &patients {
            if !seen.insert(p.patient_id.as_str()) {
                return Err(Error::Data(format!("duplicate patient_id {}", p.patient_id)));
            }
            if p.series.variables() != schema.len() {
                return Err(Error::Data(format!(
                    "patient {} has {} variables, schema has {}",
                    p.patient_id,
                    p.series.variables(),
                    schema.len()
                )));
            }
            if p.icd.len() != code_vocab.len() {
                return Err(Error::Data(format!(
                    "patient {} has {} codes, vocabulary has {}",
                    p.patient_id,
                    p.icd.len(),
                    code_vocab.len()
                )));
            }
        }
        if let Some(first) = patients.first() {
            let t = first.series.hours();
            if let Some(p) = patients.iter().find(|p| p.series.hours() != t) {
                return Err(Error::Data(format!("patient {} window differs", p.patient_id)));
            }
        }
        Ok(Cohort {
            patients,
            schema,
            code_vocab,
            norm_stats: None,
        })
    }

    pub fn len(&self) -> usize {
        self.patients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patients.is_empty()
    }

    pub fn window_hours(&self) -> usize {
        self.patients.first().map_or(0, |p| p.series.hours())
    }

    pub fn positives(&self) -> usize {
        self.patients.iter().filter(|p| p.label).count()
    }

    pub fn labels(&self) -> Vec<bool> {
        self.patients.iter().map(|p| p.label).collect()
    }

    /// A cohort over the given patient indices, keeping schema, vocabulary
    /// and statistics.
    pub fn subset(&self, indices: &[usize]) -> Cohort {
        Cohort {
            patients: indices.iter().map(|&i| self.patients[i].clone()).collect(),
            schema: self.schema.clone(),
            code_vocab: self.code_vocab.clone(),
            norm_stats: self.norm_stats.clone(),
        }
    }

    /// Diagnosis codes of the listed patients as an `N × g` 0/1 matrix.
    pub fn icd_matrix(&self, indices: &[usize]) -> Matrix {
        let g = self.code_vocab.len();
        let mut m = Matrix::zeros(indices.len(), g);
        for (r, &i) in indices.iter().enumerate() {
            for (c, &has) in self.patients[i].icd.iter().enumerate() {
                if has {
                    m.set(r, c, 1.0);
                }
            }
        }
        m
    }
}
