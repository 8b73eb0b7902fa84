//! Synthetic ICU cohorts in the on-disk format.
//!
//! Each variable follows a patient-specific AR(1) walk around a patient
//! offset; patients who die are shifted by `class_separation` standard
//! deviations along the variable's risk direction. Diagnosis codes have a
//! base prevalence whose log-odds move by `±code_signal_strength` (scaled
//! per code) with the label, so hyperedges carry label signal.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::schema::{VariableSpec, DEFAULT_VARIABLES, SYNTHETIC_CODES};
use super::{write_cohort, Cohort, PatientRecord, Series};
use crate::error::{Error, Result};
use crate::numeric::{sigmoid, Rng};

const GLOBAL_STREAM: u64 = 0;
const PATIENT_STREAM: u64 = 1;

const WALK_PERSISTENCE: f64 = 0.85;
const WALK_SD: f64 = 0.6;
const OFFSET_SD: f64 = 0.8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_patients: usize,
    pub positive_fraction: f64,
    /// Number of physiological variables (M).
    pub variables: usize,
    /// Hourly bins per patient (T).
    pub hours: usize,
    /// Diagnosis-code vocabulary size (g).
    pub codes: usize,
    pub class_separation: f64,
    pub missing_rate: f64,
    pub code_signal_strength: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_patients: 2000,
            positive_fraction: 0.2,
            variables: 16,
            hours: 48,
            codes: 20,
            class_separation: 0.5,
            missing_rate: 0.3,
            code_signal_strength: 1.0,
        }
    }
}

impl SyntheticSpec {
    /// Same shape, no label signal anywhere.
    pub fn null_control(&self) -> Self {
        SyntheticSpec {
            class_separation: 0.0,
            code_signal_strength: 0.0,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.n_patients == 0 {
            return bad("n_patients must be positive".into());
        }
        if !(self.positive_fraction > 0.0 && self.positive_fraction < 1.0) {
            return bad(format!("positive_fraction must lie in (0, 1), got {}", self.positive_fraction));
        }
        if self.variables == 0 || self.hours == 0 {
            return bad("variables and hours must be positive".into());
        }
        if !(self.class_separation >= 0.0) || !(self.code_signal_strength >= 0.0) {
            return bad("class_separation and code_signal_strength must be non-negative".into());
        }
        if !(0.0..1.0).contains(&self.missing_rate) {
            return bad(format!("missing_rate must lie in [0, 1), got {}", self.missing_rate));
        }
        Ok(())
    }
}

fn variable_specs(m: usize, rng: &mut Rng) -> Vec<(String, VariableSpec)> {
    (0..m)
        .map(|v| match DEFAULT_VARIABLES.get(v) {
            Some(spec) => (spec.name.to_string(), *spec),
            None => {
                let dir = if rng.bernoulli(0.5) { 1.0 } else { -1.0 };
                let spec = VariableSpec {
                    name: "",
                    mean: 0.0,
                    sd: 1.0,
                    min: f64::NEG_INFINITY,
                    max: f64::INFINITY,
                    decimals: 2,
                    risk_direction: dir,
                };
                (format!("var_{v:02}"), spec)
            }
        })
        .collect()
}

struct CodeModel {
    name: String,
    logit_base: f64,
    effect: f64,
}

fn code_models(g: usize, strength: f64, rng: &mut Rng) -> Vec<CodeModel> {
    (0..g)
        .map(|j| {
            let name = SYNTHETIC_CODES
                .get(j)
                .map_or_else(|| format!("V{:02}", j - SYNTHETIC_CODES.len()), |c| c.to_string());
            let prevalence = rng.uniform_range(0.05, 0.3);
            let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
            let effect = strength * sign * rng.uniform_range(0.5, 1.0);
            CodeModel {
                name,
                logit_base: (prevalence / (1.0 - prevalence)).ln(),
                effect,
            }
        })
        .collect()
}

fn round_to(x: f64, decimals: u32) -> f64 {
    let scale = 10f64.powi(decimals as i32);
    (x * scale).round() / scale
}

pub fn gen_synthetic(spec: &SyntheticSpec, rng: &Rng) -> Result<Cohort> {
    spec.validate()?;
    let mut global = rng.split(GLOBAL_STREAM);
    let vars = variable_specs(spec.variables, &mut global);
    let codes = code_models(spec.codes, spec.code_signal_strength, &mut global);

    let mut order: Vec<usize> = (0..codes.len()).collect();
    order.sort_by(|&a, &b| codes[a].name.cmp(&codes[b].name));
    let vocab: Vec<String> = order.iter().map(|&j| codes[j].name.clone()).collect();

    let width = spec.n_patients.to_string().len().max(5);
    let patient_rng = rng.split(PATIENT_STREAM);
    let patients = (0..spec.n_patients)
        .map(|i| {
            let mut r = patient_rng.split(i as u64);
            let label = r.bernoulli(spec.positive_fraction);
            let y = if label { 1.0 } else { 0.0 };

            let mut series = Series::empty(spec.variables, spec.hours);
            for (v, (_, vs)) in vars.iter().enumerate() {
                let shift = spec.class_separation * y * vs.risk_direction;
                let offset = OFFSET_SD * r.normal();
                let mut walk = WALK_SD * r.normal();
                for t in 0..spec.hours {
                    if t > 0 {
                        let innovation = (1.0 - WALK_PERSISTENCE * WALK_PERSISTENCE).sqrt();
                        walk = WALK_PERSISTENCE * walk + innovation * WALK_SD * r.normal();
                    }
                    let z = shift + offset + walk;
                    let value = round_to((vs.mean + vs.sd * z).clamp(vs.min, vs.max), vs.decimals);
                    if !r.bernoulli(spec.missing_rate) {
                        series.set(v, t, value);
                    }
                }
            }

            let signed = 2.0 * y - 1.0;
            let drawn: Vec<bool> = codes
                .iter()
                .map(|c| r.bernoulli(sigmoid(c.logit_base + signed * c.effect)))
                .collect();
            PatientRecord {
                patient_id: format!("p{i:0width$}"),
                series,
                icd: order.iter().map(|&j| drawn[j]).collect(),
                label,
            }
        })
        .collect();

    Cohort::new(
        patients,
        vars.into_iter().map(|(n, _)| n).collect(),
        vocab,
    )
}

#[derive(Serialize)]
struct Meta<'a> {
    spec: &'a SyntheticSpec,
    seed: u64,
    schema: &'a [String],
    code_vocab: &'a [String],
}

/// Writes the cohort files plus `meta.json` describing how they were made.
pub fn write_synthetic(cohort: &Cohort, spec: &SyntheticSpec, seed: u64, dir: &Path) -> Result<()> {
    write_cohort(cohort, dir)?;
    let meta = Meta {
        spec,
        seed,
        schema: &cohort.schema,
        code_vocab: &cohort.code_vocab,
    };
    let path = dir.join("meta.json");
    let mut text = serde_json::to_string_pretty(&meta)?;
    text.push('\n');
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}
