//! On-disk cohort format.
//!
//! `patients.csv`: `patient_id,label,icd_codes` with semicolon-separated
//! codes. `vitals.csv`: `patient_id,hour,variable,value`, absent
//! measurements omitted.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::path::{Path, PathBuf};

use super::{schema, Cohort, PatientRecord, Series};
use crate::error::{Error, Result};

/// Hours are validated against this bound; rows past the requested window
/// but inside it are dropped, so a 48-hour extract also loads as 24 hours.
pub const MAX_WINDOW_HOURS: usize = 48;

const PATIENT_HEADER: [&str; 3] = ["patient_id", "label", "icd_codes"];
const VITALS_HEADER: [&str; 4] = ["patient_id", "hour", "variable", "value"];

#[derive(Clone, Debug)]
pub struct LoadOptions {
    pub window_hours: usize,
    pub schema: Vec<String>,
}

impl LoadOptions {
    pub fn new(window_hours: usize) -> Self {
        LoadOptions {
            window_hours,
            schema: schema::default_schema(),
        }
    }
}

fn parse_err(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn open_csv(path: &Path, header: &[&str]) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let found = reader
        .headers()
        .map_err(|e| parse_err(path, 1, e.to_string()))?;
    if found.iter().ne(header.iter().copied()) {
        return Err(parse_err(
            path,
            1,
            format!("expected header {:?}, found {:?}", header.join(","), found),
        ));
    }
    Ok(reader)
}

fn records<'r>(
    path: &Path,
    reader: &'r mut csv::Reader<File>,
) -> impl Iterator<Item = Result<(u64, csv::StringRecord)>> + 'r {
    let path: PathBuf = path.to_path_buf();
    reader.records().map(move |r| {
        let rec = r.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(&path, line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        Ok((line, rec))
    })
}

/// Reads a cohort. Codes form a lexicographically sorted vocabulary; when a
/// variable is measured several times in one hour the last row wins.
pub fn load_cohort(patients_path: &Path, vitals_path: &Path, opts: &LoadOptions) -> Result<Cohort> {
    let window = opts.window_hours;
    if window == 0 || window > MAX_WINDOW_HOURS {
        return Err(Error::Config(format!(
            "window must lie in 1..={MAX_WINDOW_HOURS} hours, got {window}"
        )));
    }

    struct RawPatient {
        id: String,
        label: bool,
        codes: Vec<String>,
    }
    let mut raw = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut reader = open_csv(patients_path, &PATIENT_HEADER)?;
    for item in records(patients_path, &mut reader) {
        let (line, rec) = item?;
        let id = rec[0].to_string();
        if id.is_empty() {
            return Err(parse_err(patients_path, line, "empty patient_id"));
        }
        let label = match &rec[1] {
            "0" => false,
            "1" => true,
            other => {
                return Err(parse_err(
                    patients_path,
                    line,
                    format!("label must be 0 or 1, got {other:?}"),
                ))
            }
        };
        let codes = rec[2]
            .split(';')
            .map(str::trim)
            .filter(|c| !c.is_empty())
            .map(str::to_string)
            .collect();
        if index.insert(id.clone(), raw.len()).is_some() {
            return Err(parse_err(patients_path, line, format!("duplicate patient_id {id}")));
        }
        raw.push(RawPatient { id, label, codes });
    }

    let vocab: Vec<String> = raw
        .iter()
        .flat_map(|p| p.codes.iter().cloned())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let code_index: HashMap<&str, usize> =
        vocab.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
    let var_index: HashMap<&str, usize> = opts
        .schema
        .iter()
        .enumerate()
        .map(|(i, v)| (v.as_str(), i))
        .collect();

    let mut series: Vec<Series> = raw
        .iter()
        .map(|_| Series::empty(opts.schema.len(), window))
        .collect();
    let mut reader = open_csv(vitals_path, &VITALS_HEADER)?;
    for item in records(vitals_path, &mut reader) {
        let (line, rec) = item?;
        let &p = index
            .get(&rec[0])
            .ok_or_else(|| parse_err(vitals_path, line, format!("unknown patient_id {:?}", &rec[0])))?;
        let hour: i64 = rec[1]
            .parse()
            .map_err(|_| parse_err(vitals_path, line, format!("hour must be an integer, got {:?}", &rec[1])))?;
        if hour < 0 || hour >= MAX_WINDOW_HOURS.max(window) as i64 {
            return Err(parse_err(
                vitals_path,
                line,
                format!("hour {hour} outside 0..{}", MAX_WINDOW_HOURS.max(window)),
            ));
        }
        let &v = var_index
            .get(&rec[2])
            .ok_or_else(|| parse_err(vitals_path, line, format!("unknown variable {:?}", &rec[2])))?;
        let value: f64 = rec[3]
            .parse()
            .map_err(|_| parse_err(vitals_path, line, format!("bad value {:?}", &rec[3])))?;
        if !value.is_finite() {
            return Err(parse_err(vitals_path, line, "value is not finite"));
        }
        if (hour as usize) < window {
            series[p].set(v, hour as usize, value);
        }
    }

    let patients = raw
        .into_iter()
        .zip(series)
        .map(|(r, series)| {
            let mut icd = vec![false; vocab.len()];
            for c in &r.codes {
                icd[code_index[c.as_str()]] = true;
            }
            PatientRecord {
                patient_id: r.id,
                series,
                icd,
                label: r.label,
            }
        })
        .collect();
    Cohort::new(patients, opts.schema.clone(), vocab)
}

/// Writes `patients.csv` and `vitals.csv` into `dir`.
pub fn write_cohort(cohort: &Cohort, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let patients_path = dir.join("patients.csv");
    let csv_err = |path: &Path, e: csv::Error| Error::Data(format!("{}: {e}", path.display()));

    let mut w = csv::Writer::from_path(&patients_path).map_err(|e| csv_err(&patients_path, e))?;
    w.write_record(PATIENT_HEADER).map_err(|e| csv_err(&patients_path, e))?;
    for p in &cohort.patients {
        let codes: Vec<&str> = p
            .icd
            .iter()
            .zip(&cohort.code_vocab)
            .filter(|(&has, _)| has)
            .map(|(_, c)| c.as_str())
            .collect();
        let label = if p.label { "1" } else { "0" };
        w.write_record([p.patient_id.as_str(), label, &codes.join(";")])
            .map_err(|e| csv_err(&patients_path, e))?;
    }
    w.flush().map_err(|e| Error::io(&patients_path, e))?;

    let vitals_path = dir.join("vitals.csv");
    let mut w = csv::Writer::from_path(&vitals_path).map_err(|e| csv_err(&vitals_path, e))?;
    w.write_record(VITALS_HEADER).map_err(|e| csv_err(&vitals_path, e))?;
    for p in &cohort.patients {
        for hour in 0..p.series.hours() {
            for (v, name) in cohort.schema.iter().enumerate() {
                if let Some(value) = p.series.get(v, hour) {
                    w.write_record([
                        p.patient_id.as_str(),
                        &hour.to_string(),
                        name,
                        &value.to_string(),
                    ])
                    .map_err(|e| csv_err(&vitals_path, e))?;
                }
            }
        }
    }
    w.flush().map_err(|e| Error::io(&vitals_path, e))?;
    Ok(())
}
