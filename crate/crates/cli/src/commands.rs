use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;

use hyperrisk::checkpoint::{load_checkpoint, save_checkpoint};
use hyperrisk::data::schema::default_schema;
use hyperrisk::data::{filter_by_code, gen_synthetic, load_cohort, preprocess_with, write_synthetic, Cohort, LoadOptions};
use hyperrisk::metrics::MetricsReport;
use hyperrisk::numeric::Rng;
use hyperrisk::train::{evaluate, export_embeddings, prepare, split_raw, train, Checkpoint, Stage};

use crate::config::AppConfig;
use crate::{CliError, EvalSplit, Split};

fn print_json(value: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(hyperrisk::Error::from)?;
    println!("{text}");
    Ok(())
}

fn require(flag: Option<PathBuf>, fallback: Option<PathBuf>, name: &str) -> Result<PathBuf, CliError> {
    flag.or(fallback)
        .ok_or_else(|| CliError::Usage(format!("--{name} is required (or set it in the config file)")))
}

/// Variable names from `meta.json` when the directory has one.
fn schema_for(dir: &Path) -> Result<Vec<String>, CliError> {
    let path = dir.join("meta.json");
    if !path.exists() {
        return Ok(default_schema());
    }
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    let meta: serde_json::Value = serde_json::from_str(&text).map_err(hyperrisk::Error::from)?;
    match meta.get("schema") {
        Some(s) => Ok(serde_json::from_value(s.clone()).map_err(hyperrisk::Error::from)?),
        None => Ok(default_schema()),
    }
}

fn load_dir(dir: &Path, window: usize, schema: Vec<String>) -> Result<Cohort, CliError> {
    if !dir.is_dir() {
        return Err(CliError::Usage(format!("data directory {} does not exist", dir.display())));
    }
    let opts = LoadOptions {
        window_hours: window,
        schema,
    };
    Ok(load_cohort(&dir.join("patients.csv"), &dir.join("vitals.csv"), &opts)?)
}

pub fn gen_synthetic_cmd(config: &AppConfig, out_dir: Option<PathBuf>, seed: u64) -> Result<(), CliError> {
    let dir = require(out_dir, config.out_dir.clone(), "out-dir")?;
    config.synthetic.validate()?;
    std::fs::create_dir_all(&dir).map_err(|e| hyperrisk::Error::Io {
        path: dir.clone(),
        source: e,
    })?;
    let cohort = gen_synthetic(&config.synthetic, &Rng::new(seed))?;
    write_synthetic(&cohort, &config.synthetic, seed, &dir)?;
    log::info!("wrote {} patients to {}", cohort.len(), dir.display());
    print_json(&json!({
        "out_dir": dir,
        "seed": seed,
        "n_patients": cohort.len(),
        "n_positive": cohort.positives(),
        "codes": cohort.code_vocab.len(),
        "files": ["patients.csv", "vitals.csv", "meta.json"],
    }))
}

pub struct TrainArgs {
    pub data_dir: Option<PathBuf>,
    pub window: Option<usize>,
    pub seed: Option<u64>,
    pub epochs: Option<usize>,
    pub out: Option<PathBuf>,
    pub log: Option<PathBuf>,
}

pub fn train_cmd(config: &AppConfig, args: TrainArgs) -> Result<(), CliError> {
    let mut tc = config.train.clone();
    if let Some(w) = args.window {
        tc.window_hours = w;
    }
    if let Some(s) = args.seed {
        tc.seed = s;
    }
    if let Some(e) = args.epochs {
        tc.epochs = e;
    }
    tc.validate()?;
    let data_dir = require(args.data_dir, config.data_dir.clone(), "data-dir")?;
    let out = require(args.out, config.checkpoint.clone(), "out")?;
    let log_path = args
        .log
        .unwrap_or_else(|| PathBuf::from(format!("{}.log.json", out.display())));

    let raw = load_dir(&data_dir, tc.window_hours, schema_for(&data_dir)?)?;
    let data = prepare(&raw, &tc)?;
    for w in &data.warnings {
        log::warn!("{w}");
    }
    let ckpt = train(&tc, &data.train, &data.val)?;
    save_checkpoint(&ckpt, &out)?;
    let log_text = serde_json::to_string_pretty(&ckpt.log).map_err(hyperrisk::Error::from)?;
    std::fs::write(&log_path, log_text + "\n").map_err(|e| hyperrisk::Error::Io {
        path: log_path.clone(),
        source: e,
    })?;
    print_json(&json!({
        "checkpoint": out,
        "log": log_path,
        "epochs_run": ckpt.log.epochs.len(),
        "best_epoch": ckpt.log.best_epoch,
        "best_val_auroc": ckpt.log.best_val_auroc,
        "zeta": ckpt.params.zeta(),
        "n_train": data.train.len(),
        "n_val": data.val.len(),
        "n_test": data.test.len(),
    }))
}

/// Reloads the data a checkpoint was trained on and returns the requested
/// split, standardized with the checkpoint's statistics.
fn checkpoint_split(ckpt: &Checkpoint, data_dir: &Path, which: Split) -> Result<Cohort, CliError> {
    let raw = load_dir(data_dir, ckpt.config.window_hours, ckpt.schema.clone())?;
    ckpt.check_compatible(&raw)?;
    let part = match which {
        Split::All => raw,
        other => {
            let (train, val, test) = split_raw(&raw, &ckpt.config)?;
            match other {
                Split::Train => train,
                Split::Val => val,
                _ => test,
            }
        }
    };
    Ok(preprocess_with(&part, &ckpt.norm_stats)?)
}

fn open_checkpoint(config: &AppConfig, flag: Option<PathBuf>) -> Result<Checkpoint, CliError> {
    let path = require(flag, config.checkpoint.clone(), "checkpoint")?;
    if !path.is_file() {
        return Err(CliError::Usage(format!("checkpoint {} does not exist", path.display())));
    }
    Ok(load_checkpoint(&path)?)
}

pub fn evaluate_cmd(
    config: &AppConfig,
    checkpoint: Option<PathBuf>,
    data_dir: Option<PathBuf>,
    split: EvalSplit,
    threshold: Option<f64>,
) -> Result<(), CliError> {
    let ckpt = open_checkpoint(config, checkpoint)?;
    let data_dir = require(data_dir, config.data_dir.clone(), "data-dir")?;
    let cohort = checkpoint_split(&ckpt, &data_dir, split.into())?;
    let t = threshold.unwrap_or(ckpt.config.decision_threshold);
    print_json(&evaluate(&ckpt, &cohort, t, ckpt.config.eval_batch_size)?)
}

#[derive(Serialize)]
struct GroupReport {
    n_patients: usize,
    n_positive: usize,
    n_negative: usize,
    /// Negatives per positive, written `r:1`.
    negative_positive_ratio: String,
    metrics: MetricsReport,
}

fn ratio_text(neg: usize, pos: usize) -> String {
    if pos == 0 {
        format!("{neg}:0")
    } else {
        format!("{:.4}:1", neg as f64 / pos as f64)
    }
}

fn group_report(ckpt: &Checkpoint, cohort: &Cohort) -> Result<GroupReport, CliError> {
    let pos = cohort.positives();
    Ok(GroupReport {
        n_patients: cohort.len(),
        n_positive: pos,
        n_negative: cohort.len() - pos,
        negative_positive_ratio: ratio_text(cohort.len() - pos, pos),
        metrics: evaluate(ckpt, cohort, ckpt.config.decision_threshold, ckpt.config.eval_batch_size)?,
    })
}

pub fn case_study_cmd(
    config: &AppConfig,
    checkpoint: Option<PathBuf>,
    data_dir: Option<PathBuf>,
    code: &str,
    split: EvalSplit,
) -> Result<(), CliError> {
    let ckpt = open_checkpoint(config, checkpoint)?;
    let data_dir = require(data_dir, config.data_dir.clone(), "data-dir")?;
    let cohort = checkpoint_split(&ckpt, &data_dir, split.into())?;
    let (with, without) = filter_by_code(&cohort, code)?;
    if with.is_empty() {
        let mut present: Vec<(usize, &str)> = cohort
            .code_vocab
            .iter()
            .enumerate()
            .map(|(c, name)| (cohort.patients.iter().filter(|p| p.icd[c]).count(), name.as_str()))
            .filter(|(n, _)| *n > 0)
            .collect();
        present.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(b.1)));
        let listed: Vec<String> = present.iter().take(5).map(|(n, c)| format!("{c} ({n})")).collect();
        return Err(CliError::Runtime(format!(
            "no patients in the {split} split carry code {code}; most common codes there: {}",
            listed.join(", ")
        )));
    }
    if without.is_empty() {
        return Err(CliError::Runtime(format!(
            "every patient in the {split} split carries code {code}; Group II is empty"
        )));
    }
    print_json(&json!({
        "code": code,
        "split": split.to_string(),
        "group_i": group_report(&ckpt, &with)?,
        "group_ii": group_report(&ckpt, &without)?,
    }))
}

pub fn embed_cmd(
    config: &AppConfig,
    checkpoint: Option<PathBuf>,
    data_dir: Option<PathBuf>,
    stage: &str,
    split: Split,
    out: &Path,
) -> Result<(), CliError> {
    let stage: Stage = stage.parse().map_err(|e: hyperrisk::Error| CliError::Usage(e.to_string()))?;
    let ckpt = open_checkpoint(config, checkpoint)?;
    let data_dir = require(data_dir, config.data_dir.clone(), "data-dir")?;
    let cohort = checkpoint_split(&ckpt, &data_dir, split)?;
    export_embeddings(&ckpt, &cohort, stage, out)?;
    print_json(&json!({
        "out": out,
        "stage": stage.to_string(),
        "split": split.to_string(),
        "rows": cohort.len(),
    }))
}

pub fn dump_defaults() -> Result<(), CliError> {
    print_json(&AppConfig::default())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratio_formatting() {
        assert_eq!(ratio_text(14945, 2953), "5.0610:1");
        assert_eq!(ratio_text(49898, 10000), "4.9898:1");
        assert_eq!(ratio_text(3, 0), "3:0");
    }
}
