//! Mini-batch training, evaluation and representation export.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{fit_preprocess, preprocess_with, split, Cohort, NormStats, SplitRatios};
use crate::error::{Error, Result};
use crate::metrics::{auroc, MetricsReport, DEFAULT_DECISION_THRESHOLD};
use crate::model::{backward, forward, Batch, ModelConfig, ModelParameters};
use crate::numeric::{Adam, AdamConfig, Matrix, Mode, Parameters, Rng, DEFAULT_LEARNING_RATE};

/// Windows the loader and model are configured for.
pub const SUPPORTED_WINDOWS: [usize; 2] = [24, 48];

// Independent random streams derived from the run seed.
const SPLIT_STREAM: u64 = 0;
const INIT_STREAM: u64 = 1;
const SHUFFLE_STREAM: u64 = 2;
const DROPOUT_STREAM: u64 = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub window_hours: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Epochs without a better validation AUROC before stopping.
    pub patience: usize,
    pub seed: u64,
    pub split: SplitRatios,
    /// Patients per evaluation graph; `None` evaluates each split whole.
    pub eval_batch_size: Option<usize>,
    pub decision_threshold: f64,
    /// Report the best `min(Se, P+)` over thresholds instead of the fixed one.
    pub min_se_pplus_sweep: bool,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            window_hours: 48,
            batch_size: 256,
            learning_rate: DEFAULT_LEARNING_RATE,
            epochs: 50,
            patience: 10,
            seed: 0,
            split: SplitRatios::default(),
            eval_batch_size: None,
            decision_threshold: DEFAULT_DECISION_THRESHOLD,
            min_se_pplus_sweep: false,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !SUPPORTED_WINDOWS.contains(&self.window_hours) {
            return Err(Error::Config(format!(
                "window_hours must be 24 or 48, got {}",
                self.window_hours
            )));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("batch_size must be at least 2".into()));
        }
        if self.epochs == 0 || self.patience == 0 {
            return Err(Error::Config("epochs and patience must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.eval_batch_size == Some(0) {
            return Err(Error::Config("eval_batch_size must be positive".into()));
        }
        if !self.decision_threshold.is_finite() {
            return Err(Error::Config("decision_threshold must be finite".into()));
        }
        self.split.validate()?;
        self.model.validate()
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            ..AdamConfig::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Patient-weighted mean training loss.
    pub train_loss: f64,
    pub batch_losses: Vec<f64>,
    pub val_auroc: Option<f64>,
    pub zeta: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_auroc: Option<f64>,
    pub stopped_early: bool,
}

/// Everything needed to evaluate a trained model on new data.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub schema: Vec<String>,
    pub code_vocab: Vec<String>,
    pub norm_stats: NormStats,
    pub params: ModelParameters,
    pub log: TrainingLog,
}

impl Checkpoint {
    /// Checks that a cohort uses this model's variables and codes.
    pub fn check_compatible(&self, cohort: &Cohort) -> Result<()> {
        if cohort.schema != self.schema {
            return Err(Error::Data(format!(
                "schema mismatch: checkpoint has [{}], data has [{}]",
                self.schema.join(", "),
                cohort.schema.join(", ")
            )));
        }
        if cohort.code_vocab != self.code_vocab {
            let missing: Vec<&str> = self
                .code_vocab
                .iter()
                .filter(|c| !cohort.code_vocab.contains(c))
                .map(String::as_str)
                .collect();
            let extra: Vec<&str> = cohort
                .code_vocab
                .iter()
                .filter(|c| !self.code_vocab.contains(c))
                .map(String::as_str)
                .collect();
            return Err(Error::Data(format!(
                "code vocabulary mismatch: {} codes in checkpoint, {} in data (missing from data: [{}]; unknown to checkpoint: [{}])",
                self.code_vocab.len(),
                cohort.code_vocab.len(),
                missing.join(", "),
                extra.join(", ")
            )));
        }
        Ok(())
    }
}

/// Standardized train, validation and test cohorts.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub train: Cohort,
    pub val: Cohort,
    pub test: Cohort,
    pub stats: NormStats,
    pub warnings: Vec<String>,
}

/// The train, validation and test partition used for a given seed and
/// ratios, before preprocessing.
pub fn split_raw(raw: &Cohort, config: &TrainConfig) -> Result<(Cohort, Cohort, Cohort)> {
    split(raw, config.split, &mut Rng::new(config.seed).split(SPLIT_STREAM))
}

/// Splits a raw cohort with the configured seed, then fits imputation and
/// standardization on the training part.
pub fn prepare(raw: &Cohort, config: &TrainConfig) -> Result<Prepared> {
    let (train, val, test) = split_raw(raw, config)?;
    let (train, stats, warnings) = fit_preprocess(&train)?;
    Ok(Prepared {
        val: preprocess_with(&val, &stats)?,
        test: preprocess_with(&test, &stats)?,
        train,
        stats,
        warnings,
    })
}

/// Contiguous chunks of `order`; a trailing single patient joins the chunk
/// before it.
pub fn batches(order: &[usize], size: usize) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = order.chunks(size.max(1)).map(<[usize]>::to_vec).collect();
    if out.len() > 1 && out.last().map_or(false, |b| b.len() == 1) {
        let last = out.pop().expect("non-empty");
        out.last_mut().expect("non-empty").extend(last);
    }
    out
}

fn check_gradients(grads: &ModelParameters, epoch: usize, batch: usize) -> Result<()> {
    for (name, t) in grads.tensors() {
        if !t.is_finite() {
            return Err(Error::NonFinite(format!(
                "gradient of {name} at epoch {epoch}, batch {batch}"
            )));
        }
    }
    Ok(())
}

/// Trains on `train`, selecting the epoch with the best validation AUROC.
pub fn train(config: &TrainConfig, train: &Cohort, val: &Cohort) -> Result<Checkpoint> {
    config.validate()?;
    if train.len() < 2 || val.is_empty() {
        return Err(Error::Data(format!(
            "training needs at least 2 training and 1 validation patient, got {} and {}",
            train.len(),
            val.len()
        )));
    }
    if train.schema != val.schema || train.code_vocab != val.code_vocab {
        return Err(Error::Data("training and validation cohorts disagree on schema or vocabulary".into()));
    }
    let norm_stats = train
        .norm_stats
        .clone()
        .ok_or_else(|| Error::Data("training cohort is not standardized".into()))?;

    let root = Rng::new(config.seed);
    let mut params = ModelParameters::init(
        &config.model,
        train.schema.len(),
        train.code_vocab.len(),
        &mut root.split(INIT_STREAM),
    )?;
    let mut adam = Adam::new(&params, config.adam());
    let shuffle = root.split(SHUFFLE_STREAM);
    let dropout = root.split(DROPOUT_STREAM);
    let val_labels = val.labels();

    let mut log = TrainingLog::default();
    let mut best = params.clone();
    let mut best_score = f64::NEG_INFINITY;
    let mut since_best = 0;

    for epoch in 1..=config.epochs {
        let order = shuffle.split(epoch as u64).permutation(train.len());
        let mut epoch_rng = dropout.split(epoch as u64);
        let mut batch_losses = Vec::new();
        let mut weighted = 0.0;
        for (b, idx) in batches(&order, config.batch_size).iter().enumerate() {
            let batch = Batch::from_cohort(train, idx)?;
            let (out, cache) = forward(&params, &config.model, &batch, Mode::Train, &mut epoch_rng)?;
            let (loss, grads) = backward(&params, &config.model, &batch, &out, &cache)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "training loss {loss} at epoch {epoch}, batch {} ({} patients, zeta {})",
                    b + 1,
                    idx.len(),
                    params.zeta()
                )));
            }
            check_gradients(&grads, epoch, b + 1)?;
            adam.step(&mut params, &grads)?;
            weighted += loss * idx.len() as f64;
            batch_losses.push(loss);
        }

        let scores = predict(&params, &config.model, val, config.eval_batch_size)?;
        let val_auroc = auroc(&scores, &val_labels).ok();
        log::info!(
            "epoch {epoch}: loss {:.6}, val auroc {}",
            weighted / train.len() as f64,
            val_auroc.map_or("n/a".to_string(), |a| format!("{a:.4}"))
        );
        log.epochs.push(EpochRecord {
            epoch,
            train_loss: weighted / train.len() as f64,
            batch_losses,
            val_auroc,
            zeta: params.zeta(),
        });

        let score = val_auroc.unwrap_or(f64::NEG_INFINITY);
        if log.best_epoch == 0 || score > best_score {
            best_score = score;
            best = params.clone();
            log.best_epoch = epoch;
            log.best_val_auroc = val_auroc;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                log.stopped_early = epoch < config.epochs;
                break;
            }
        }
    }

    Ok(Checkpoint {
        config: config.clone(),
        schema: train.schema.clone(),
        code_vocab: train.code_vocab.clone(),
        norm_stats,
        params: best,
        log,
    })
}

/// Eval-mode forward passes over consecutive groups of patients; calls `f`
/// with each group's indices and outputs.
fn for_each_eval_batch(
    params: &ModelParameters,
    model: &ModelConfig,
    cohort: &Cohort,
    eval_batch_size: Option<usize>,
    mut f: impl FnMut(&[usize], &crate::model::ForwardOutput),
) -> Result<()> {
    if cohort.is_empty() {
        return Err(Error::Data("cannot evaluate an empty cohort".into()));
    }
    let order: Vec<usize> = (0..cohort.len()).collect();
    let size = eval_batch_size.unwrap_or(cohort.len());
    for idx in batches(&order, size) {
        let batch = Batch::from_cohort(cohort, &idx)?;
        let (out, _) = forward(params, model, &batch, Mode::Eval, &mut Rng::new(0))?;
        f(&idx, &out);
    }
    Ok(())
}

/// Death probability per patient, in cohort order.
pub fn predict(
    params: &ModelParameters,
    model: &ModelConfig,
    cohort: &Cohort,
    eval_batch_size: Option<usize>,
) -> Result<Vec<f64>> {
    let mut scores = vec![0.0; cohort.len()];
    for_each_eval_batch(params, model, cohort, eval_batch_size, |idx, out| {
        for (&i, s) in idx.iter().zip(out.risk()) {
            scores[i] = s;
        }
    })?;
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::NonFinite(format!(
            "prediction for patient {}",
            cohort.patients[i].patient_id
        )));
    }
    Ok(scores)
}

/// Metrics on a cohort already standardized with the checkpoint's statistics.
pub fn evaluate(
    ckpt: &Checkpoint,
    cohort: &Cohort,
    decision_threshold: f64,
    eval_batch_size: Option<usize>,
) -> Result<MetricsReport> {
    ckpt.check_compatible(cohort)?;
    let scores = predict(&ckpt.params, &ckpt.config.model, cohort, eval_batch_size)?;
    MetricsReport::compute(
        &scores,
        &cohort.labels(),
        decision_threshold,
        ckpt.config.min_se_pplus_sweep,
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Gru,
    Hconv,
    Aggregated,
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gru" => Ok(Stage::Gru),
            "hconv" => Ok(Stage::Hconv),
            "aggregated" => Ok(Stage::Aggregated),
            other => Err(Error::Config(format!(
                "unknown stage '{other}', expected gru, hconv or aggregated"
            ))),
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Gru => "gru",
            Stage::Hconv => "hconv",
            Stage::Aggregated => "aggregated",
        })
    }
}

/// One row per patient of the chosen intermediate representation.
pub fn embeddings(ckpt: &Checkpoint, cohort: &Cohort, stage: Stage) -> Result<Matrix> {
    ckpt.check_compatible(cohort)?;
    let mut rows: Vec<Vec<f64>> = vec![Vec::new(); cohort.len()];
    for_each_eval_batch(&ckpt.params, &ckpt.config.model, cohort, ckpt.config.eval_batch_size, |idx, out| {
        let m = match stage {
            Stage::Gru => &out.gru,
            Stage::Hconv => &out.hconv,
            Stage::Aggregated => &out.aggregated,
        };
        for (r, &i) in idx.iter().enumerate() {
            rows[i] = m.row(r).to_vec();
        }
    })?;
    Matrix::from_rows(&rows)
}

/// Writes `patient_id,label,e0..` rows.
pub fn export_embeddings(ckpt: &Checkpoint, cohort: &Cohort, stage: Stage, path: &Path) -> Result<()> {
    let emb = embeddings(ckpt, cohort, stage)?;
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    let mut write = |line: String| writeln!(out, "{line}").map_err(|e| Error::io(path, e));
    let header: Vec<String> = ["patient_id".to_string(), "label".to_string()]
        .into_iter()
        .chain((0..emb.cols()).map(|k| format!("e{k}")))
        .collect();
    write(header.join(","))?;
    for (r, p) in cohort.patients.iter().enumerate() {
        let mut fields = vec![p.patient_id.clone(), u8::from(p.label).to_string()];
        fields.extend(emb.row(r).iter().map(f64::to_string));
        write(fields.join(","))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}
