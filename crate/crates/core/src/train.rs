//! Training: per-task loop (preprocess → forward → dual-head loss → Adam),
//! checkpoint selection on a validation metric, and the bank of eleven
//! independent binary classifiers.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::dataset::{Sample, Task, NUM_FEATURES};
use crate::detection::RoiPlan;
use crate::loss::{dual_bce_loss, dual_bce_value, one_hot, LossError, LossForm};
use crate::metrics::{self, threshold_flags};
use crate::model::{BrighteyeModel, ModelConfig};
use crate::optim::{Adam, AdamConfig, LrSchedule};
use crate::preprocess::{augment, prepare_image, to_unit_pixels, AugmentParams, PreprocessConfig, PreprocessError, RgbImage};
use crate::split::{rebalance_and_split, SplitError, SplitRatio};
use crate::tensor::{Tape, TensorError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training set for {0} is empty")]
    EmptyTrainingSet(Task),
    #[error("training labels for {0} contain a single class")]
    SingleClass(Task),
    #[error("batch size and epoch count must be positive")]
    BadConfig,
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Split(#[from] SplitError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
}

/// Optimization and data-handling settings for one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr0: f64,
    pub lr_decay: f64,
    pub lr_step_epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Stop after this many optimizer steps, if set.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<usize>,
    pub seed: u64,
    pub split: SplitRatio,
    /// Negatives kept for the glaucoma task (all when unset).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_negatives: Option<usize>,
    pub loss_form: LossForm,
    pub augment: bool,
    pub feature_threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let s = LrSchedule::default();
        let a = AdamConfig::default();
        Self {
            lr0: s.lr0,
            lr_decay: s.factor,
            lr_step_epochs: s.every,
            beta1: a.beta1,
            beta2: a.beta2,
            adam_eps: a.eps,
            batch_size: 8,
            epochs: 30,
            max_steps: None,
            seed: 0,
            split: SplitRatio::default(),
            n_negatives: None,
            loss_form: LossForm::Average,
            augment: true,
            feature_threshold: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn schedule(&self) -> LrSchedule {
        LrSchedule {
            lr0: self.lr0,
            factor: self.lr_decay,
            every: self.lr_step_epochs,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
        }
    }
}

/// Settings chosen without a reference value; listed in every log header.
pub const ASSUMED_DEFAULTS: &[&str] = &[
    "train.beta1",
    "train.beta2",
    "train.adam_eps",
    "train.batch_size",
    "train.epochs",
    "model.embed_dim",
    "model.depth",
    "model.heads",
    "model.agg_hidden",
    "preprocess.confidence_floor",
    "preprocess.bg_threshold",
];

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent seed for a named stream of a run.
pub fn derive_seed(base: u64, stream: &[u64]) -> u64 {
    stream.iter().fold(splitmix64(base), |acc, &s| splitmix64(acc ^ s))
}

const STREAM_SPLIT: u64 = 1;
const STREAM_INIT: u64 = 2;
const STREAM_EPOCH: u64 = 3;
const STREAM_AUGMENT: u64 = 4;

/// Seed used for `task` inside a bank trained from `base`.
pub fn task_seed(base: u64, task: Task) -> u64 {
    match task {
        Task::Glaucoma => base,
        Task::Feature(k) => derive_seed(base, &[0xFEA7, k as u64]),
    }
}

/// Deterministically preprocessed sample at model input size.
#[derive(Debug, Clone)]
pub struct PreparedSample {
    pub id: String,
    pub image: RgbImage,
    pub rg: bool,
    pub features: [bool; NUM_FEATURES],
    pub plan: RoiPlan,
}

impl PreparedSample {
    pub fn label(&self, task: Task) -> bool {
        match task {
            Task::Glaucoma => self.rg,
            Task::Feature(k) => self.features[k as usize - 1],
        }
    }
}

pub fn prepare_samples(
    samples: &[Sample],
    pre: &PreprocessConfig,
    model: &ModelConfig,
) -> Result<Vec<PreparedSample>, PreprocessError> {
    samples
        .par_iter()
        .map(|s| {
            let (image, plan) = prepare_image(
                &s.image,
                &s.detections,
                pre,
                model.image_width as u32,
                model.image_height as u32,
            )?;
            Ok(PreparedSample {
                id: s.id.clone(),
                image,
                rg: s.rg,
                features: s.features,
                plan,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub steps: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub val_metric: Option<f64>,
    pub val_metric_name: String,
}

/// Line-oriented training log: one header record, one record per epoch and
/// a closing record naming the selected checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainLog {
    pub header: serde_json::Value,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
}

impl TrainLog {
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        out.push_str(&self.header.to_string());
        out.push('\n');
        for e in &self.epochs {
            let mut v = serde_json::to_value(e).expect("records serialize");
            v["kind"] = json!("epoch");
            out.push_str(&v.to_string());
            out.push('\n');
        }
        out.push_str(&json!({"kind": "selected", "epoch": self.best_epoch}).to_string());
        out.push('\n');
        out
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub task: Task,
    /// Parameters at the best validation epoch (final epoch without a
    /// validation set).
    pub model: BrighteyeModel<f32>,
    pub final_model: BrighteyeModel<f32>,
    pub log: TrainLog,
    pub train_ids: Vec<String>,
    pub val_ids: Vec<String>,
}

struct Validation {
    loss: f64,
    metric: f64,
    name: &'static str,
}

fn validate(
    model: &BrighteyeModel<f32>,
    inputs: &[Vec<f32>],
    labels: &[bool],
    task: Task,
    cfg: &TrainConfig,
) -> Result<Option<Validation>, TrainError> {
    if inputs.is_empty() {
        return Ok(None);
    }
    let mut scores = Vec::with_capacity(inputs.len());
    let mut loss = 0.0;
    for (x, &y) in inputs.iter().zip(labels) {
        let out = model.forward(x)?;
        let pair = |p: [f32; 2]| [p[0] as f64, p[1] as f64];
        loss += dual_bce_value(one_hot(y), pair(out.p_cls), pair(out.p_agg), cfg.loss_form)?.total;
        scores.push(out.predict() as f64);
    }
    let loss = loss / inputs.len() as f64;
    let accuracy = || {
        let flags = threshold_flags(&scores, cfg.feature_threshold);
        flags.iter().zip(labels).filter(|(a, b)| a == b).count() as f64 / labels.len() as f64
    };
    let v = match task {
        Task::Glaucoma => match metrics::tpr_at_specificity(&scores, labels, 0.95) {
            Ok(tpr) => Validation {
                loss,
                metric: tpr,
                name: "tpr_at_95",
            },
            Err(_) => Validation {
                loss,
                metric: accuracy(),
                name: "accuracy",
            },
        },
        Task::Feature(_) => Validation {
            loss,
            metric: accuracy(),
            name: "accuracy",
        },
    };
    Ok(Some(v))
}

fn log_header(
    task: Task,
    model: &ModelConfig,
    cfg: &TrainConfig,
    aug: &AugmentParams,
    pre: &PreprocessConfig,
    n_train: usize,
    n_val: usize,
) -> serde_json::Value {
    json!({
        "kind": "header",
        "task": task.to_string(),
        "model": model,
        "train": cfg,
        "augment": aug,
        "preprocess": pre,
        "n_train": n_train,
        "n_val": n_val,
        "parameters": model.parameter_count(),
        "assumed_defaults": ASSUMED_DEFAULTS,
    })
}

/// Trains one binary classifier on already-prepared samples.
pub fn train_prepared(
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    aug: &AugmentParams,
    pre: &PreprocessConfig,
    task: Task,
    data: &[PreparedSample],
) -> Result<TrainOutcome, TrainError> {
    if cfg.batch_size == 0 || cfg.epochs == 0 {
        return Err(TrainError::BadConfig);
    }
    if data.is_empty() {
        return Err(TrainError::EmptyTrainingSet(task));
    }
    let labels: Vec<bool> = data.iter().map(|s| s.label(task)).collect();
    if labels.iter().all(|&l| l) || labels.iter().all(|&l| !l) {
        return Err(TrainError::SingleClass(task));
    }
    let seed = cfg.seed;
    let n_neg = if task == Task::Glaucoma { cfg.n_negatives } else { None };
    let split = rebalance_and_split(&labels, n_neg, cfg.split, derive_seed(seed, &[STREAM_SPLIT]))?;
    if split.train.is_empty() {
        return Err(TrainError::EmptyTrainingSet(task));
    }

    let mut model = BrighteyeModel::<f32>::init(model_cfg.clone(), derive_seed(seed, &[STREAM_INIT]))?;
    let mut adam = Adam::new(cfg.adam(), &model.params);
    let schedule = cfg.schedule();

    let val_inputs: Vec<Vec<f32>> = split.val.iter().map(|&i| to_unit_pixels(&data[i].image)).collect();
    let val_labels: Vec<bool> = split.val.iter().map(|&i| labels[i]).collect();
    let plain_inputs: BTreeMap<usize, Vec<f32>> = if cfg.augment {
        BTreeMap::new()
    } else {
        split.train.iter().map(|&i| (i, to_unit_pixels(&data[i].image))).collect()
    };

    let mut log = TrainLog {
        header: log_header(task, model_cfg, cfg, aug, pre, split.train.len(), split.val.len()),
        epochs: Vec::new(),
        best_epoch: None,
    };
    let mut best: Option<(f64, f64, BrighteyeModel<f32>)> = None;
    let mut steps = 0usize;
    let step_limit = cfg.max_steps.unwrap_or(usize::MAX);

    for epoch in 0..cfg.epochs {
        if steps >= step_limit {
            break;
        }
        let lr = schedule.lr(epoch);
        let mut order = split.train.clone();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, &[STREAM_EPOCH, epoch as u64])));

        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            if steps >= step_limit {
                break;
            }
            let mut tape = Tape::new();
            let bound = model.params.bind(&mut tape);
            let mut totals = Vec::with_capacity(batch.len());
            for &i in batch {
                let augmented;
                let pixels = if cfg.augment {
                    let mut rng =
                        ChaCha8Rng::seed_from_u64(derive_seed(seed, &[STREAM_AUGMENT, epoch as u64, i as u64]));
                    augmented = to_unit_pixels(&augment(&data[i].image, &aug.draw(&mut rng)));
                    &augmented
                } else {
                    &plain_inputs[&i]
                };
                let out = model.forward_on(&mut tape, &bound, pixels)?;
                let l = dual_bce_loss(&mut tape, one_hot(labels[i]), out.p_cls, out.p_agg, cfg.loss_form)?;
                loss_sum += tape.value(l.total).data()[0] as f64;
                totals.push(l.total);
            }
            seen += batch.len();
            let stacked = tape.concat(&totals, 0)?;
            let loss = tape.mean(stacked)?;
            tape.backward(loss)?;
            model.params.collect_grads(&tape, &bound)?;
            adam.step(&mut model.params, lr)?;
            steps += 1;
        }

        let val = validate(&model, &val_inputs, &val_labels, task, cfg)?;
        let record = EpochRecord {
            epoch,
            lr,
            steps,
            train_loss: loss_sum / seen.max(1) as f64,
            val_loss: val.as_ref().map(|v| v.loss),
            val_metric: val.as_ref().map(|v| v.metric),
            val_metric_name: val.as_ref().map_or("none", |v| v.name).to_string(),
        };
        log::debug!(
            "{task} epoch {epoch}: lr {lr:.2e} loss {:.4} val {:?}",
            record.train_loss,
            record.val_metric
        );
        log.epochs.push(record);

        if let Some(v) = val {
            // higher metric wins; lower validation loss breaks ties
            let better = best
                .as_ref()
                .is_none_or(|(m, l, _)| v.metric > *m || (v.metric == *m && v.loss < *l));
            if better {
                best = Some((v.metric, v.loss, model.clone()));
                log.best_epoch = Some(epoch);
            }
        }
    }

    let best_model = match best {
        Some((_, _, m)) => m,
        None => {
            log.best_epoch = log.epochs.last().map(|e| e.epoch);
            model.clone()
        }
    };
    Ok(TrainOutcome {
        task,
        model: best_model,
        final_model: model,
        log,
        train_ids: split.train.iter().map(|&i| data[i].id.clone()).collect(),
        val_ids: split.val.iter().map(|&i| data[i].id.clone()).collect(),
    })
}

/// Preprocesses `samples` and trains one classifier for `task`.
pub fn train_task(
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    aug: &AugmentParams,
    pre: &PreprocessConfig,
    task: Task,
    samples: &[Sample],
) -> Result<TrainOutcome, TrainError> {
    let data = prepare_samples(samples, pre, model_cfg)?;
    train_prepared(model_cfg, cfg, aug, pre, task, &data)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkipRecord {
    pub task: Task,
    pub reason: String,
}

/// Eleven independently trained classifiers sharing one architecture.
#[derive(Debug, Clone)]
pub struct ClassifierBank {
    pub config: ModelConfig,
    pub preprocess: PreprocessConfig,
    pub models: BTreeMap<Task, BrighteyeModel<f32>>,
    pub skipped: Vec<SkipRecord>,
}

#[derive(Debug, Clone)]
pub struct BankOutcome {
    pub bank: ClassifierBank,
    pub logs: BTreeMap<Task, TrainLog>,
}

/// Trains the glaucoma classifier and the ten feature classifiers. Tasks
/// whose labels have no positives (or no negatives) are skipped and
/// recorded.
pub fn train_bank(
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    aug: &AugmentParams,
    pre: &PreprocessConfig,
    samples: &[Sample],
) -> Result<BankOutcome, TrainError> {
    let data = prepare_samples(samples, pre, model_cfg)?;
    let results: Vec<(Task, Result<TrainOutcome, TrainError>)> = Task::all()
        .into_par_iter()
        .map(|task| {
            let task_cfg = TrainConfig {
                seed: task_seed(cfg.seed, task),
                ..cfg.clone()
            };
            (task, train_prepared(model_cfg, &task_cfg, aug, pre, task, &data))
        })
        .collect();

    let mut bank = ClassifierBank {
        config: model_cfg.clone(),
        preprocess: pre.clone(),
        models: BTreeMap::new(),
        skipped: Vec::new(),
    };
    let mut logs = BTreeMap::new();
    for (task, result) in results {
        match result {
            Ok(outcome) => {
                bank.models.insert(task, outcome.model);
                logs.insert(task, outcome.log);
            }
            Err(TrainError::SingleClass(_)) => {
                let positives = data.iter().filter(|s| s.label(task)).count();
                let reason = format!("{positives} positives among {} samples", data.len());
                log::warn!("skipping {task}: {reason}");
                bank.skipped.push(SkipRecord { task, reason });
            }
            Err(e) => return Err(e),
        }
    }
    Ok(BankOutcome { bank, logs })
}
