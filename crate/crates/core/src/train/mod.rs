//! Supervised training: Adam, plateau learning-rate reduction, early
//! stopping, best-checkpoint retention and the epoch log.

use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{AugmentConfig, ImageSource, Loader, Split};
use crate::error::{Error, Result};
use crate::fusion::{save_checkpoint, CheckpointMeta, FusionModel};
use crate::nn::Ctx;
use crate::tensor::ops::{self, bce_term, sigmoid_scalar};
use crate::tensor::{Tensor, Var};

mod adam;
mod log;
mod schedule;

pub use adam::{Adam, BETA1, BETA2, EPSILON};
pub use log::{EpochRecord, EventLog, LOG_HEADER};
pub use schedule::{early_stop_check, Observation, PlateauScheduler, IMPROVEMENT_EPSILON};

fn default_lr() -> f64 {
    1e-3
}
fn default_weight_decay() -> f64 {
    1e-4
}
fn default_plateau_factor() -> f64 {
    0.1
}
fn default_plateau_patience() -> usize {
    3
}
fn default_early_stop_patience() -> usize {
    5
}

/// Optimizer and stopping settings. `max_epochs` and `batch_size` have no
/// defaults and must be given explicitly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    #[serde(default = "default_plateau_factor")]
    pub plateau_factor: f64,
    #[serde(default = "default_plateau_patience")]
    pub plateau_patience: usize,
    #[serde(default = "default_early_stop_patience")]
    pub early_stop_patience: usize,
    pub max_epochs: usize,
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(max_epochs: usize, batch_size: usize, seed: u64) -> Self {
        Self {
            lr: default_lr(),
            weight_decay: default_weight_decay(),
            plateau_factor: default_plateau_factor(),
            plateau_patience: default_plateau_patience(),
            early_stop_patience: default_early_stop_patience(),
            max_epochs,
            batch_size,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            problems.push(format!("train.lr {} must be positive", self.lr));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            problems.push(format!("train.weight_decay {} must be >= 0", self.weight_decay));
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) {
            problems.push(format!("train.plateau_factor {} outside (0, 1)", self.plateau_factor));
        }
        if self.plateau_patience == 0 || self.early_stop_patience == 0 {
            problems.push("train patiences must be >= 1".into());
        }
        if self.max_epochs == 0 {
            problems.push("train.max_epochs must be >= 1".into());
        }
        if self.batch_size == 0 {
            problems.push("train.batch_size must be >= 1".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }
}

/// Images and split used by [`fit`].
pub struct FitData<'a> {
    pub source: &'a ImageSource,
    pub split: &'a Split,
    pub augment: AugmentConfig,
    pub workers: usize,
}

/// Where [`fit`] writes its artifacts and what it records in checkpoints.
#[derive(Debug, Clone, Default)]
pub struct FitOutputs {
    pub checkpoint: Option<PathBuf>,
    pub event_log: Option<PathBuf>,
    pub run_config: Option<String>,
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    /// Weights from the epoch with the lowest validation loss.
    pub best: FusionModel<f32>,
    pub best_meta: CheckpointMeta,
    pub stopped_early: bool,
}

/// Loss, accuracy and probabilities of a deterministic pass.
#[derive(Debug, Clone, PartialEq)]
pub struct PassStats {
    pub loss: f64,
    pub accuracy: f64,
    pub probabilities: Vec<f64>,
    pub labels: Vec<u8>,
}

/// Eval-mode pass over `indices` in order.
pub fn evaluate_indices(
    model: &FusionModel<f32>,
    source: &ImageSource,
    indices: &[usize],
    batch_size: usize,
) -> Result<PassStats> {
    if indices.is_empty() {
        return Err(Error::invalid("evaluation over an empty set"));
    }
    let loader = Loader::eval(source, indices, batch_size)?;
    let mut stats = PassStats {
        loss: 0.0,
        accuracy: 0.0,
        probabilities: Vec::with_capacity(indices.len()),
        labels: Vec::with_capacity(indices.len()),
    };
    let mut correct = 0usize;
    for batch in loader.epoch(0) {
        let batch = batch?;
        let logits = model.logits(&batch.images)?;
        for (&z, &y) in logits.data().iter().zip(batch.labels.data()) {
            let (z, y) = (z as f64, y as f64);
            stats.loss += bce_term(z, y);
            let p = sigmoid_scalar(z);
            correct += usize::from((p >= 0.5) == (y == 1.0));
            stats.probabilities.push(p);
            stats.labels.push(y as u8);
        }
    }
    let n = indices.len() as f64;
    stats.loss /= n;
    stats.accuracy = correct as f64 / n;
    if !stats.loss.is_finite() {
        return Err(Error::NonFinite("validation loss".into()));
    }
    Ok(stats)
}

/// One optimizer step on a batch; returns the batch loss and the number of
/// correctly classified samples.
pub fn train_step(
    model: &mut FusionModel<f32>,
    optimizer: &mut Adam,
    images: &Tensor<f32>,
    labels: &Tensor<f32>,
    lr: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, usize)> {
    model.store.zero_grad();
    let (loss, correct, bindings) = {
        let mut ctx = Ctx::train(&mut model.store, rng);
        let logits = model.arch.forward(&mut ctx, &Var::constant(images.clone()))?;
        let loss = ops::bce_with_logits(&logits, labels)?;
        let value = loss.data()[0] as f64;
        if !value.is_finite() {
            return Err(Error::NonFinite("training loss".into()));
        }
        loss.backward()?;
        let correct = logits
            .data()
            .iter()
            .zip(labels.data())
            .filter(|(&z, &y)| (z >= 0.0) == (y == 1.0))
            .count();
        (value, correct, ctx.finish())
    };
    model.store.accumulate_grads(&bindings);
    optimizer.step(&mut model.store, lr)?;
    Ok((loss, correct))
}

/// Trains until `max_epochs` or early stopping. Each epoch runs a shuffled,
/// augmented training pass and a deterministic validation pass, appends a
/// record to `log`, and saves a checkpoint when the validation loss improves.
/// Returns the best weights, never the last. On error `log` keeps the
/// records written so far.
pub fn fit(
    model: &mut FusionModel<f32>,
    data: &FitData<'_>,
    cfg: &TrainConfig,
    outputs: &FitOutputs,
    log: &mut EventLog,
    mut progress: impl FnMut(&EpochRecord),
) -> Result<FitOutcome> {
    cfg.validate()?;
    data.augment.validate()?;
    if data.split.train.is_empty() || data.split.val.is_empty() {
        return Err(Error::invalid("training needs non-empty train and val parts"));
    }
    let source = data.source;
    if source.size() != model.input_size() {
        return Err(Error::invalid(format!(
            "images are resized to {} but the model expects {}",
            source.size(),
            model.input_size()
        )));
    }
    let train_loader = Loader::new(
        source,
        &data.split.train,
        cfg.batch_size,
        Some(data.augment.clone()),
        true,
        cfg.seed,
        data.workers,
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut optimizer = Adam::new(cfg.weight_decay);
    let mut scheduler = PlateauScheduler::new(cfg.lr, cfg.plateau_factor, cfg.plateau_patience);
    let mut best: Option<(FusionModel<f32>, CheckpointMeta)> = None;
    let mut stopped_early = false;
    let first_epoch = log.records().last().map_or(0, |r| r.epoch + 1);

    for epoch in first_epoch..first_epoch + cfg.max_epochs {
        let lr = scheduler.lr;
        let (mut loss_sum, mut correct, mut seen) = (0.0, 0usize, 0usize);
        for batch in train_loader.epoch(epoch) {
            let batch = batch?;
            let n = batch.labels.len();
            let (loss, ok) = train_step(model, &mut optimizer, &batch.images, &batch.labels, lr, &mut rng)?;
            loss_sum += loss * n as f64;
            correct += ok;
            seen += n;
        }
        let val = evaluate_indices(model, source, &data.split.val, cfg.batch_size)?;
        let obs = scheduler.observe(val.loss);
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / seen as f64,
            train_acc: correct as f64 / seen as f64,
            val_loss: val.loss,
            val_acc: val.accuracy,
            lr: scheduler.lr,
        };
        log.append(record)?;
        if let Some(path) = &outputs.event_log {
            log.export(path)?;
        }
        progress(&record);
        if obs.improved {
            let meta = CheckpointMeta {
                seed: cfg.seed,
                epoch: Some(epoch),
                val_loss: Some(val.loss),
                run_config: outputs.run_config.clone(),
            };
            if let Some(path) = &outputs.checkpoint {
                save_checkpoint(model, &meta, path)?;
            }
            let mut snapshot = model.clone();
            snapshot.store.zero_grad();
            best = Some((snapshot, meta));
        }
        if early_stop_check(scheduler.epochs_since_improvement(), cfg.early_stop_patience) {
            stopped_early = true;
            break;
        }
    }
    let (best, best_meta) = best.ok_or_else(|| Error::NonFinite("validation loss never improved".into()))?;
    Ok(FitOutcome {
        best,
        best_meta,
        stopped_early,
    })
}
