//! Mini-batch BCE training with early stopping on validation AUROC.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::ehr::Task;
use crate::error::{Error, Result};
use crate::fusion::{Model, ModelInput};
use crate::metrics::{auroc, bootstrap_metrics, MetricReport};
use crate::nn::{AdamW, AdamWConfig};
use crate::par::Execution;
use crate::rng::{stream, substream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub lr: f64,
    pub task: Task,
    pub optimizer: AdamWConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 256,
            max_epochs: 30,
            patience: 5,
            lr: 6e-4,
            task: Task::Mortality,
            optimizer: AdamWConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("train.batch_size", "must be positive"));
        }
        if self.max_epochs == 0 {
            return Err(Error::config("train.max_epochs", "must be positive"));
        }
        if self.patience == 0 || self.patience > self.max_epochs {
            return Err(Error::config("train.patience", "must lie in 1..=max_epochs"));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::config("train.lr", "must be finite and non-negative"));
        }
        let o = &self.optimizer;
        if !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) {
            return Err(Error::config("train.optimizer.beta1", "betas must lie in [0, 1)"));
        }
        if !(o.eps > 0.0) || !(o.weight_decay >= 0.0) {
            return Err(Error::config("train.optimizer.eps", "eps must be positive and weight_decay non-negative"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_auroc: f64,
    pub improved: bool,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters from the best validation epoch, rounded through `f32`.
    pub model: Model,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_auroc: f64,
}

/// Labelled inputs for one split.
#[derive(Clone, Copy, Debug)]
pub struct Split<'a> {
    pub inputs: &'a [ModelInput],
    pub labels: &'a [u8],
}

impl<'a> Split<'a> {
    pub fn new(inputs: &'a [ModelInput], labels: &'a [u8]) -> Result<Self> {
        if inputs.len() != labels.len() {
            return Err(Error::DimensionMismatch { expected: inputs.len(), actual: labels.len() });
        }
        Ok(Split { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// Trains `model` in place; returns the best-validation snapshot and per-epoch history.
pub fn train(mut model: Model, train: Split, val: Split, cfg: &TrainConfig, seed: u64, exec: Execution) -> Result<TrainOutcome> {
    train_masked(&mut model, train, val, cfg, seed, exec, None)
}

/// As [`train`], updating only parameters flagged in `trainable`.
pub fn train_masked(
    model: &mut Model,
    train: Split,
    val: Split,
    cfg: &TrainConfig,
    seed: u64,
    exec: Execution,
    trainable: Option<&[bool]>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::InvalidInput("training and validation sets must be non-empty".into()));
    }
    let val_pos = val.labels.iter().filter(|&&y| y == 1).count();
    if val_pos == 0 || val_pos == val.len() {
        return Err(Error::InvalidInput("validation set needs both classes".into()));
    }
    let mut rng = substream(seed, stream::SHUFFLE);
    let mut opt = AdamW::new(&model.params, cfg.optimizer);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::new();
    let mut best: Option<(f64, usize, crate::nn::ParamSet)> = None;
    let mut since_best = 0;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<(&ModelInput, f64)> =
                idx.iter().map(|&i| (&train.inputs[i], train.labels[i] as f64)).collect();
            let (loss, grads) = model.loss_and_grad(&batch, exec)?;
            if !loss.is_finite() || !grads.all_finite() {
                return Err(Error::NanLoss { epoch, batch: b + 1 });
            }
            opt.step_masked(&mut model.params, &grads, cfg.lr, trainable);
            loss_sum += loss * idx.len() as f64;
        }
        let scores = model.predict_all(val.inputs, exec)?;
        let val_auroc = auroc(&scores, val.labels)?;
        let improved = best.as_ref().is_none_or(|(b, _, _)| val_auroc > *b);
        if improved {
            best = Some((val_auroc, epoch, model.params.clone()));
            since_best = 0;
        } else {
            since_best += 1;
        }
        let rec = EpochRecord {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            val_auroc,
            improved,
        };
        log::debug!("epoch {epoch}: loss {:.5} val AUROC {:.4}", rec.train_loss, val_auroc);
        history.push(rec);
        if since_best >= cfg.patience {
            break;
        }
    }
    let (best_val_auroc, best_epoch, params) = best.expect("at least one epoch ran");
    model.params = params;
    model.params.round_to_f32();
    Ok(TrainOutcome {
        model: model.clone(),
        history,
        best_epoch,
        best_val_auroc,
    })
}

/// Test-set scores and their bootstrap report.
pub fn evaluate(model: &Model, split: Split, b: usize, seed: u64, exec: Execution) -> Result<(MetricReport, Vec<f64>)> {
    let scores = model.predict_all(split.inputs, exec)?;
    let boot_seed = crate::rng::derive_seed(seed, stream::BOOTSTRAP);
    Ok((bootstrap_metrics(&scores, split.labels, b, boot_seed)?, scores))
}
