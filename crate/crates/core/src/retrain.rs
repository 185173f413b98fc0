//! Retraining on a fixed field subset, then a single test evaluation.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{make_batches, DatasetSplits, Split, SplitTag};
use crate::diff::ops::bce_loss;
use crate::diff::{Adam, AdamConfig, ParameterStore, Rng};
use crate::error::{Error, Result};
use crate::metrics::{auc, logloss, ScoredSet};
use crate::model::{adapt_architecture, Mode, ModelConfig, ModelSettings, RecModel};
use crate::search::converged;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetrainSettings {
    pub max_epochs: usize,
    pub patience: usize,
    pub min_delta: f64,
    pub batch_size: usize,
    /// Rows per inference batch when evaluating.
    pub eval_batch_size: usize,
}

impl Default for RetrainSettings {
    fn default() -> Self {
        RetrainSettings { max_epochs: 30, patience: 3, min_delta: 1e-5, batch_size: 2048, eval_batch_size: 2048 }
    }
}

impl RetrainSettings {
    pub fn validate(&self) -> Result<()> {
        if self.max_epochs < 1 || self.patience < 1 || self.batch_size < 1 || self.eval_batch_size < 1 {
            return Err(Error::config("retrain epochs, patience and batch sizes must be at least 1"));
        }
        if !(self.min_delta >= 0.0) {
            return Err(Error::config("retrain.min_delta must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_logloss: f64,
    pub val_auc: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrainReport {
    pub selected: Vec<usize>,
    pub auc: f64,
    pub logloss: f64,
    pub epochs: usize,
    /// Epoch whose weights were kept (lowest validation logloss).
    pub best_epoch: usize,
    pub train_seconds: f64,
    /// Mean wall-clock time per inference batch on the test split.
    pub infer_ms: f64,
    pub history: Vec<EpochMetrics>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub auc: f64,
    pub logloss: f64,
    pub infer_ms: f64,
}

/// Evaluation-mode predictions for every row of `split`, in row order.
pub fn predict_split(model: &RecModel, split: &Split, batch_size: usize) -> Result<(Vec<f64>, f64)> {
    let mut scores = Vec::with_capacity(split.len());
    let mut batches = 0usize;
    let start = Instant::now();
    for batch in make_batches(split, batch_size, false, 0, 0)? {
        scores.extend(model.predict(&batch)?);
        batches += 1;
    }
    let ms = start.elapsed().as_secs_f64() * 1e3 / batches.max(1) as f64;
    Ok((scores, ms))
}

/// AUC and logloss of `model` on `split`. `cardinalities` describe the
/// dataset the split came from and must match the model's.
pub fn evaluate(model: &RecModel, split: &Split, cardinalities: &[usize], batch_size: usize) -> Result<Evaluation> {
    if model.config.cardinalities != cardinalities || split.num_fields != cardinalities.len() {
        return Err(Error::config(format!(
            "model was built for cardinalities {:?}, data has {:?}",
            model.config.cardinalities, cardinalities
        )));
    }
    let (scores, infer_ms) = predict_split(model, split, batch_size)?;
    let set = ScoredSet::new(&scores, &split.labels)?;
    Ok(Evaluation { auc: auc(&set)?, logloss: logloss(&set)?, infer_ms })
}

fn snapshot(model: &RecModel) -> (ParameterStore, Adam) {
    (model.params.clone(), model.optimizer.clone())
}

/// Trains a fresh model on `selected`, keeps the best validation epoch and
/// evaluates it once on the test split.
pub fn run_retrain(
    selected: &[usize],
    settings: &RetrainSettings,
    model: &ModelSettings,
    optimizer: &AdamConfig,
    splits: &DatasetSplits,
    seed: u64,
) -> Result<(RetrainReport, RecModel)> {
    settings.validate()?;
    optimizer.validate()?;
    let n = splits.num_fields();
    if selected.is_empty() {
        return Err(Error::config("cannot retrain with no fields"));
    }
    if let Some(&f) = selected.iter().find(|&&f| f >= n) {
        return Err(Error::contract(format!("selected field {f} out of range for {n} fields")));
    }
    if splits.train.is_empty() || splits.validation.is_empty() || splits.test.is_empty() {
        return Err(Error::config("retraining needs non-empty train, validation and test splits"));
    }
    let base = ModelConfig::all_fields(splits.cardinalities.clone(), model);
    base.validate()?;
    let mut net = adapt_architecture(&base, selected, *optimizer, &mut Rng::stream(seed, "retrain-init"))?;
    let mut dropout_rng = Rng::stream(seed, "retrain-dropout");

    let start = Instant::now();
    let mut history = Vec::new();
    let mut losses = Vec::new();
    let mut best: Option<(f64, usize, (ParameterStore, Adam))> = None;
    for epoch in 0..settings.max_epochs {
        let mut sum = 0.0;
        let mut count = 0usize;
        for batch in make_batches(&splits.train, settings.batch_size, true, seed, epoch as u64)? {
            debug_assert_eq!(batch.tag, SplitTag::Train);
            let e = net.embed_batch(&batch)?;
            let (pred, record) = net.forward(&e, Mode::Train(&mut dropout_rng))?;
            let (loss, grad) = bce_loss(&pred, &batch.labels)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite { name: "train loss".into() });
            }
            let de = net.backward(&record, &grad, true)?;
            net.accumulate_embedding_grad(&batch, &de)?;
            net.step()?;
            sum += loss;
            count += 1;
        }
        let (scores, _) = predict_split(&net, &splits.validation, settings.eval_batch_size)?;
        let set = ScoredSet::new(&scores, &splits.validation.labels)?;
        let val_logloss = logloss(&set)?;
        let val_auc = auc(&set).ok();
        history.push(EpochMetrics { epoch, train_loss: sum / count.max(1) as f64, val_logloss, val_auc });
        log::debug!("retrain epoch {epoch}: val logloss {val_logloss:.5} auc {val_auc:?}");
        if best.as_ref().is_none_or(|(b, _, _)| val_logloss < *b) {
            best = Some((val_logloss, epoch, snapshot(&net)));
        }
        losses.push(val_logloss);
        if converged(&losses, settings.patience, settings.min_delta, settings.max_epochs) {
            break;
        }
    }
    let train_seconds = start.elapsed().as_secs_f64();
    let (_, best_epoch, (params, adam)) = best.expect("at least one epoch runs");
    let net = RecModel::from_parts(net.config.clone(), params, adam)?;
    let eval = evaluate(&net, &splits.test, &splits.cardinalities, settings.eval_batch_size)?;
    let mut selected = selected.to_vec();
    selected.sort_unstable();
    Ok((
        RetrainReport {
            selected,
            auc: eval.auc,
            logloss: eval.logloss,
            epochs: history.len(),
            best_epoch,
            train_seconds,
            infer_ms: eval.infer_ms,
            history,
        },
        net,
    ))
}
