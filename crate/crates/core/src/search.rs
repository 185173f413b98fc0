//! Alternating search: one weight update per training batch, one controller
//! update on a validation batch every `f` weight updates.

use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::controller::{
    apply_gates, apply_gates_backward, select_by_threshold, select_top_k, Controller, ControllerSettings, GateMode,
    Gates, SelectionRule, TemperatureClock,
};
use crate::data::{make_batches, Batch, CyclingBatches, DatasetSplits, SplitTag};
use crate::diff::ops::bce_loss;
use crate::diff::{AdamConfig, Rng};
use crate::error::{Error, Result};
use crate::model::{Mode, ModelConfig, ModelSettings, RecModel};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchSettings {
    /// Fields to keep; `None` keeps half of them (rounded up).
    pub k: Option<usize>,
    pub update_frequency: u64,
    pub max_epochs: usize,
    pub patience: usize,
    pub min_delta: f64,
    pub batch_size: usize,
    pub selection: SelectionRule,
}

impl Default for SearchSettings {
    fn default() -> Self {
        SearchSettings {
            k: None,
            update_frequency: 1,
            max_epochs: 30,
            patience: 3,
            min_delta: 1e-5,
            batch_size: 2048,
            selection: SelectionRule::TopK,
        }
    }
}

impl SearchSettings {
    pub fn resolved_k(&self, num_fields: usize) -> usize {
        self.k.unwrap_or(num_fields.div_ceil(2).max(1))
    }

    pub fn validate(&self, num_fields: usize) -> Result<()> {
        if self.update_frequency < 1 {
            return Err(Error::config("search.update_frequency must be at least 1"));
        }
        if self.patience < 1 {
            return Err(Error::config("search.patience must be at least 1"));
        }
        if self.max_epochs < 1 {
            return Err(Error::config("search.max_epochs must be at least 1"));
        }
        if self.batch_size < 1 {
            return Err(Error::config("search.batch_size must be at least 1"));
        }
        if !(self.min_delta >= 0.0) {
            return Err(Error::config("search.min_delta must be non-negative"));
        }
        let k = self.resolved_k(num_fields);
        if self.selection == SelectionRule::TopK && (k < 1 || k > num_fields) {
            return Err(Error::config(format!("search.k = {k} must lie in [1, {num_fields}]")));
        }
        Ok(())
    }
}

/// Everything a search run needs besides the data.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub search: SearchSettings,
    pub controller: ControllerSettings,
    pub model: ModelSettings,
    pub optimizer: AdamConfig,
    pub seed: u64,
}

/// One line of the search trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// Weight-update count after this step, starting at 1.
    pub step: u64,
    pub epoch: usize,
    /// Temperature of the gates used; absent in plain-softmax mode.
    pub tau: Option<f64>,
    /// Mean gate per field in the weight update.
    pub p1: Vec<f64>,
    pub train_loss: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub val_loss: Option<f64>,
    /// `α¹` after the controller update, present only on controller steps.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub alpha1: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochSummary {
    pub epoch: usize,
    pub train_loss: f64,
    /// Mean validation loss over the epoch's controller steps.
    pub val_loss: Option<f64>,
    pub controller_steps: u64,
}

/// Receives step records in step order.
pub trait TraceSink {
    fn record(&mut self, record: &StepRecord) -> Result<()>;

    fn flush(&mut self) -> Result<()> {
        Ok(())
    }
}

impl TraceSink for Vec<StepRecord> {
    fn record(&mut self, record: &StepRecord) -> Result<()> {
        self.push(record.clone());
        Ok(())
    }
}

/// Discards every record.
pub struct NullSink;

impl TraceSink for NullSink {
    fn record(&mut self, _: &StepRecord) -> Result<()> {
        Ok(())
    }
}

/// JSON lines, one per step.
pub struct JsonlSink<W: Write> {
    writer: W,
}

impl<W: Write> JsonlSink<W> {
    pub fn new(writer: W) -> Self {
        JsonlSink { writer }
    }

    pub fn into_inner(self) -> W {
        self.writer
    }
}

impl<W: Write> TraceSink for JsonlSink<W> {
    fn record(&mut self, record: &StepRecord) -> Result<()> {
        serde_json::to_writer(&mut self.writer, record)?;
        self.writer.write_all(b"\n").map_err(|e| Error::io("writing trace", e))
    }

    fn flush(&mut self) -> Result<()> {
        self.writer.flush().map_err(|e| Error::io("flushing trace", e))
    }
}

#[derive(Clone, Debug)]
pub struct SearchOutcome {
    pub selected: Vec<usize>,
    pub alpha1: Vec<f64>,
    pub warning: Option<String>,
    pub epochs: Vec<EpochSummary>,
    pub weight_steps: u64,
    pub controller_steps: u64,
    pub stopped_early: bool,
    pub seconds: f64,
    pub model: RecModel,
    pub controller: Controller,
}

/// Random streams consumed by a search.
pub struct SearchRngs {
    pub dropout: Rng,
    pub gumbel: Rng,
}

impl SearchRngs {
    pub fn new(seed: u64) -> Self {
        SearchRngs { dropout: Rng::stream(seed, "dropout"), gumbel: Rng::stream(seed, "gumbel") }
    }
}

fn temperature(controller: &Controller, weight_steps: u64) -> f64 {
    let t = match controller.settings.clock {
        TemperatureClock::ControllerSteps => controller.updates(),
        TemperatureClock::WeightSteps => weight_steps,
    };
    controller.settings.temperature.at(t)
}

fn expect_tag(batch: &Batch, tag: SplitTag) -> Result<()> {
    if batch.tag != tag {
        return Err(Error::contract(format!("expected a {tag:?} batch, got {:?}", batch.tag)));
    }
    Ok(())
}

struct GatedPass {
    embedded: crate::diff::Matrix,
    gates: Gates,
    loss: f64,
    grad_gated: crate::diff::Matrix,
}

fn gated_pass(
    model: &mut RecModel,
    controller: &Controller,
    batch: &Batch,
    tau: f64,
    rngs: &mut SearchRngs,
    accumulate: bool,
) -> Result<GatedPass> {
    let embedded = model.embed_batch(batch)?;
    let gates = controller.sample_gates(batch.rows(), tau, &mut rngs.gumbel)?;
    let gated = apply_gates(&embedded, &gates, model.config.embedding_dim)?;
    let (pred, record) = model.forward(&gated, Mode::Train(&mut rngs.dropout))?;
    let (loss, grad) = bce_loss(&pred, &batch.labels)?;
    if !loss.is_finite() {
        return Err(Error::NonFinite { name: format!("{:?} loss", batch.tag).to_lowercase() });
    }
    let grad_gated = model.backward(&record, &grad, accumulate)?;
    Ok(GatedPass { embedded, gates, loss, grad_gated })
}

/// Updates the model weights on a training batch; the controller is left untouched.
/// Returns the loss and the gates that were used.
pub fn weight_step(
    model: &mut RecModel,
    controller: &Controller,
    batch: &Batch,
    tau: f64,
    rngs: &mut SearchRngs,
) -> Result<(f64, Gates)> {
    expect_tag(batch, SplitTag::Train)?;
    let pass = gated_pass(model, controller, batch, tau, rngs, true)?;
    let (de, _) = apply_gates_backward(&pass.embedded, &pass.gates, &pass.grad_gated, model.config.embedding_dim)?;
    model.accumulate_embedding_grad(batch, &de)?;
    model.step()?;
    Ok((pass.loss, pass.gates))
}

/// Updates the controller logits on a validation batch; model weights are left untouched.
pub fn controller_step(
    model: &mut RecModel,
    controller: &mut Controller,
    batch: &Batch,
    tau: f64,
    rngs: &mut SearchRngs,
) -> Result<f64> {
    expect_tag(batch, SplitTag::Validation)?;
    let pass = gated_pass(model, controller, batch, tau, rngs, false)?;
    let (_, dgate) = apply_gates_backward(&pass.embedded, &pass.gates, &pass.grad_gated, model.config.embedding_dim)?;
    controller.zero_grad();
    controller.backward(&pass.gates, &dgate)?;
    controller.step()?;
    Ok(pass.loss)
}

/// True once the best loss has not improved by more than `min_delta` for
/// `patience` consecutive epochs, or `max_epochs` losses have been seen.
pub fn converged(epoch_losses: &[f64], patience: usize, min_delta: f64, max_epochs: usize) -> bool {
    if epoch_losses.len() >= max_epochs {
        return true;
    }
    let mut best = f64::INFINITY;
    let mut stale = 0;
    for &l in epoch_losses {
        if l < best - min_delta {
            best = l;
            stale = 0;
        } else {
            stale += 1;
        }
    }
    stale >= patience
}

/// Runs the search from fresh model and controller state.
pub fn run_search(config: &SearchConfig, splits: &DatasetSplits, sink: &mut dyn TraceSink) -> Result<SearchOutcome> {
    let n = splits.num_fields();
    config.search.validate(n)?;
    config.optimizer.validate()?;
    if splits.train.is_empty() || splits.validation.is_empty() {
        return Err(Error::config("search needs non-empty training and validation splits"));
    }
    let model_config = ModelConfig::all_fields(splits.cardinalities.clone(), &config.model);
    model_config.validate()?;
    let mut model = RecModel::new(model_config, config.optimizer, &mut Rng::stream(config.seed, "init"))?;
    let mut controller = Controller::new(n, config.controller.clone(), config.optimizer)?;
    run_search_with(config, splits, &mut model, &mut controller, sink)
        .map(|(summary, selection)| finish(summary, selection, model, controller))
}

/// Selected fields, final α¹ and any selection warning.
type Selection = (Vec<usize>, Vec<f64>, Option<String>);

struct LoopSummary {
    epochs: Vec<EpochSummary>,
    weight_steps: u64,
    controller_steps: u64,
    stopped_early: bool,
    seconds: f64,
}

fn finish(summary: LoopSummary, selection: Selection, model: RecModel, controller: Controller) -> SearchOutcome {
    let (selected, alpha1, warning) = selection;
    SearchOutcome {
        selected,
        alpha1,
        warning,
        epochs: summary.epochs,
        weight_steps: summary.weight_steps,
        controller_steps: summary.controller_steps,
        stopped_early: summary.stopped_early,
        seconds: summary.seconds,
        model,
        controller,
    }
}

fn run_search_with(
    config: &SearchConfig,
    splits: &DatasetSplits,
    model: &mut RecModel,
    controller: &mut Controller,
    sink: &mut dyn TraceSink,
) -> Result<(LoopSummary, Selection)> {
    let settings = &config.search;
    let start = Instant::now();
    let mut rngs = SearchRngs::new(config.seed);
    let mut validation = CyclingBatches::new(Arc::new(splits.validation.clone()), settings.batch_size, config.seed)?;
    let mut epochs = Vec::new();
    let mut epoch_losses = Vec::new();
    let mut weight_steps = 0u64;
    let mut stopped_early = false;
    let softmax = controller.settings.gate_mode == GateMode::Softmax;

    let result = (|| -> Result<()> {
        for epoch in 0..settings.max_epochs {
            let mut train_sum = 0.0;
            let mut train_batches = 0usize;
            let mut val_sum = 0.0;
            let mut val_count = 0u64;
            for batch in make_batches(&splits.train, settings.batch_size, true, config.seed, epoch as u64)? {
                let tau = temperature(controller, weight_steps);
                let (train_loss, gates) = weight_step(model, controller, &batch, tau, &mut rngs)?;
                weight_steps += 1;
                train_sum += train_loss;
                train_batches += 1;
                let mut record = StepRecord {
                    step: weight_steps,
                    epoch,
                    tau: (!softmax).then_some(tau),
                    p1: gates.mean_values(controller.num_fields()),
                    train_loss,
                    val_loss: None,
                    alpha1: None,
                };
                if weight_steps.is_multiple_of(settings.update_frequency) {
                    let vbatch = validation.next_batch();
                    let tau = temperature(controller, weight_steps);
                    let val_loss = controller_step(model, controller, &vbatch, tau, &mut rngs)?;
                    val_sum += val_loss;
                    val_count += 1;
                    record.val_loss = Some(val_loss);
                    record.alpha1 = Some(controller.alpha1());
                }
                sink.record(&record)?;
            }
            let val_loss = (val_count > 0).then(|| val_sum / val_count as f64);
            epochs.push(EpochSummary {
                epoch,
                train_loss: train_sum / train_batches.max(1) as f64,
                val_loss,
                controller_steps: val_count,
            });
            log::debug!("search epoch {epoch}: train {:.5} val {val_loss:?}", train_sum / train_batches.max(1) as f64);
            if let Some(v) = val_loss {
                epoch_losses.push(v);
                if converged(&epoch_losses, settings.patience, settings.min_delta, usize::MAX) {
                    stopped_early = epoch + 1 < settings.max_epochs;
                    break;
                }
            }
        }
        Ok(())
    })();
    sink.flush()?;
    result?;

    let alpha1 = controller.alpha1();
    let selection = match settings.selection {
        SelectionRule::TopK => (select_top_k(&alpha1, settings.resolved_k(alpha1.len()))?, alpha1, None),
        SelectionRule::Threshold => {
            let t = select_by_threshold(&alpha1);
            if let Some(w) = &t.warning {
                log::warn!("{w}");
            }
            (t.fields, alpha1, t.warning)
        }
    };
    let summary = LoopSummary {
        epochs,
        weight_steps,
        controller_steps: controller.updates(),
        stopped_early,
        seconds: start.elapsed().as_secs_f64(),
    };
    Ok((summary, selection))
}
