//! Embedding + MLP click-through model.
//!
//! Each active field `n` owns a table with one row of width `d` per category,
//! so gathering row `x_n` is the product of the table with the one-hot `x_n`.
//! The concatenated embeddings feed ReLU hidden layers (with inverted dropout
//! in training) and a single sigmoid output unit.

use serde::{Deserialize, Serialize};

use crate::data::Batch;
use crate::diff::ops::{
    dense_affine_backward, dense_affine_forward, dropout, relu_backward, relu_forward, sigmoid_forward,
};
use crate::diff::{Adam, AdamConfig, Matrix, ParamId, ParameterStore, Rng};
use crate::error::{Error, Result};

/// Architecture knobs shared by search and retraining.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSettings {
    pub embedding_dim: usize,
    pub hidden: Vec<usize>,
    pub dropout: f64,
}

impl Default for ModelSettings {
    fn default() -> Self {
        ModelSettings { embedding_dim: 16, hidden: vec![16, 8], dropout: 0.2 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// `D_n` for every field of the dataset, active or not.
    pub cardinalities: Vec<usize>,
    /// Field ids that enter the model, ascending.
    pub active: Vec<usize>,
    pub embedding_dim: usize,
    pub hidden: Vec<usize>,
    pub dropout: f64,
}

impl ModelConfig {
    pub fn all_fields(cardinalities: Vec<usize>, settings: &ModelSettings) -> Self {
        let active = (0..cardinalities.len()).collect();
        ModelConfig {
            cardinalities,
            active,
            embedding_dim: settings.embedding_dim,
            hidden: settings.hidden.clone(),
            dropout: settings.dropout,
        }
    }

    pub fn num_fields(&self) -> usize {
        self.cardinalities.len()
    }

    /// Width of the first MLP layer: active fields times embedding size.
    pub fn input_width(&self) -> usize {
        self.active.len() * self.embedding_dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.embedding_dim == 0 {
            return Err(Error::config("embedding_dim must be at least 1"));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::config("hidden sizes must be a nonempty list of positive widths"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("dropout must lie in [0, 1)"));
        }
        if self.active.is_empty() {
            return Err(Error::contract("model needs at least one active field"));
        }
        if self.cardinalities.contains(&0) {
            return Err(Error::contract("every field needs D_n ≥ 1"));
        }
        for w in self.active.windows(2) {
            if w[0] >= w[1] {
                return Err(Error::contract(format!("active fields {:?} must be distinct and ascending", self.active)));
            }
        }
        if let Some(&f) = self.active.iter().find(|&&f| f >= self.num_fields()) {
            return Err(Error::contract(format!("active field {f} out of range for {} fields", self.num_fields())));
        }
        Ok(())
    }
}

pub enum Mode<'a> {
    Eval,
    Train(&'a mut Rng),
}

/// Activations cached by `forward` for the matching `backward`.
#[derive(Clone, Debug)]
pub struct ForwardRecord {
    /// Input to every affine layer, the output layer last (after dropout).
    pub layer_inputs: Vec<Matrix>,
    /// Hidden pre-activations `W_m h_m + b_m`.
    pub pre_activations: Vec<Matrix>,
    pub dropout_masks: Vec<Option<Vec<f64>>>,
    pub predictions: Vec<f64>,
    version: u64,
}

#[derive(Clone, Debug)]
pub struct RecModel {
    pub config: ModelConfig,
    pub params: ParameterStore,
    pub optimizer: Adam,
    embeddings: Vec<ParamId>,
    dense: Vec<(ParamId, ParamId)>,
    version: u64,
}

pub fn embedding_name(field: usize) -> String {
    format!("embedding.{field}")
}

impl RecModel {
    /// Fresh model: embeddings ~ N(0, 0.01²), dense weights and biases
    /// ~ U(−1/√fan_in, 1/√fan_in).
    pub fn new(config: ModelConfig, optimizer: AdamConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let d = config.embedding_dim;
        let mut params = ParameterStore::new();
        let mut embeddings = Vec::with_capacity(config.active.len());
        for &f in &config.active {
            let rows = config.cardinalities[f];
            let values = (0..rows * d).map(|_| rng.normal(0.0, 0.01)).collect();
            embeddings.push(params.add(embedding_name(f), rows, d, values)?);
        }
        let mut widths = vec![config.input_width()];
        widths.extend(&config.hidden);
        widths.push(1);
        let mut dense = Vec::new();
        for (m, w) in widths.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let mut uniform = |n: usize| (0..n).map(|_| (2.0 * rng.uniform() - 1.0) * bound).collect::<Vec<_>>();
            let last = m == widths.len() - 2;
            let prefix = if last { "output".to_string() } else { format!("dense.{m}") };
            let wid = params.add(format!("{prefix}.weight"), fan_in, fan_out, uniform(fan_in * fan_out))?;
            let bid = params.add(format!("{prefix}.bias"), 1, fan_out, uniform(fan_out))?;
            dense.push((wid, bid));
        }
        let optimizer = Adam::new(optimizer, &params);
        Ok(RecModel { config, params, optimizer, embeddings, dense, version: 0 })
    }

    /// Rebuilds handles after parameters were loaded from a checkpoint.
    pub fn from_parts(config: ModelConfig, params: ParameterStore, optimizer: Adam) -> Result<Self> {
        config.validate()?;
        let find =
            |name: String| params.find(&name).ok_or_else(|| Error::contract(format!("missing parameter {name}")));
        let embeddings = config.active.iter().map(|&f| find(embedding_name(f))).collect::<Result<Vec<_>>>()?;
        let mut dense = Vec::new();
        for m in 0..config.hidden.len() {
            dense.push((find(format!("dense.{m}.weight"))?, find(format!("dense.{m}.bias"))?));
        }
        dense.push((find("output.weight".into())?, find("output.bias".into())?));
        let mut widths = vec![config.input_width()];
        widths.extend(&config.hidden);
        widths.push(1);
        for (&(w, b), pair) in dense.iter().zip(widths.windows(2)) {
            let (wp, bp) = (params.get(w), params.get(b));
            if (wp.rows, wp.cols, bp.cols) != (pair[0], pair[1], pair[1]) {
                return Err(Error::contract(format!("parameter {} has the wrong shape", wp.name)));
            }
        }
        for (&id, &f) in embeddings.iter().zip(&config.active) {
            let p = params.get(id);
            if (p.rows, p.cols) != (config.cardinalities[f], config.embedding_dim) {
                return Err(Error::contract(format!("parameter {} has the wrong shape", p.name)));
            }
        }
        if params.len() != embeddings.len() + 2 * dense.len() || optimizer.first.len() != params.len() {
            return Err(Error::contract("unexpected parameters in store"));
        }
        Ok(RecModel { config, params, optimizer, embeddings, dense, version: 0 })
    }

    pub fn embedding_param(&self, field: usize) -> Option<ParamId> {
        self.config.active.iter().position(|&f| f == field).map(|j| self.embeddings[j])
    }

    pub fn dense_params(&self) -> &[(ParamId, ParamId)] {
        &self.dense
    }

    fn check_batch(&self, batch: &Batch) -> Result<()> {
        if batch.num_fields != self.config.num_fields() {
            return Err(Error::contract(format!(
                "batch has {} fields, model expects {}",
                batch.num_fields,
                self.config.num_fields()
            )));
        }
        Ok(())
    }

    /// `E = [e_n]` over active fields, one block of width `d` per field.
    pub fn embed_batch(&self, batch: &Batch) -> Result<Matrix> {
        self.check_batch(batch)?;
        let d = self.config.embedding_dim;
        let mut out = Matrix::zeros(batch.rows(), self.config.input_width());
        for b in 0..batch.rows() {
            let row = batch.row(b);
            let dst = out.row_mut(b);
            for (j, (&f, &pid)) in self.config.active.iter().zip(&self.embeddings).enumerate() {
                let idx = row[f] as usize;
                let table = self.params.get(pid);
                if idx >= table.rows {
                    return Err(Error::contract(format!(
                        "index {idx} out of range for field {f} (D = {})",
                        table.rows
                    )));
                }
                dst[j * d..(j + 1) * d].copy_from_slice(&table.value[idx * d..(idx + 1) * d]);
            }
        }
        Ok(out)
    }

    pub fn forward(&self, input: &Matrix, mode: Mode<'_>) -> Result<(Vec<f64>, ForwardRecord)> {
        if input.cols() != self.config.input_width() {
            return Err(Error::contract(format!(
                "model input width {} but expected {}",
                input.cols(),
                self.config.input_width()
            )));
        }
        let (training, mut rng) = match mode {
            Mode::Eval => (false, None),
            Mode::Train(r) => (true, Some(r)),
        };
        let mut layer_inputs = Vec::with_capacity(self.dense.len());
        let mut pre_activations = Vec::with_capacity(self.dense.len() - 1);
        let mut dropout_masks = Vec::with_capacity(self.dense.len() - 1);
        let mut h = input.clone();
        let (hidden_layers, output) = self.dense.split_at(self.dense.len() - 1);
        for &(w, b) in hidden_layers {
            let z = dense_affine_forward(&h, &self.params.get(w).as_matrix(), &self.params.get(b).value)?;
            let mut a = relu_forward(&z);
            let mask = match rng.as_deref_mut() {
                Some(r) => dropout(&mut a, self.config.dropout, r, training)?,
                None => None,
            };
            layer_inputs.push(std::mem::replace(&mut h, a));
            pre_activations.push(z);
            dropout_masks.push(mask);
        }
        let (w, b) = output[0];
        let logits = dense_affine_forward(&h, &self.params.get(w).as_matrix(), &self.params.get(b).value)?;
        layer_inputs.push(h);
        let predictions = sigmoid_forward(logits.data());
        Ok((
            predictions.clone(),
            ForwardRecord { layer_inputs, pre_activations, dropout_masks, predictions, version: self.version },
        ))
    }

    /// Back-propagates `∂loss/∂ŷ`. Dense-layer gradients are added to the
    /// store when `accumulate` is set; the gradient with respect to the model
    /// input is always returned.
    pub fn backward(&mut self, record: &ForwardRecord, grad_predictions: &[f64], accumulate: bool) -> Result<Matrix> {
        if record.version != self.version || record.layer_inputs.len() != self.dense.len() {
            return Err(Error::contract("forward record is stale or from another model"));
        }
        let p = &record.predictions;
        if grad_predictions.len() != p.len() {
            return Err(Error::contract("gradient length differs from batch size"));
        }
        let dlogit: Vec<f64> = grad_predictions.iter().zip(p).map(|(g, y)| g * y * (1.0 - y)).collect();
        let mut grad = Matrix::from_vec(p.len(), 1, dlogit)?;
        for m in (0..self.dense.len()).rev() {
            if m < self.dense.len() - 1 {
                if let Some(mask) = &record.dropout_masks[m] {
                    for (g, k) in grad.data_mut().iter_mut().zip(mask) {
                        *g *= k;
                    }
                }
                relu_backward(&record.pre_activations[m], &mut grad);
            }
            let (w, b) = self.dense[m];
            let g = dense_affine_backward(&record.layer_inputs[m], &self.params.get(w).as_matrix(), &grad)?;
            if accumulate {
                add_into(&mut self.params.get_mut(w).grad, g.weights.data());
                add_into(&mut self.params.get_mut(b).grad, &g.bias);
            }
            grad = g.input;
        }
        Ok(grad)
    }

    /// Scatters `∂loss/∂E` into the rows of the embedding tables that the batch touched.
    pub fn accumulate_embedding_grad(&mut self, batch: &Batch, grad_embedded: &Matrix) -> Result<()> {
        self.check_batch(batch)?;
        if grad_embedded.rows() != batch.rows() || grad_embedded.cols() != self.config.input_width() {
            return Err(Error::contract("embedding gradient shape mismatch"));
        }
        let d = self.config.embedding_dim;
        for b in 0..batch.rows() {
            let row = batch.row(b);
            let g = grad_embedded.row(b);
            for (j, (&f, &pid)) in self.config.active.iter().zip(&self.embeddings).enumerate() {
                let idx = row[f] as usize;
                add_into(&mut self.params.get_mut(pid).grad[idx * d..(idx + 1) * d], &g[j * d..(j + 1) * d]);
            }
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.params.zero_grad();
    }

    /// Applies the optimizer to the accumulated gradients, then clears them.
    pub fn step(&mut self) -> Result<()> {
        self.optimizer.update(&mut self.params)?;
        self.version += 1;
        self.params.zero_grad();
        Ok(())
    }

    /// Evaluation-mode predictions for a batch, no gates.
    pub fn predict(&self, batch: &Batch) -> Result<Vec<f64>> {
        let e = self.embed_batch(batch)?;
        Ok(self.forward(&e, Mode::Eval)?.0)
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Retraining architecture: tables only for `selected`, first layer of width
/// `K·d`, every weight freshly initialised.
pub fn adapt_architecture(
    config: &ModelConfig,
    selected: &[usize],
    optimizer: AdamConfig,
    rng: &mut Rng,
) -> Result<RecModel> {
    let mut active = selected.to_vec();
    active.sort_unstable();
    if active.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::contract(format!("selected fields {selected:?} contain duplicates")));
    }
    let adapted = ModelConfig { active, ..config.clone() };
    RecModel::new(adapted, optimizer, rng)
}
