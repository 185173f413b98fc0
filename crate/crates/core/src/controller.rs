//! Per-field selection controller.
//!
//! Field `n` carries a logit pair `(ℓ¹_n, ℓ⁰_n)`; `(α¹_n, α⁰_n)` is their
//! softmax, so the pair always sums to one. During search each field's
//! embedding is scaled by a gate: the Gumbel-softmax relaxation
//! `p¹_n = softmax_j((log α^j_n + g_j) / τ)` in the default mode, or `α¹_n`
//! itself in the plain-softmax mode.

use serde::{Deserialize, Serialize};

use crate::diff::ops::sigmoid;
use crate::diff::{Adam, AdamConfig, Matrix, ParamId, ParameterStore, Rng};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateMode {
    #[default]
    Gumbel,
    /// Gates are the expected selection `α¹_n`, no noise or temperature.
    Softmax,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseGranularity {
    #[default]
    PerBatch,
    PerExample,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionRule {
    #[default]
    TopK,
    /// Every field with `α¹_n > 0.5`.
    Threshold,
}

/// Which counter drives the temperature schedule.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemperatureClock {
    #[default]
    ControllerSteps,
    WeightSteps,
}

/// `τ(t) = max(floor, 1 − slope·t)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TemperatureSchedule {
    pub floor: f64,
    pub slope: f64,
}

impl Default for TemperatureSchedule {
    fn default() -> Self {
        TemperatureSchedule { floor: 0.01, slope: 0.00005 }
    }
}

impl TemperatureSchedule {
    pub fn at(&self, step: u64) -> f64 {
        (1.0 - self.slope * step as f64).max(self.floor)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerSettings {
    pub gate_mode: GateMode,
    pub noise: NoiseGranularity,
    pub temperature: TemperatureSchedule,
    pub clock: TemperatureClock,
}

/// Standard Gumbel draws `−log(−log u)`, `u` kept strictly inside (0, 1).
pub fn sample_gumbel(rng: &mut Rng, count: usize) -> Vec<f64> {
    (0..count).map(|_| gumbel_from_uniform(rng.open_uniform())).collect()
}

#[inline]
pub fn gumbel_from_uniform(u: f64) -> f64 {
    -(-u.ln()).ln()
}

/// `(log α¹, log α⁰)` of one logit pair.
#[inline]
pub fn log_alpha(select: f64, drop: f64) -> (f64, f64) {
    let m = select.max(drop);
    let lse = m + ((select - m).exp() + (drop - m).exp()).ln();
    (select - lse, drop - lse)
}

/// Gumbel noise and the relaxed gate probabilities derived from it.
/// All vectors are `rows × N`, row-major; `rows` is 1 for per-batch noise.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GateSample {
    pub rows: usize,
    pub tau: f64,
    pub g1: Vec<f64>,
    pub g0: Vec<f64>,
    pub p1: Vec<f64>,
    pub p0: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Gates {
    Relaxed(GateSample),
    /// Plain-softmax gates `α¹_n`, one row.
    Expected(Vec<f64>),
}

impl Gates {
    pub fn rows(&self) -> usize {
        match self {
            Gates::Relaxed(s) => s.rows,
            Gates::Expected(_) => 1,
        }
    }

    pub fn values(&self) -> &[f64] {
        match self {
            Gates::Relaxed(s) => &s.p1,
            Gates::Expected(a) => a,
        }
    }

    pub fn tau(&self) -> Option<f64> {
        match self {
            Gates::Relaxed(s) => Some(s.tau),
            Gates::Expected(_) => None,
        }
    }

    /// Mean gate per field across rows.
    pub fn mean_values(&self, num_fields: usize) -> Vec<f64> {
        let v = self.values();
        let rows = self.rows();
        (0..num_fields).map(|n| (0..rows).map(|r| v[r * num_fields + n]).sum::<f64>() / rows as f64).collect()
    }

    /// As plain values, for gating with externally chosen numbers.
    pub fn fixed(values: Vec<f64>) -> Self {
        Gates::Expected(values)
    }
}

#[derive(Clone, Debug)]
pub struct Controller {
    pub settings: ControllerSettings,
    pub params: ParameterStore,
    pub optimizer: Adam,
    logits: ParamId,
    num_fields: usize,
    updates: u64,
}

impl Controller {
    /// Equal logit pairs, hence `α¹_n = α⁰_n = 0.5` for every field.
    pub fn new(num_fields: usize, settings: ControllerSettings, optimizer: AdamConfig) -> Result<Self> {
        if num_fields == 0 {
            return Err(Error::config("controller needs at least one field"));
        }
        let mut params = ParameterStore::new();
        let logits = params.add("controller.logits", num_fields, 2, vec![0.0; 2 * num_fields])?;
        let optimizer = Adam::new(optimizer, &params);
        Ok(Controller { settings, params, optimizer, logits, num_fields, updates: 0 })
    }

    pub fn num_fields(&self) -> usize {
        self.num_fields
    }

    /// Number of optimizer updates applied so far.
    pub fn updates(&self) -> u64 {
        self.updates
    }

    /// Logit pairs as `[ℓ¹_0, ℓ⁰_0, ℓ¹_1, ℓ⁰_1, ...]`.
    pub fn logits(&self) -> &[f64] {
        &self.params.get(self.logits).value
    }

    pub fn logits_mut(&mut self) -> &mut [f64] {
        &mut self.params.get_mut(self.logits).value
    }

    pub fn logit_grads(&self) -> &[f64] {
        &self.params.get(self.logits).grad
    }

    pub fn alpha(&self) -> Vec<(f64, f64)> {
        self.logits().chunks_exact(2).map(|l| (sigmoid(l[0] - l[1]), sigmoid(l[1] - l[0]))).collect()
    }

    pub fn alpha1(&self) -> Vec<f64> {
        self.alpha().into_iter().map(|(a1, _)| a1).collect()
    }

    /// Plain-softmax gates: the selection expectation `α¹_n`.
    pub fn soft_gate_expectation(&self) -> Vec<f64> {
        self.alpha1()
    }

    /// Relaxed gates for given noise. `g1`, `g0` hold `rows × N` values.
    pub fn gate_probabilities(&self, g1: &[f64], g0: &[f64], tau: f64) -> Result<GateSample> {
        if !(tau > 0.0) {
            return Err(Error::contract(format!("temperature {tau} must be positive")));
        }
        let n = self.num_fields;
        if g1.len() != g0.len() || g1.is_empty() || !g1.len().is_multiple_of(n) {
            return Err(Error::contract("noise must hold rows × N values for each choice"));
        }
        let log_alphas: Vec<(f64, f64)> = self.logits().chunks_exact(2).map(|l| log_alpha(l[0], l[1])).collect();
        let mut p1 = Vec::with_capacity(g1.len());
        let mut p0 = Vec::with_capacity(g1.len());
        for (i, (&a, &b)) in g1.iter().zip(g0).enumerate() {
            let (la1, la0) = log_alphas[i % n];
            // Two-way softmax of the perturbed logits, written as a sigmoid of their gap.
            let s = ((la1 + a) - (la0 + b)) / tau;
            p1.push(sigmoid(s));
            p0.push(sigmoid(-s));
        }
        Ok(GateSample { rows: g1.len() / n, tau, g1: g1.to_vec(), g0: g0.to_vec(), p1, p0 })
    }

    /// Draws gates for a batch of `batch_rows` examples at temperature `tau`.
    pub fn sample_gates(&self, batch_rows: usize, tau: f64, rng: &mut Rng) -> Result<Gates> {
        match self.settings.gate_mode {
            GateMode::Softmax => Ok(Gates::Expected(self.soft_gate_expectation())),
            GateMode::Gumbel => {
                let rows = match self.settings.noise {
                    NoiseGranularity::PerBatch => 1,
                    NoiseGranularity::PerExample => batch_rows.max(1),
                };
                let count = rows * self.num_fields;
                let mut g1 = Vec::with_capacity(count);
                let mut g0 = Vec::with_capacity(count);
                for _ in 0..count {
                    g1.push(gumbel_from_uniform(rng.open_uniform()));
                    g0.push(gumbel_from_uniform(rng.open_uniform()));
                }
                Ok(Gates::Relaxed(self.gate_probabilities(&g1, &g0, tau)?))
            }
        }
    }

    /// One hard Gumbel-Max draw per field: `argmax_j(log α^j_n + g_j) == 1`.
    pub fn sample_hard_gates(&self, rng: &mut Rng) -> Vec<bool> {
        self.logits()
            .chunks_exact(2)
            .map(|l| {
                let (la1, la0) = log_alpha(l[0], l[1]);
                let g1 = gumbel_from_uniform(rng.open_uniform());
                let g0 = gumbel_from_uniform(rng.open_uniform());
                la1 + g1 > la0 + g0
            })
            .collect()
    }

    /// Adds `∂loss/∂ℓ` given `∂loss/∂gate` (same layout as the gate values).
    pub fn backward(&mut self, gates: &Gates, grad_gates: &[f64]) -> Result<()> {
        let n = self.num_fields;
        if grad_gates.len() != gates.values().len() {
            return Err(Error::contract("gate gradient length mismatch"));
        }
        let local: Vec<f64> = match gates {
            // ∂p¹/∂ℓ¹ = p¹p⁰/τ and ∂p¹/∂ℓ⁰ = −p¹p⁰/τ.
            Gates::Relaxed(s) => s.p1.iter().zip(&s.p0).map(|(a, b)| a * b / s.tau).collect(),
            Gates::Expected(_) => self.alpha().into_iter().map(|(a1, a0)| a1 * a0).collect(),
        };
        let grad = &mut self.params.get_mut(self.logits).grad;
        for (i, (&g, &l)) in grad_gates.iter().zip(&local).enumerate() {
            let c = g * l;
            let f = i % n;
            grad[2 * f] += c;
            grad[2 * f + 1] -= c;
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.params.zero_grad();
    }

    pub fn step(&mut self) -> Result<()> {
        self.optimizer.update(&mut self.params)?;
        self.params.zero_grad();
        self.updates += 1;
        Ok(())
    }
}

fn check_gate_shape(e: &Matrix, gates: &Gates, d: usize) -> Result<usize> {
    let rows = gates.rows();
    if d == 0 || !e.cols().is_multiple_of(d) {
        return Err(Error::contract("embedding width is not a multiple of d"));
    }
    let fields = e.cols() / d;
    if gates.values().len() != rows * fields || (rows != 1 && rows != e.rows()) {
        return Err(Error::contract(format!(
            "{} gate values for {} rows of {fields} fields",
            gates.values().len(),
            e.rows()
        )));
    }
    Ok(fields)
}

/// `e′_n = gate_n · e_n` for every field block; single-row gates broadcast.
pub fn apply_gates(e: &Matrix, gates: &Gates, d: usize) -> Result<Matrix> {
    let fields = check_gate_shape(e, gates, d)?;
    let v = gates.values();
    let per_row = gates.rows() != 1;
    let mut out = e.clone();
    for b in 0..e.rows() {
        let g = if per_row { &v[b * fields..(b + 1) * fields] } else { v };
        for (block, &gn) in out.row_mut(b).chunks_exact_mut(d).zip(g) {
            block.iter_mut().for_each(|x| *x *= gn);
        }
    }
    Ok(out)
}

/// Splits `∂loss/∂E′` into `∂loss/∂E` and `∂loss/∂gate`.
pub fn apply_gates_backward(e: &Matrix, gates: &Gates, grad_gated: &Matrix, d: usize) -> Result<(Matrix, Vec<f64>)> {
    let fields = check_gate_shape(e, gates, d)?;
    if grad_gated.rows() != e.rows() || grad_gated.cols() != e.cols() {
        return Err(Error::contract("gated gradient shape mismatch"));
    }
    let v = gates.values();
    let per_row = gates.rows() != 1;
    let mut de = grad_gated.clone();
    let mut dgate = vec![0.0; v.len()];
    for b in 0..e.rows() {
        let offset = if per_row { b * fields } else { 0 };
        let er = e.row(b);
        let gr = grad_gated.row(b);
        let dr = de.row_mut(b);
        for n in 0..fields {
            let span = n * d..(n + 1) * d;
            dgate[offset + n] += er[span.clone()].iter().zip(&gr[span.clone()]).map(|(x, g)| x * g).sum::<f64>();
            dr[span].iter_mut().for_each(|x| *x *= v[offset + n]);
        }
    }
    Ok((de, dgate))
}

/// The `k` fields with the largest `α¹`, ties to the lower index, ascending.
pub fn select_top_k(alpha1: &[f64], k: usize) -> Result<Vec<usize>> {
    if k < 1 || k > alpha1.len() {
        return Err(Error::config(format!("K = {k} must lie in [1, {}]", alpha1.len())));
    }
    let mut order: Vec<usize> = (0..alpha1.len()).collect();
    order.sort_by(|&a, &b| alpha1[b].total_cmp(&alpha1[a]).then(a.cmp(&b)));
    let mut chosen = order[..k].to_vec();
    chosen.sort_unstable();
    Ok(chosen)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ThresholdSelection {
    pub fields: Vec<usize>,
    pub warning: Option<String>,
}

/// Every field with `α¹ > 0.5`; an empty result carries a warning.
pub fn select_by_threshold(alpha1: &[f64]) -> ThresholdSelection {
    let fields: Vec<usize> = (0..alpha1.len()).filter(|&n| alpha1[n] > 0.5).collect();
    let warning = fields.is_empty().then(|| "threshold selection kept no fields: every α¹ ≤ 0.5".to_string());
    ThresholdSelection { fields, warning }
}
