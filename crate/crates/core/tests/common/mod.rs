#![allow(dead_code)]

use autofield::controller::{apply_gates, apply_gates_backward, Controller, ControllerSettings, GateMode, Gates};
use autofield::data::{generate_synthetic, Batch, SyntheticSpec};
use autofield::diff::ops::{bce_loss, bce_value};
use autofield::diff::{finite_diff_check, AdamConfig, GradCheckReport, ParamId, Rng};
use autofield::model::{Mode, ModelConfig, ModelSettings, RecModel};

pub const GRAD_TOLERANCE: f64 = 1e-4;
const STEP: f64 = 1e-5;

/// A frozen forward pass: fixed batch, Gumbel draws, temperature and dropout stream.
pub struct GradScenario {
    pub model: RecModel,
    pub controller: Controller,
    pub batch: Batch,
    pub g1: Vec<f64>,
    pub g0: Vec<f64>,
    pub tau: f64,
    pub dropout: Rng,
}

impl GradScenario {
    pub fn new(num_fields: usize, gate_mode: GateMode, seed: u64) -> Self {
        let splits = generate_synthetic(&SyntheticSpec {
            num_fields,
            informative: vec![0, 1, 2],
            cardinality: 3,
            rows: 400,
            seed,
            ..SyntheticSpec::default()
        })
        .unwrap();
        let config = ModelConfig::all_fields(splits.cardinalities.clone(), &ModelSettings::default());
        let mut rng = Rng::stream(seed, "gradcheck-init");
        let mut model = RecModel::new(config, AdamConfig::default(), &mut rng).unwrap();
        // Larger embeddings than the training init so every path carries signal.
        for p in model.params.iter_mut().filter(|p| p.name.starts_with("embedding.")) {
            p.value.iter_mut().for_each(|v| *v = rng.normal(0.0, 0.5));
        }
        let settings = ControllerSettings { gate_mode, ..ControllerSettings::default() };
        let mut controller = Controller::new(num_fields, settings, AdamConfig::default()).unwrap();
        controller.logits_mut().iter_mut().for_each(|l| *l = rng.normal(0.0, 1.0));
        let mut full = splits.train.as_batch();
        let rows = 24;
        full.indices.truncate(rows * num_fields);
        full.labels.truncate(rows);
        let mut noise = Rng::stream(seed, "gradcheck-gumbel");
        let g1 = autofield::controller::sample_gumbel(&mut noise, num_fields);
        let g0 = autofield::controller::sample_gumbel(&mut noise, num_fields);
        GradScenario {
            model,
            controller,
            batch: full,
            g1,
            g0,
            tau: 0.7,
            dropout: Rng::stream(seed, "gradcheck-dropout"),
        }
    }

    fn gates(&self, controller: &Controller) -> Gates {
        match controller.settings.gate_mode {
            GateMode::Gumbel => Gates::Relaxed(controller.gate_probabilities(&self.g1, &self.g0, self.tau).unwrap()),
            GateMode::Softmax => Gates::Expected(controller.soft_gate_expectation()),
        }
    }

    pub fn loss_with(&self, model: &RecModel, controller: &Controller, gates: Option<&Gates>) -> f64 {
        let e = model.embed_batch(&self.batch).unwrap();
        let own;
        let gates = match gates {
            Some(g) => g,
            None => {
                own = self.gates(controller);
                &own
            }
        };
        let gated = apply_gates(&e, gates, model.config.embedding_dim).unwrap();
        let (pred, _) = model.forward(&gated, Mode::Train(&mut self.dropout.clone())).unwrap();
        bce_value(&pred, &self.batch.labels).unwrap()
    }

    /// Analytic gradients: the model's store, the controller's store and `∂loss/∂gate`.
    pub fn analytic(&self) -> (RecModel, Controller, Vec<f64>) {
        let mut model = self.model.clone();
        let mut controller = self.controller.clone();
        model.zero_grad();
        controller.zero_grad();
        let gates = self.gates(&controller);
        let e = model.embed_batch(&self.batch).unwrap();
        let gated = apply_gates(&e, &gates, model.config.embedding_dim).unwrap();
        let (pred, record) = model.forward(&gated, Mode::Train(&mut self.dropout.clone())).unwrap();
        let (_, grad) = bce_loss(&pred, &self.batch.labels).unwrap();
        let dgated = model.backward(&record, &grad, true).unwrap();
        let (de, dgate) = apply_gates_backward(&e, &gates, &dgated, model.config.embedding_dim).unwrap();
        model.accumulate_embedding_grad(&self.batch, &de).unwrap();
        controller.backward(&gates, &dgate).unwrap();
        (model, controller, dgate)
    }
}

#[derive(Debug, Clone)]
pub struct GroupResult {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst: String,
}

fn merge(name: &str, parts: Vec<(String, GradCheckReport)>) -> GroupResult {
    let mut out = GroupResult { name: name.to_string(), checked: 0, max_rel_error: 0.0, worst: String::new() };
    for (label, r) in parts {
        out.checked += r.checked;
        if r.max_rel_error >= out.max_rel_error {
            out.max_rel_error = r.max_rel_error;
            out.worst = format!(
                "{label}[{}]: analytic {:.3e} numeric {:.3e}",
                r.worst_coordinate.unwrap_or(0),
                r.analytic_at_worst,
                r.numeric_at_worst
            );
        }
    }
    out
}

fn check_model_params(
    s: &GradScenario,
    analytic: &RecModel,
    picks: &[(ParamId, Vec<usize>)],
) -> Vec<(String, GradCheckReport)> {
    picks
        .iter()
        .filter(|(_, c)| !c.is_empty())
        .map(|(id, coords)| {
            let p = s.model.params.get(*id);
            let report = finite_diff_check(
                |theta| {
                    let mut m = s.model.clone();
                    m.params.get_mut(*id).value.copy_from_slice(theta);
                    s.loss_with(&m, &s.controller, None)
                },
                &p.value,
                &analytic.params.get(*id).grad,
                coords,
                STEP,
            );
            (p.name.clone(), report)
        })
        .collect()
}

/// Spreads `count` random coordinates over `ids` proportionally to size, all of
/// them when the group is smaller than `count`.
fn pick(
    s: &GradScenario,
    ids: &[ParamId],
    count: usize,
    rng: &mut Rng,
    touched_only: bool,
) -> Vec<(ParamId, Vec<usize>)> {
    let mut pool = Vec::new();
    for &id in ids {
        let p = s.model.params.get(id);
        let field: Option<usize> = p.name.strip_prefix("embedding.").map(|f| f.parse().unwrap());
        for i in 0..p.value.len() {
            let keep = match (touched_only, field) {
                (true, Some(f)) => {
                    let row = (i / p.cols) as u32;
                    (0..s.batch.rows()).any(|b| s.batch.row(b)[f] == row)
                }
                _ => true,
            };
            if keep {
                pool.push((id, i));
            }
        }
    }
    rng.shuffle(&mut pool);
    pool.truncate(count);
    ids.iter().map(|&id| (id, pool.iter().filter(|(j, _)| *j == id).map(|&(_, i)| i).collect())).collect()
}

/// Finite-difference checks of every parameter group of the gated model.
pub fn gradient_fidelity(seed: u64, per_group: usize) -> Vec<GroupResult> {
    let mut results = Vec::new();
    for mode in [GateMode::Gumbel, GateMode::Softmax] {
        let s = GradScenario::new(52, mode, seed);
        let (am, ac, dgate) = s.analytic();
        let tag = match mode {
            GateMode::Gumbel => "gumbel",
            GateMode::Softmax => "softmax",
        };
        let mut rng = Rng::stream(seed, "gradcheck-coords");
        if mode == GateMode::Gumbel {
            let store = &s.model.params;
            let find = |n: &str| store.find(n).unwrap();
            let embeddings: Vec<ParamId> = (0..52).map(|f| find(&format!("embedding.{f}"))).collect();
            let first = vec![find("dense.0.weight")];
            let rest = vec![
                find("dense.0.bias"),
                find("dense.1.weight"),
                find("dense.1.bias"),
                find("output.weight"),
                find("output.bias"),
            ];
            let groups = [
                ("embedding tables", embeddings, true),
                ("first dense layer weights", first, false),
                ("remaining dense weights and biases", rest, false),
            ];
            for (name, ids, touched) in groups {
                let picks = pick(&s, &ids, per_group, &mut rng, touched);
                results.push(merge(name, check_model_params(&s, &am, &picks)));
            }
            // Gate values themselves, with the embeddings and weights fixed.
            let gates = s.gates(&s.controller);
            let values = gates.values().to_vec();
            let coords: Vec<usize> = (0..values.len()).collect();
            let r = finite_diff_check(
                |v| s.loss_with(&s.model, &s.controller, Some(&Gates::fixed(v.to_vec()))),
                &values,
                &dgate,
                &coords,
                STEP,
            );
            results.push(merge("gate values", vec![("gates".into(), r)]));
        }
        let logits = s.controller.logits().to_vec();
        let coords: Vec<usize> = (0..logits.len()).collect();
        let r = finite_diff_check(
            |l| {
                let mut c = s.controller.clone();
                c.logits_mut().copy_from_slice(l);
                s.loss_with(&s.model, &c, None)
            },
            &logits,
            ac.logit_grads(),
            &coords,
            STEP,
        );
        results.push(merge(&format!("controller logits ({tag}, frozen noise)"), vec![("logits".into(), r)]));
    }
    results
}
