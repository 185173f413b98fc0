//! Exhaustive subset enumeration: retrain on every field subset (or every
//! subset of the requested sizes) and rank a selection within its size stratum.

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::DatasetSplits;
use crate::diff::AdamConfig;
use crate::error::{Error, Result};
use crate::model::ModelSettings;
use crate::retrain::{run_retrain, RetrainSettings};

pub const MAX_ENUMERATED_FIELDS: usize = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleSettings {
    /// Subset sizes to enumerate; empty means every size.
    pub k: Vec<usize>,
    /// Worker threads; 0 uses one per core.
    pub threads: usize,
    pub allow_over_cap: bool,
    /// Per-subset epoch cap, overriding the retrain setting.
    pub max_epochs: Option<usize>,
    /// Per-subset learning rate, overriding the optimizer setting.
    pub learning_rate: Option<f64>,
    /// Per-subset hidden sizes, overriding the model setting.
    pub hidden: Option<Vec<usize>>,
}

impl Default for OracleSettings {
    fn default() -> Self {
        OracleSettings {
            k: Vec::new(),
            threads: 0,
            allow_over_cap: false,
            max_epochs: Some(5),
            learning_rate: None,
            hidden: None,
        }
    }
}

/// Training recipe shared by every subset.
#[derive(Clone, Debug, PartialEq)]
pub struct OracleRecipe {
    pub retrain: RetrainSettings,
    pub model: ModelSettings,
    pub optimizer: AdamConfig,
    pub seed: u64,
}

impl OracleRecipe {
    /// Applies the oracle's budget overrides.
    pub fn reduced(mut self, settings: &OracleSettings) -> Self {
        if let Some(e) = settings.max_epochs {
            self.retrain.max_epochs = e;
        }
        if let Some(lr) = settings.learning_rate {
            self.optimizer.learning_rate = lr;
        }
        if let Some(h) = &settings.hidden {
            self.model.hidden = h.clone();
        }
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubsetRow {
    pub subset_mask: u64,
    pub k: usize,
    pub auc: f64,
    pub logloss: f64,
    pub seed: u64,
    pub epochs: usize,
    pub train_seconds: f64,
    pub infer_ms: f64,
}

impl SubsetRow {
    pub fn fields(&self) -> Vec<usize> {
        mask_fields(self.subset_mask)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StratumSummary {
    pub k: usize,
    pub count: usize,
    pub min: f64,
    pub median: f64,
    pub p90: f64,
    pub max: f64,
    /// Mask of the best subset in the stratum (lowest mask among ties).
    pub best_mask: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubsetReport {
    pub num_fields: usize,
    pub k_filter: Vec<usize>,
    pub seed: u64,
    pub rows: Vec<SubsetRow>,
    pub strata: Vec<StratumSummary>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionRank {
    pub k: usize,
    pub auc: f64,
    /// Fraction of same-size subsets with strictly higher AUC; 0 is best.
    pub percentile: f64,
    pub better: usize,
    pub stratum_size: usize,
}

pub fn fields_mask(fields: &[usize]) -> Result<u64> {
    let mut mask = 0u64;
    for &f in fields {
        if f >= 64 {
            return Err(Error::contract(format!("field {f} does not fit a 64-bit mask")));
        }
        mask |= 1 << f;
    }
    Ok(mask)
}

pub fn mask_fields(mask: u64) -> Vec<usize> {
    (0..64).filter(|f| mask >> f & 1 == 1).collect()
}

/// Every requested subset as a mask, ordered by size then mask.
pub fn subset_masks(num_fields: usize, k_filter: &[usize]) -> Result<Vec<u64>> {
    if num_fields == 0 || num_fields > 63 {
        return Err(Error::config(format!("cannot enumerate subsets of {num_fields} fields")));
    }
    for &k in k_filter {
        if k == 0 {
            return Err(Error::config("the empty subset has no fields to train on"));
        }
        if k > num_fields {
            return Err(Error::config(format!("subset size {k} exceeds {num_fields} fields")));
        }
    }
    let mut masks: Vec<u64> = (1u64..1 << num_fields)
        .filter(|m| k_filter.is_empty() || k_filter.contains(&(m.count_ones() as usize)))
        .collect();
    masks.sort_by_key(|m| (m.count_ones(), *m));
    Ok(masks)
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn summarize(rows: &[SubsetRow]) -> Vec<StratumSummary> {
    let mut ks: Vec<usize> = rows.iter().map(|r| r.k).collect();
    ks.sort_unstable();
    ks.dedup();
    ks.into_iter()
        .map(|k| {
            let stratum: Vec<&SubsetRow> = rows.iter().filter(|r| r.k == k).collect();
            let mut aucs: Vec<f64> = stratum.iter().map(|r| r.auc).collect();
            aucs.sort_by(f64::total_cmp);
            let best = stratum
                .iter()
                .max_by(|a, b| a.auc.total_cmp(&b.auc).then(b.subset_mask.cmp(&a.subset_mask)))
                .expect("non-empty stratum");
            StratumSummary {
                k,
                count: stratum.len(),
                min: aucs[0],
                median: quantile(&aucs, 0.5),
                p90: quantile(&aucs, 0.9),
                max: aucs[aucs.len() - 1],
                best_mask: best.subset_mask,
            }
        })
        .collect()
}

/// Retrains every requested subset. Rows come back in subset order
/// regardless of which worker finished first; `progress` sees each row as
/// it completes.
pub fn enumerate_subsets(
    splits: &DatasetSplits,
    recipe: &OracleRecipe,
    settings: &OracleSettings,
    progress: &(dyn Fn(&SubsetRow, usize, usize) + Sync),
) -> Result<SubsetReport> {
    let n = splits.num_fields();
    if n > MAX_ENUMERATED_FIELDS && !settings.allow_over_cap {
        return Err(Error::config(format!(
            "refusing to enumerate {n} fields (cap {MAX_ENUMERATED_FIELDS}); set oracle.allow_over_cap to proceed"
        )));
    }
    let masks = subset_masks(n, &settings.k)?;
    let recipe = recipe.clone().reduced(settings);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(settings.threads)
        .build()
        .map_err(|e| Error::config(format!("cannot start worker pool: {e}")))?;
    let done = AtomicUsize::new(0);
    let total = masks.len();
    let rows: Result<Vec<SubsetRow>> = pool.install(|| {
        masks
            .par_iter()
            .map(|&mask| {
                let fields = mask_fields(mask);
                let (r, _) =
                    run_retrain(&fields, &recipe.retrain, &recipe.model, &recipe.optimizer, splits, recipe.seed)?;
                let row = SubsetRow {
                    subset_mask: mask,
                    k: fields.len(),
                    auc: r.auc,
                    logloss: r.logloss,
                    seed: recipe.seed,
                    epochs: r.epochs,
                    train_seconds: r.train_seconds,
                    infer_ms: r.infer_ms,
                };
                progress(&row, done.fetch_add(1, Ordering::Relaxed) + 1, total);
                Ok(row)
            })
            .collect()
    });
    let rows = rows?;
    Ok(SubsetReport { num_fields: n, k_filter: settings.k.clone(), seed: recipe.seed, strata: summarize(&rows), rows })
}

/// Where `selected` falls among the same-size subsets of `rows`.
pub fn rank_selection(rows: &[SubsetRow], selected: &[usize]) -> Result<SelectionRank> {
    let mask = fields_mask(selected)?;
    let k = mask.count_ones() as usize;
    let stratum: Vec<&SubsetRow> = rows.iter().filter(|r| r.k == k).collect();
    if stratum.is_empty() {
        return Err(Error::config(format!("no enumerated subsets of size {k}")));
    }
    let own = stratum
        .iter()
        .find(|r| r.subset_mask == mask)
        .ok_or_else(|| Error::config(format!("selection {selected:?} is missing from the enumeration")))?;
    let better = stratum.iter().filter(|r| r.auc > own.auc).count();
    Ok(SelectionRank {
        k,
        auc: own.auc,
        percentile: better as f64 / stratum.len() as f64,
        better,
        stratum_size: stratum.len(),
    })
}

impl SubsetReport {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)
            .map_err(|e| Error::Format { path: path.to_path_buf(), message: e.to_string() })?;
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush().map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        #[derive(Serialize)]
        struct Summary<'a> {
            num_fields: usize,
            k_filter: &'a [usize],
            seed: u64,
            subsets: usize,
            strata: &'a [StratumSummary],
        }
        let text = serde_json::to_string_pretty(&Summary {
            num_fields: self.num_fields,
            k_filter: &self.k_filter,
            seed: self.seed,
            subsets: self.rows.len(),
            strata: &self.strata,
        })?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticSpec};

    fn row(mask: u64, auc: f64) -> SubsetRow {
        SubsetRow {
            subset_mask: mask,
            k: mask.count_ones() as usize,
            auc,
            logloss: 0.5,
            seed: 0,
            epochs: 1,
            train_seconds: 0.0,
            infer_ms: 0.0,
        }
    }

    #[test]
    fn subset_counts() {
        assert_eq!(subset_masks(8, &[]).unwrap().len(), 255);
        assert_eq!(subset_masks(8, &[4]).unwrap().len(), 70);
        assert_eq!(subset_masks(8, &[4, 5, 6, 7]).unwrap().len(), 70 + 56 + 28 + 8);
        assert!(matches!(subset_masks(8, &[0]), Err(Error::Config(_))));
        let m = subset_masks(4, &[]).unwrap();
        assert!(m.windows(2).all(|w| (w[0].count_ones(), w[0]) < (w[1].count_ones(), w[1])));
    }

    #[test]
    fn masks_round_trip() {
        assert_eq!(fields_mask(&[0, 3, 5]).unwrap(), 0b101001);
        assert_eq!(mask_fields(0b101001), vec![0, 3, 5]);
    }

    #[test]
    fn ranking() {
        let rows: Vec<SubsetRow> =
            subset_masks(8, &[4]).unwrap().into_iter().enumerate().map(|(i, m)| row(m, i as f64 / 100.0)).collect();
        let best = rows.last().unwrap().fields();
        let worst = rows[0].fields();
        assert_eq!(rank_selection(&rows, &best).unwrap().percentile, 0.0);
        let r = rank_selection(&rows, &worst).unwrap();
        assert_eq!((r.better, r.stratum_size), (69, 70));
        assert!(matches!(rank_selection(&rows, &[0, 1]), Err(Error::Config(_))));
    }

    #[test]
    fn strata_summary() {
        let rows = vec![row(0b011, 0.6), row(0b101, 0.8), row(0b110, 0.7), row(0b001, 0.55)];
        let s = summarize(&rows);
        assert_eq!(s.len(), 2);
        assert_eq!((s[1].k, s[1].count, s[1].max, s[1].min, s[1].best_mask), (2, 3, 0.8, 0.6, 0b101));
        assert!((s[1].median - 0.7).abs() < 1e-12);
    }

    #[test]
    fn refuses_over_cap() {
        let splits =
            generate_synthetic(&SyntheticSpec { num_fields: 17, rows: 200, ..SyntheticSpec::default() }).unwrap();
        let recipe = OracleRecipe {
            retrain: RetrainSettings::default(),
            model: ModelSettings::default(),
            optimizer: AdamConfig::default(),
            seed: 0,
        };
        let err = enumerate_subsets(&splits, &recipe, &OracleSettings::default(), &|_, _, _| {}).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn small_enumeration_is_ordered_and_reproducible() {
        let splits = generate_synthetic(&SyntheticSpec {
            num_fields: 3,
            informative: vec![0],
            rows: 1500,
            seed: 1,
            ..SyntheticSpec::default()
        })
        .unwrap();
        let recipe = OracleRecipe {
            retrain: RetrainSettings { batch_size: 256, ..RetrainSettings::default() },
            model: ModelSettings::default(),
            optimizer: AdamConfig::default(),
            seed: 3,
        };
        let settings = OracleSettings { max_epochs: Some(1), threads: 2, ..OracleSettings::default() };
        let a = enumerate_subsets(&splits, &recipe, &settings, &|_, _, _| {}).unwrap();
        let b = enumerate_subsets(&splits, &recipe, &settings, &|_, _, _| {}).unwrap();
        assert_eq!(a.rows.len(), 7);
        assert_eq!(a.rows.iter().map(|r| r.subset_mask).collect::<Vec<_>>(), vec![1, 2, 4, 3, 5, 6, 7]);
        let strip = |r: &SubsetReport| r.rows.iter().map(|x| (x.subset_mask, x.auc, x.logloss)).collect::<Vec<_>>();
        assert_eq!(strip(&a), strip(&b));
    }
}
