//! Command-line front end. Every subcommand reads one [`RunConfig`].

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
use crate::config::RunConfig;
use crate::controller::{GateMode, SelectionRule};
use crate::data::{generate_synthetic_dataset, DatasetSplits};
use crate::error::{Error, Result};
use crate::ledger::{self, LedgerRow, RowKind};
use crate::oracle::{enumerate_subsets, fields_mask, SubsetRow};
use crate::retrain::{evaluate, run_retrain, Evaluation, RetrainReport};
use crate::search::{run_search, JsonlSink, SearchOutcome};

pub const TRACE_FILE: &str = "trace.jsonl";
pub const SELECTION_FILE: &str = "selection.json";
pub const RETRAIN_FILE: &str = "retrain.json";
pub const EVAL_FILE: &str = "eval.json";
pub const CHECKPOINT_FILE: &str = "model.afck";
pub const LEDGER_FILE: &str = "report.csv";
pub const RESOLVED_CONFIG_FILE: &str = "config.toml";

#[derive(Debug, Parser)]
#[command(name = "autofield", version, about = "Per-field feature selection for CTR models")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (overrides `out_dir`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// `dotted.key=value`, repeatable.
    #[arg(long = "override", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Encode a raw log into a dataset file.
    Prepare,
    /// Write the configured synthetic dataset to a dataset file.
    Synth,
    /// Run the field search and write the selection.
    Search,
    /// Retrain on the selection (or `--fields`) and evaluate on test.
    Retrain {
        #[arg(long, value_delimiter = ',')]
        fields: Option<Vec<usize>>,
    },
    /// Evaluate a checkpoint on the test split.
    Evaluate {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Retrain every field subset of the configured sizes.
    Enumerate,
    /// Search, retrain and evaluate.
    Pipeline,
    /// Merge ledgers into one CSV plus scatter data.
    Report { ledgers: Vec<PathBuf> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionFile {
    pub config_hash: String,
    pub seed: u64,
    pub gate_mode: GateMode,
    pub selection_rule: SelectionRule,
    pub k: Option<usize>,
    pub selected: Vec<usize>,
    pub selected_names: Vec<String>,
    pub alpha: Vec<f64>,
    pub warning: Option<String>,
    pub weight_steps: u64,
    pub controller_steps: u64,
    pub epochs: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RetrainFile {
    pub config_hash: String,
    pub seed: u64,
    #[serde(flatten)]
    pub report: RetrainReport,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalFile {
    pub config_hash: String,
    pub seed: u64,
    pub checkpoint: PathBuf,
    #[serde(flatten)]
    pub eval: Evaluation,
}

pub fn resolve_config(common: &CommonArgs) -> Result<RunConfig> {
    let mut config = RunConfig::load(common.config.as_deref(), &common.overrides)?;
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Some(out) = &common.out {
        config.out_dir = out.clone();
    }
    Ok(config)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format { path: path.to_path_buf(), message: e.to_string() })
}

struct Run {
    config: RunConfig,
    hash: String,
}

impl Run {
    fn new(config: RunConfig) -> Result<Self> {
        ensure_dir(&config.out_dir)?;
        let hash = config.config_hash();
        std::fs::write(config.out_dir.join(RESOLVED_CONFIG_FILE), config.to_toml()?)
            .map_err(|e| Error::io("writing resolved config", e))?;
        Ok(Run { config, hash })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.config.out_dir.join(name)
    }

    fn search(&self, splits: &DatasetSplits) -> Result<SearchOutcome> {
        let trace_path = self.path(TRACE_FILE);
        let file = File::create(&trace_path).map_err(|e| Error::io(format!("creating {}", trace_path.display()), e))?;
        let mut sink = JsonlSink::new(BufWriter::new(file));
        let outcome = run_search(&self.config.search_config(), splits, &mut sink)?;
        if let Some(w) = &outcome.warning {
            log::warn!("{w}");
        }
        let selection = SelectionFile {
            config_hash: self.hash.clone(),
            seed: self.config.seed,
            gate_mode: self.config.controller.gate_mode,
            selection_rule: self.config.search.selection,
            k: (self.config.search.selection == SelectionRule::TopK)
                .then(|| self.config.search.resolved_k(splits.num_fields())),
            selected: outcome.selected.clone(),
            selected_names: outcome.selected.iter().map(|&f| splits.field_names[f].clone()).collect(),
            alpha: outcome.alpha1.clone(),
            warning: outcome.warning.clone(),
            weight_steps: outcome.weight_steps,
            controller_steps: outcome.controller_steps,
            epochs: outcome.epochs.len(),
        };
        write_json(&self.path(SELECTION_FILE), &selection)?;
        log::info!("selected fields {:?}", selection.selected_names);
        Ok(outcome)
    }

    fn retrain(&self, splits: &DatasetSplits, fields: &[usize]) -> Result<RetrainReport> {
        let c = &self.config;
        let (report, model) = run_retrain(fields, &c.retrain, &c.model, &c.optimizer, splits, c.seed)?;
        let meta =
            CheckpointMeta { config_hash: self.hash.clone(), seed: c.seed, field_names: splits.field_names.clone() };
        save_checkpoint(&self.path(CHECKPOINT_FILE), &model, &meta)?;
        write_json(
            &self.path(RETRAIN_FILE),
            &RetrainFile { config_hash: self.hash.clone(), seed: c.seed, report: report.clone() },
        )?;
        let row = SubsetRow {
            subset_mask: fields_mask(&report.selected)?,
            k: report.selected.len(),
            auc: report.auc,
            logloss: report.logloss,
            seed: c.seed,
            epochs: report.epochs,
            train_seconds: report.train_seconds,
            infer_ms: report.infer_ms,
        };
        ledger::append_rows(&self.path(LEDGER_FILE), &[LedgerRow::from_subset(&self.hash, RowKind::Selection, &row)])?;
        println!("test auc {:.6} logloss {:.6} ({} epochs)", report.auc, report.logloss, report.epochs);
        Ok(report)
    }

    fn evaluate(&self, splits: &DatasetSplits, checkpoint: &Path) -> Result<Evaluation> {
        let (model, meta) = load_checkpoint(checkpoint)?;
        if meta.field_names != splits.field_names {
            return Err(Error::config(format!(
                "checkpoint fields {:?} do not match data fields {:?}",
                meta.field_names, splits.field_names
            )));
        }
        let eval = evaluate(&model, &splits.test, &splits.cardinalities, self.config.retrain.eval_batch_size)?;
        write_json(
            &self.path(EVAL_FILE),
            &EvalFile {
                config_hash: self.hash.clone(),
                seed: self.config.seed,
                checkpoint: checkpoint.to_path_buf(),
                eval,
            },
        )?;
        println!("test auc {:.6} logloss {:.6}", eval.auc, eval.logloss);
        Ok(eval)
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let config = resolve_config(&cli.common)?;
    match cli.command {
        Command::Prepare => {
            let out = config.prepare.output.clone().unwrap_or_else(|| config.out_dir.join("dataset.afds"));
            if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
                ensure_dir(parent)?;
            }
            let ds = config.prepare_dataset()?;
            ds.write(&out)?;
            println!("wrote {} rows x {} fields to {}", ds.num_rows(), ds.num_fields(), out.display());
        }
        Command::Synth => {
            ensure_dir(&config.out_dir)?;
            let out = config.out_dir.join("synthetic.afds");
            let ds = generate_synthetic_dataset(&config.data.synthetic)?;
            ds.write(&out)?;
            println!("wrote {} rows x {} fields to {}", ds.num_rows(), ds.num_fields(), out.display());
        }
        Command::Search => {
            let run = Run::new(config)?;
            let splits = run.config.load_splits()?;
            let outcome = run.search(&splits)?;
            println!("selected {:?}", outcome.selected);
        }
        Command::Retrain { fields } => {
            let run = Run::new(config)?;
            let splits = run.config.load_splits()?;
            let fields = match fields {
                Some(f) => f,
                None => {
                    let sel: SelectionFile = read_json(&run.path(SELECTION_FILE))?;
                    if sel.config_hash != run.hash {
                        log::warn!(
                            "selection was produced by config {}, retraining under {}",
                            sel.config_hash,
                            run.hash
                        );
                    }
                    sel.selected
                }
            };
            if let Some(f) = fields.iter().find(|&&f| f >= splits.num_fields()) {
                return Err(Error::config(format!(
                    "--fields: field {f} out of range for {} fields",
                    splits.num_fields()
                )));
            }
            run.retrain(&splits, &fields)?;
        }
        Command::Evaluate { checkpoint } => {
            let run = Run::new(config)?;
            let splits = run.config.load_splits()?;
            let path = checkpoint.unwrap_or_else(|| run.path(CHECKPOINT_FILE));
            run.evaluate(&splits, &path)?;
        }
        Command::Enumerate => {
            let run = Run::new(config)?;
            let splits = run.config.load_splits()?;
            let report =
                enumerate_subsets(&splits, &run.config.oracle_recipe(), &run.config.oracle, &|row, done, total| {
                    log::info!("[{done}/{total}] subset {:#x} auc {:.5}", row.subset_mask, row.auc);
                })?;
            report.write_csv(&run.path("enumeration.csv"))?;
            report.write_json(&run.path("enumeration.json"))?;
            let rows: Vec<LedgerRow> =
                report.rows.iter().map(|r| LedgerRow::from_subset(&run.hash, RowKind::Enumeration, r)).collect();
            ledger::append_rows(&run.path(LEDGER_FILE), &rows)?;
            for s in &report.strata {
                println!(
                    "k={} subsets={} auc min {:.5} median {:.5} p90 {:.5} max {:.5}",
                    s.k, s.count, s.min, s.median, s.p90, s.max
                );
            }
        }
        Command::Pipeline => {
            let run = Run::new(config)?;
            let splits = run.config.load_splits()?;
            let outcome = run.search(&splits)?;
            if outcome.selected.is_empty() {
                println!("selection is empty; nothing to retrain");
                return Ok(());
            }
            run.retrain(&splits, &outcome.selected)?;
            run.evaluate(&splits, &run.path(CHECKPOINT_FILE))?;
        }
        Command::Report { ledgers } => {
            ensure_dir(&config.out_dir)?;
            let merged = ledger::merge_ledgers(&ledgers)?;
            ledger::write_ledger(&config.out_dir.join("merged.csv"), &merged.rows)?;
            ledger::write_scatter(&config.out_dir.join("scatter.csv"), &ledger::scatter(&merged.rows))?;
            println!("merged {} rows", merged.rows.len());
            for p in ledger::place_selections(&merged.rows) {
                match p.rank {
                    Some(r) => println!(
                        "selection {:#x} (config {}, seed {}): k={} auc {:.5}, {} of {} subsets better, percentile {:.3}",
                        p.subset_mask, p.config_hash, p.seed, r.k, r.auc, r.better, r.stratum_size, r.percentile
                    ),
                    None => println!(
                        "selection {:#x} (config {}, seed {}): no enumeration to compare against",
                        p.subset_mask, p.config_hash, p.seed
                    ),
                }
            }
        }
    }
    Ok(())
}

/// Parses and runs `args`; argument errors come back as `Error::Config`.
pub fn run_args<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| Error::config(e.to_string()))?;
    run(cli)
}

/// Parses `args`, runs, and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
