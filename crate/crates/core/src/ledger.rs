//! CSV results ledger shared by selection and enumeration runs, and the
//! merge used by `report`.

use std::collections::HashSet;
use std::fs::OpenOptions;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracle::{rank_selection, SelectionRank, SubsetRow};

pub const LEDGER_COLUMNS: [&str; 10] =
    ["config_hash", "kind", "subset_mask", "k", "auc", "logloss", "seed", "epochs", "train_seconds", "infer_ms"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowKind {
    /// A retrain of the fields chosen by search.
    Selection,
    /// One subset of an exhaustive enumeration.
    Enumeration,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LedgerRow {
    pub config_hash: String,
    pub kind: RowKind,
    pub subset_mask: u64,
    pub k: usize,
    pub auc: f64,
    pub logloss: f64,
    pub seed: u64,
    pub epochs: usize,
    pub train_seconds: f64,
    pub infer_ms: f64,
}

impl LedgerRow {
    pub fn from_subset(config_hash: &str, kind: RowKind, row: &SubsetRow) -> Self {
        LedgerRow {
            config_hash: config_hash.to_string(),
            kind,
            subset_mask: row.subset_mask,
            k: row.k,
            auc: row.auc,
            logloss: row.logloss,
            seed: row.seed,
            epochs: row.epochs,
            train_seconds: row.train_seconds,
            infer_ms: row.infer_ms,
        }
    }

    fn key(&self) -> (String, RowKind, u64, u64) {
        (self.config_hash.clone(), self.kind, self.subset_mask, self.seed)
    }
}

fn format_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Format { path: path.to_path_buf(), message: message.into() }
}

/// Appends rows, writing the header first when the file is new or empty.
pub fn append_rows(path: &Path, rows: &[LedgerRow]) -> Result<()> {
    let fresh = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    if !fresh {
        check_header(path)?;
    }
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    let mut w = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
    for row in rows {
        w.serialize(row)?;
    }
    if fresh && rows.is_empty() {
        w.write_record(LEDGER_COLUMNS)?;
    }
    w.flush().map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn check_header(path: &Path) -> Result<()> {
    let mut r = csv::Reader::from_path(path).map_err(|e| format_err(path, e.to_string()))?;
    let header = r.headers().map_err(|e| format_err(path, e.to_string()))?;
    if header.iter().ne(LEDGER_COLUMNS) {
        return Err(format_err(
            path,
            format!("ledger columns {:?} differ from {:?}", header.iter().collect::<Vec<_>>(), LEDGER_COLUMNS),
        ));
    }
    Ok(())
}

pub fn read_ledger(path: &Path) -> Result<Vec<LedgerRow>> {
    check_header(path)?;
    let mut r = csv::Reader::from_path(path).map_err(|e| format_err(path, e.to_string()))?;
    r.deserialize()
        .enumerate()
        .map(|(i, row)| row.map_err(|e| Error::Parse { line: i + 2, message: format!("{}: {e}", path.display()) }))
        .collect()
}

pub fn write_ledger(path: &Path, rows: &[LedgerRow]) -> Result<()> {
    if path.exists() {
        std::fs::remove_file(path).map_err(|e| Error::io(format!("replacing {}", path.display()), e))?;
    }
    append_rows(path, rows)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Merged {
    pub rows: Vec<LedgerRow>,
    pub duplicates: usize,
}

/// Concatenates ledgers in order, keeping the first of each
/// `(config_hash, kind, subset_mask, seed)`.
pub fn merge_ledgers(paths: &[PathBuf]) -> Result<Merged> {
    let mut seen = HashSet::new();
    let mut rows = Vec::new();
    let mut duplicates = 0;
    for p in paths {
        for row in read_ledger(p)? {
            if seen.insert(row.key()) {
                rows.push(row);
            } else {
                duplicates += 1;
            }
        }
    }
    if duplicates > 0 {
        log::warn!("dropped {duplicates} duplicate ledger rows");
    }
    Ok(Merged { rows, duplicates })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScatterPoint {
    pub k: usize,
    pub auc: f64,
    pub subset_mask: u64,
    pub is_selection: bool,
}

pub fn scatter(rows: &[LedgerRow]) -> Vec<ScatterPoint> {
    rows.iter()
        .map(|r| ScatterPoint {
            k: r.k,
            auc: r.auc,
            subset_mask: r.subset_mask,
            is_selection: r.kind == RowKind::Selection,
        })
        .collect()
}

pub fn write_scatter(path: &Path, points: &[ScatterPoint]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| format_err(path, e.to_string()))?;
    if points.is_empty() {
        w.write_record(["k", "auc", "subset_mask", "is_selection"])?;
    }
    for p in points {
        w.serialize(p)?;
    }
    w.flush().map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SelectionPlacement {
    pub config_hash: String,
    pub seed: u64,
    pub subset_mask: u64,
    pub rank: Option<SelectionRank>,
}

/// Ranks every selection row against the enumeration rows of the same config.
pub fn place_selections(rows: &[LedgerRow]) -> Vec<SelectionPlacement> {
    rows.iter()
        .filter(|r| r.kind == RowKind::Selection)
        .map(|s| {
            let pool: Vec<SubsetRow> = rows
                .iter()
                .filter(|r| r.kind == RowKind::Enumeration && r.config_hash == s.config_hash)
                .map(|r| SubsetRow {
                    subset_mask: r.subset_mask,
                    k: r.k,
                    auc: r.auc,
                    logloss: r.logloss,
                    seed: r.seed,
                    epochs: r.epochs,
                    train_seconds: r.train_seconds,
                    infer_ms: r.infer_ms,
                })
                .chain(std::iter::once(SubsetRow {
                    subset_mask: s.subset_mask,
                    k: s.k,
                    auc: s.auc,
                    logloss: s.logloss,
                    seed: s.seed,
                    epochs: s.epochs,
                    train_seconds: s.train_seconds,
                    infer_ms: s.infer_ms,
                }))
                .collect();
            let fields = crate::oracle::mask_fields(s.subset_mask);
            // The enumeration's own row for this subset stands in for the selection when present.
            let rank = if pool.iter().filter(|r| r.k == s.k).count() > 1 {
                let mut dedup: Vec<SubsetRow> = Vec::new();
                for r in pool {
                    if !dedup.iter().any(|d| d.subset_mask == r.subset_mask) {
                        dedup.push(r);
                    }
                }
                rank_selection(&dedup, &fields).ok()
            } else {
                None
            };
            SelectionPlacement { config_hash: s.config_hash.clone(), seed: s.seed, subset_mask: s.subset_mask, rank }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(hash: &str, kind: RowKind, mask: u64, auc: f64) -> LedgerRow {
        LedgerRow {
            config_hash: hash.into(),
            kind,
            subset_mask: mask,
            k: mask.count_ones() as usize,
            auc,
            logloss: 0.4,
            seed: 0,
            epochs: 2,
            train_seconds: 1.5,
            infer_ms: 0.2,
        }
    }

    #[test]
    fn append_and_read() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.csv");
        append_rows(&p, &[row("h", RowKind::Selection, 3, 0.7)]).unwrap();
        append_rows(&p, &[row("h", RowKind::Enumeration, 5, 0.6)]).unwrap();
        let rows = read_ledger(&p).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[1].kind, RowKind::Enumeration);
    }

    #[test]
    fn empty_merge_has_header() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("m.csv");
        let merged = merge_ledgers(&[]).unwrap();
        write_ledger(&out, &merged.rows).unwrap();
        assert_eq!(std::fs::read_to_string(&out).unwrap().trim(), LEDGER_COLUMNS.join(","));
        assert!(read_ledger(&out).unwrap().is_empty());
    }

    #[test]
    fn dedup_and_counts() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.csv");
        let b = dir.path().join("b.csv");
        append_rows(&a, &[row("h", RowKind::Selection, 3, 0.7), row("h", RowKind::Enumeration, 3, 0.69)]).unwrap();
        append_rows(&b, &[row("h", RowKind::Selection, 3, 0.7), row("g", RowKind::Selection, 3, 0.71)]).unwrap();
        let m = merge_ledgers(&[a, b]).unwrap();
        assert_eq!((m.rows.len(), m.duplicates), (3, 1));
    }

    #[test]
    fn schema_drift_names_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("odd.csv");
        std::fs::write(&p, "config_hash,kind,auc\nh,selection,0.5\n").unwrap();
        let err = merge_ledgers(&[p]).unwrap_err();
        assert!(err.to_string().contains("odd.csv"), "{err}");
    }

    #[test]
    fn placement() {
        let rows = vec![
            row("h", RowKind::Enumeration, 0b011, 0.8),
            row("h", RowKind::Enumeration, 0b101, 0.7),
            row("h", RowKind::Enumeration, 0b110, 0.6),
            row("h", RowKind::Selection, 0b101, 0.7),
            row("other", RowKind::Selection, 0b101, 0.7),
        ];
        let p = place_selections(&rows);
        let r = p[0].rank.unwrap();
        assert_eq!((r.better, r.stratum_size), (1, 3));
        assert!(p[1].rank.is_none());
        let pts = scatter(&rows);
        assert_eq!(pts.iter().filter(|p| p.is_selection).count(), 2);
    }
}
