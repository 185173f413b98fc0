//! Reading delimited interaction logs and the MovieLens-1M layout.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::bucketize::bucketize_numeric;
use super::dataset::EncodedDataset;
use super::schema::{build_vocabulary, encode_row, FieldKind, FieldSchema, FieldSpec, RawRow};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IngestConfig {
    /// Single-character column delimiter.
    pub delimiter: String,
    pub header: bool,
    /// Zero-based column holding the label.
    pub label_column: usize,
    /// Zero-based columns holding integer values to bucketize.
    pub numeric_columns: Vec<usize>,
    pub min_frequency: u64,
    /// When set, the label column is numeric and `label = value > threshold`.
    pub label_threshold: Option<f64>,
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig {
            delimiter: "\t".into(),
            header: false,
            label_column: 0,
            numeric_columns: Vec::new(),
            min_frequency: 2,
            label_threshold: None,
        }
    }
}

impl IngestConfig {
    fn delimiter_byte(&self) -> Result<u8> {
        match self.delimiter.as_bytes() {
            [b] => Ok(*b),
            _ => Err(Error::config(format!("delimiter {:?} must be one ASCII character", self.delimiter))),
        }
    }
}

fn parse_label(raw: &str, threshold: Option<f64>, line: usize) -> Result<u8> {
    let s = raw.trim();
    match threshold {
        Some(t) => {
            let v: f64 =
                s.parse().map_err(|_| Error::Parse { line, message: format!("label {raw:?} is not numeric") })?;
            Ok((v > t) as u8)
        }
        None => match s {
            "0" => Ok(0),
            "1" => Ok(1),
            _ => Err(Error::Parse { line, message: format!("label {raw:?} is not 0 or 1") }),
        },
    }
}

/// Builds vocabularies over `rows` and encodes them.
pub fn encode_rows(
    schema: FieldSchema,
    rows: &[RawRow],
    labels: Vec<u8>,
    min_frequency: u64,
) -> Result<EncodedDataset> {
    let vocab = build_vocabulary(rows, &schema, min_frequency)?;
    let mut indices = Vec::with_capacity(rows.len() * schema.len());
    for r in rows {
        indices.extend(encode_row(&r.tokens, &vocab)?);
    }
    EncodedDataset::new(schema, vocab, indices, labels)
}

/// Reads a delimited file: every column other than the label becomes a field.
pub fn read_delimited(path: &Path, cfg: &IngestConfig) -> Result<EncodedDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(cfg.delimiter_byte()?)
        .has_headers(cfg.header)
        .flexible(true)
        .quoting(false)
        .from_path(path)
        .map_err(|e| Error::config(format!("opening {}: {e}", path.display())))?;

    let header: Option<Vec<String>> =
        if cfg.header { Some(reader.headers()?.iter().map(str::to_string).collect()) } else { None };
    let mut width = header.as_ref().map(Vec::len);
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let w = *width.get_or_insert(record.len());
        if record.len() != w {
            return Err(Error::Parse { line, message: format!("expected {w} columns, found {}", record.len()) });
        }
        if cfg.label_column >= w {
            return Err(Error::config(format!("label column {} beyond {w} columns", cfg.label_column)));
        }
        labels.push(parse_label(&record[cfg.label_column], cfg.label_threshold, line)?);
        let mut tokens = Vec::with_capacity(w - 1);
        for (col, cell) in record.iter().enumerate() {
            if col == cfg.label_column {
                continue;
            }
            if cfg.numeric_columns.contains(&col) {
                tokens.push(bucketize_numeric(cell).map_err(|e| match e {
                    Error::Parse { message, .. } => Error::Parse { line, message },
                    other => other,
                })?);
            } else {
                tokens.push(cell.to_string());
            }
        }
        rows.push(RawRow { line, tokens });
    }
    let width = width.ok_or_else(|| Error::config(format!("{} has no rows", path.display())))?;
    let fields = (0..width)
        .filter(|&c| c != cfg.label_column)
        .enumerate()
        .map(|(id, col)| FieldSpec {
            id,
            name: header.as_ref().map_or_else(|| format!("c{col}"), |h| h[col].clone()),
            kind: if cfg.numeric_columns.contains(&col) { FieldKind::Numeric } else { FieldKind::Categorical },
            min_frequency: None,
        })
        .collect();
    encode_rows(FieldSchema::new(fields)?, &rows, labels, cfg.min_frequency)
}

fn read_dat(path: &Path) -> Result<Vec<(usize, Vec<String>)>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    // movies.dat is Latin-1; map each byte to its code point.
    let text: String = bytes.iter().map(|&b| b as char).collect();
    Ok(text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 1, l.split("::").map(str::to_string).collect()))
        .collect())
}

pub const MOVIELENS_FIELDS: [&str; 8] =
    ["user_id", "movie_id", "gender", "age", "occupation", "zip", "title", "genres"];

/// Joins `ratings.dat`, `users.dat` and `movies.dat` from a MovieLens-1M
/// directory into eight fields; ratings above 3 become positive labels.
pub fn read_movielens(dir: &Path, min_frequency: u64) -> Result<EncodedDataset> {
    let expect = |rows: &[(usize, Vec<String>)], n: usize, file: &str| -> Result<()> {
        for (line, r) in rows {
            if r.len() != n {
                return Err(Error::Parse {
                    line: *line,
                    message: format!("{file}: expected {n} '::' fields, found {}", r.len()),
                });
            }
        }
        Ok(())
    };
    let users = read_dat(&dir.join("users.dat"))?;
    expect(&users, 5, "users.dat")?;
    let movies = read_dat(&dir.join("movies.dat"))?;
    expect(&movies, 3, "movies.dat")?;
    let ratings = read_dat(&dir.join("ratings.dat"))?;
    expect(&ratings, 4, "ratings.dat")?;

    let users: HashMap<String, Vec<String>> = users.into_iter().map(|(_, r)| (r[0].clone(), r[1..].to_vec())).collect();
    let movies: HashMap<String, Vec<String>> =
        movies.into_iter().map(|(_, r)| (r[0].clone(), r[1..].to_vec())).collect();

    let mut rows = Vec::with_capacity(ratings.len());
    let mut labels = Vec::with_capacity(ratings.len());
    for (line, r) in ratings {
        let user = users.get(&r[0]).ok_or_else(|| Error::Parse { line, message: format!("unknown user {}", r[0]) })?;
        let movie =
            movies.get(&r[1]).ok_or_else(|| Error::Parse { line, message: format!("unknown movie {}", r[1]) })?;
        labels.push(parse_label(&r[2], Some(3.0), line)?);
        let tokens = vec![
            r[0].clone(),
            r[1].clone(),
            user[0].clone(),
            user[1].clone(),
            user[2].clone(),
            user[3].clone(),
            movie[0].clone(),
            movie[1].clone(),
        ];
        rows.push(RawRow { line, tokens });
    }
    encode_rows(FieldSchema::categorical(&MOVIELENS_FIELDS)?, &rows, labels, min_frequency)
}
