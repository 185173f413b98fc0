//! Encoded datasets and their on-disk container.
//!
//! File layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes   "AFDSET\0\x01"
//! header_len u64
//! header     header_len bytes of UTF-8 JSON (DatasetHeader)
//! indices    num_rows * num_fields u32, row-major
//! labels     num_rows u8 (0 or 1)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::schema::{FieldSchema, FieldVocab, Vocabulary};
use crate::error::{Error, Result};

pub const DATASET_MAGIC: &[u8; 8] = b"AFDSET\0\x01";
pub const DATASET_VERSION: u32 = 1;

/// Rows stored as hot coordinates per field plus a 0/1 label.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedDataset {
    pub schema: FieldSchema,
    pub vocab: Vocabulary,
    indices: Vec<u32>,
    labels: Vec<u8>,
}

impl EncodedDataset {
    pub fn new(schema: FieldSchema, vocab: Vocabulary, indices: Vec<u32>, labels: Vec<u8>) -> Result<Self> {
        let n = schema.len();
        if vocab.len() != n {
            return Err(Error::contract("vocabulary and schema disagree on field count"));
        }
        if indices.len() != labels.len() * n {
            return Err(Error::contract(format!("{} indices for {} rows of {n} fields", indices.len(), labels.len())));
        }
        if labels.iter().any(|&y| y > 1) {
            return Err(Error::contract("labels must be 0 or 1"));
        }
        let cards = vocab.cardinalities();
        for row in indices.chunks(n) {
            for (f, (&i, &d)) in row.iter().zip(&cards).enumerate() {
                if i as usize >= d {
                    return Err(Error::contract(format!("index {i} out of range for field {f} (D = {d})")));
                }
            }
        }
        Ok(EncodedDataset { schema, vocab, indices, labels })
    }

    pub fn num_rows(&self) -> usize {
        self.labels.len()
    }

    pub fn num_fields(&self) -> usize {
        self.schema.len()
    }

    pub fn row(&self, r: usize) -> &[u32] {
        let n = self.num_fields();
        &self.indices[r * n..(r + 1) * n]
    }

    pub fn label(&self, r: usize) -> u8 {
        self.labels[r]
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn cardinalities(&self) -> Vec<usize> {
        self.vocab.cardinalities()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
        let mut w = BufWriter::new(file);
        let header = DatasetHeader {
            format: "autofield-dataset".into(),
            version: DATASET_VERSION,
            num_rows: self.num_rows(),
            schema: self.schema.clone(),
            vocabulary: self.vocab.fields().iter().map(|f| f.retained().to_vec()).collect(),
        };
        let header_bytes = serde_json::to_vec(&header)?;
        let io = |e| Error::io(format!("writing {}", path.display()), e);
        w.write_all(DATASET_MAGIC).map_err(io)?;
        w.write_all(&(header_bytes.len() as u64).to_le_bytes()).map_err(io)?;
        w.write_all(&header_bytes).map_err(io)?;
        for &i in &self.indices {
            w.write_all(&i.to_le_bytes()).map_err(io)?;
        }
        w.write_all(&self.labels).map_err(io)?;
        w.flush().map_err(io)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
        let mut r = BufReader::new(file);
        let format_err = |m: &str| Error::Format { path: path.to_path_buf(), message: m.to_string() };
        let io = |e| Error::io(format!("reading {}", path.display()), e);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| format_err("truncated magic"))?;
        if &magic != DATASET_MAGIC {
            return Err(format_err("not an autofield dataset file"));
        }
        let mut len = [0u8; 8];
        r.read_exact(&mut len).map_err(io)?;
        let mut header_bytes = vec![0u8; u64::from_le_bytes(len) as usize];
        r.read_exact(&mut header_bytes).map_err(io)?;
        let header: DatasetHeader = serde_json::from_slice(&header_bytes)?;
        if header.version != DATASET_VERSION {
            return Err(format_err(&format!("unsupported version {}", header.version)));
        }
        let vocab =
            Vocabulary::new(header.vocabulary.into_iter().map(FieldVocab::from_tokens).collect::<Result<Vec<_>>>()?);
        let n = header.schema.len();
        let mut raw = vec![0u8; header.num_rows * n * 4];
        r.read_exact(&mut raw).map_err(|_| format_err("truncated index block"))?;
        let indices = raw.chunks_exact(4).map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        let mut labels = vec![0u8; header.num_rows];
        r.read_exact(&mut labels).map_err(|_| format_err("truncated label block"))?;
        EncodedDataset::new(header.schema, vocab, indices, labels)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetHeader {
    format: String,
    version: u32,
    num_rows: usize,
    schema: FieldSchema,
    /// Retained tokens per field in index order starting at 1.
    vocabulary: Vec<Vec<String>>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::schema::{build_vocabulary, encode_row, RawRow};

    #[test]
    fn file_round_trip() {
        let schema = FieldSchema::categorical(&["a", "b"]).unwrap();
        let rows: Vec<RawRow> = (0..20)
            .map(|i| RawRow { line: i + 1, tokens: vec![format!("x{}", i % 3), format!("y{}", i % 5)] })
            .collect();
        let vocab = build_vocabulary(&rows, &schema, 1).unwrap();
        let mut idx = Vec::new();
        for r in &rows {
            idx.extend(encode_row(&r.tokens, &vocab).unwrap());
        }
        let labels = (0..20).map(|i| (i % 2) as u8).collect();
        let ds = EncodedDataset::new(schema, vocab, idx, labels).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.afds");
        ds.write(&p).unwrap();
        assert_eq!(EncodedDataset::read(&p).unwrap(), ds);
    }

    #[test]
    fn rejects_foreign_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("junk");
        std::fs::write(&p, b"hello world, not a dataset").unwrap();
        assert!(matches!(EncodedDataset::read(&p), Err(Error::Format { .. })));
    }
}
