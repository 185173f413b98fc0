//! Model checkpoints.
//!
//! File layout (little-endian):
//!
//! ```text
//! magic      8 bytes   "AFCKPT\0\x01"
//! header_len u64
//! header     JSON (CheckpointHeader)
//! values     every array's values as f64, in header order
//! moments    Adam first then second moments for every array, same order
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diff::{Adam, AdamConfig, ParameterStore};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, RecModel};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"AFCKPT\0\x01";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Provenance stored alongside the weights.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config_hash: String,
    pub seed: u64,
    pub field_names: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrayInfo {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct CheckpointHeader {
    format: String,
    version: u32,
    meta: CheckpointMeta,
    model: ModelConfig,
    optimizer: AdamConfig,
    optimizer_step: u64,
    arrays: Vec<ArrayInfo>,
}

fn write_f64s<W: Write>(w: &mut W, values: &[f64]) -> std::io::Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn save_checkpoint(path: &Path, model: &RecModel, meta: &CheckpointMeta) -> Result<()> {
    let header = CheckpointHeader {
        format: "autofield-checkpoint".into(),
        version: CHECKPOINT_VERSION,
        meta: meta.clone(),
        model: model.config.clone(),
        optimizer: model.optimizer.config,
        optimizer_step: model.optimizer.step,
        arrays: model.params.iter().map(|p| ArrayInfo { name: p.name.clone(), rows: p.rows, cols: p.cols }).collect(),
    };
    let bytes = serde_json::to_vec(&header)?;
    let io = |e| Error::io(format!("writing {}", path.display()), e);
    let file = File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    let mut w = BufWriter::new(file);
    w.write_all(CHECKPOINT_MAGIC).map_err(io)?;
    w.write_all(&(bytes.len() as u64).to_le_bytes()).map_err(io)?;
    w.write_all(&bytes).map_err(io)?;
    for p in model.params.iter() {
        write_f64s(&mut w, &p.value).map_err(io)?;
    }
    for moments in [&model.optimizer.first, &model.optimizer.second] {
        for m in moments {
            write_f64s(&mut w, m).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

pub fn load_checkpoint(path: &Path) -> Result<(RecModel, CheckpointMeta)> {
    let file = File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    let mut r = BufReader::new(file);
    let bad = |m: String| Error::Format { path: path.to_path_buf(), message: m };
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| bad("truncated magic".into()))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(bad("not an autofield checkpoint".into()));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len).map_err(|_| bad("truncated header length".into()))?;
    let len = u64::from_le_bytes(len) as usize;
    if len > 1 << 30 {
        return Err(bad(format!("header length {len} is implausible")));
    }
    let mut bytes = vec![0u8; len];
    r.read_exact(&mut bytes).map_err(|_| bad("truncated header".into()))?;
    let header: CheckpointHeader = serde_json::from_slice(&bytes).map_err(|e| bad(format!("header: {e}")))?;
    if header.version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported version {}", header.version)));
    }
    let mut read_block = |count: usize, what: &str| -> Result<Vec<f64>> {
        let mut raw = vec![0u8; count * 8];
        r.read_exact(&mut raw).map_err(|_| bad(format!("truncated {what}")))?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect())
    };
    let mut params = ParameterStore::new();
    for a in &header.arrays {
        let values = read_block(a.rows * a.cols, &a.name)?;
        params.add(a.name.clone(), a.rows, a.cols, values)?;
    }
    let mut optimizer = Adam::new(header.optimizer, &params);
    optimizer.step = header.optimizer_step;
    for (i, a) in header.arrays.iter().enumerate() {
        optimizer.first[i] = read_block(a.rows * a.cols, "first moments")?;
    }
    for (i, a) in header.arrays.iter().enumerate() {
        optimizer.second[i] = read_block(a.rows * a.cols, "second moments")?;
    }
    params.check_finite()?;
    let model = RecModel::from_parts(header.model, params, optimizer).map_err(|e| bad(e.to_string()))?;
    Ok((model, header.meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::Rng;
    use crate::model::ModelSettings;

    fn model() -> RecModel {
        let mut config = ModelConfig::all_fields(vec![5, 3, 7], &ModelSettings::default());
        config.active = vec![0, 2];
        let mut m = RecModel::new(config, AdamConfig::default(), &mut Rng::stream(1, "init")).unwrap();
        m.optimizer.step = 4;
        m.optimizer.first[0][0] = 0.25;
        m
    }

    #[test]
    fn round_trip() {
        let m = model();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.afck");
        let meta = CheckpointMeta {
            config_hash: "abc".into(),
            seed: 9,
            field_names: vec!["a".into(), "b".into(), "c".into()],
        };
        save_checkpoint(&p, &m, &meta).unwrap();
        let (back, meta2) = load_checkpoint(&p).unwrap();
        assert_eq!(meta2, meta);
        assert_eq!(back.config, m.config);
        assert_eq!(back.optimizer.step, 4);
        assert_eq!(back.optimizer.first, m.optimizer.first);
        for (a, b) in back.params.iter().zip(m.params.iter()) {
            assert_eq!((&a.name, &a.value), (&b.name, &b.value));
        }
        assert!(back.params.find("embedding.1").is_none());
    }

    #[test]
    fn rejects_truncated_and_foreign() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.afck");
        save_checkpoint(&p, &model(), &CheckpointMeta::default()).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(load_checkpoint(&p), Err(Error::Format { .. })));
        std::fs::write(&p, b"AFDSET\0\x01xxxxxxxx").unwrap();
        assert!(matches!(load_checkpoint(&p), Err(Error::Format { .. })));
    }
}
