//! Run configuration: one TOML file, strict keys, `key=value` overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::controller::ControllerSettings;
use crate::data::{
    generate_synthetic, read_delimited, read_movielens, split_dataset, DatasetSplits, EncodedDataset, IngestConfig,
    SplitRatios, SyntheticSpec,
};
use crate::diff::AdamConfig;
use crate::error::{Error, Result};
use crate::model::ModelSettings;
use crate::oracle::{OracleRecipe, OracleSettings};
use crate::retrain::RetrainSettings;
use crate::search::{SearchConfig, SearchSettings};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    #[default]
    Synthetic,
    /// An encoded dataset written by `prepare`.
    File,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSettings {
    pub source: DataSource,
    pub path: Option<PathBuf>,
    /// Train/validation/test fractions for file data; synthetic data uses its own.
    pub split: SplitRatios,
    pub synthetic: SyntheticSpec,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputFormat {
    #[default]
    Delimited,
    Movielens,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PrepareSettings {
    pub format: InputFormat,
    /// Delimited file, or the directory holding the MovieLens `.dat` files.
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub ingest: IngestConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub data: DataSettings,
    pub prepare: PrepareSettings,
    pub model: ModelSettings,
    pub optimizer: AdamConfig,
    pub controller: ControllerSettings,
    pub search: SearchSettings,
    pub retrain: RetrainSettings,
    pub oracle: OracleSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out_dir: PathBuf::from("autofield-out"),
            data: DataSettings::default(),
            prepare: PrepareSettings::default(),
            model: ModelSettings::default(),
            optimizer: AdamConfig::default(),
            controller: ControllerSettings::default(),
            search: SearchSettings::default(),
            retrain: RetrainSettings::default(),
            oracle: OracleSettings::default(),
        }
    }
}

fn parse_override_value(raw: &str) -> toml::Value {
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Sets `dotted.key = value` in a TOML tree, creating tables as needed.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, value) =
        assignment.split_once('=').ok_or_else(|| Error::config(format!("override {assignment:?} is not key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::config(format!("override key {key:?} is malformed")));
    }
    let mut node = table;
    for part in &parts[..parts.len() - 1] {
        let entry = node.entry(part.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry
            .as_table_mut()
            .ok_or_else(|| Error::config(format!("override key {key:?}: {part} is not a table")))?;
    }
    node.insert(parts[parts.len() - 1].to_string(), parse_override_value(value.trim()));
    Ok(())
}

impl RunConfig {
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let config: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::config(e.message().to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => {
                std::fs::read_to_string(p).map_err(|e| Error::config(format!("cannot read {}: {e}", p.display())))?
            }
            None => String::new(),
        };
        Self::from_toml_str(&text, overrides)
    }

    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        self.retrain.validate()?;
        self.data.split.validate()?;
        if self.data.source == DataSource::Synthetic {
            self.data.synthetic.validate()?;
        } else if self.data.path.is_none() {
            return Err(Error::config("data.path is required when data.source = \"file\""));
        }
        if self.model.embedding_dim == 0 || self.model.hidden.is_empty() || self.model.hidden.contains(&0) {
            return Err(Error::config("model.embedding_dim and model.hidden sizes must be positive"));
        }
        if !(0.0..1.0).contains(&self.model.dropout) {
            return Err(Error::config("model.dropout must lie in [0, 1)"));
        }
        let t = &self.controller.temperature;
        if !(t.floor > 0.0 && t.floor <= 1.0) || !(t.slope >= 0.0) {
            return Err(Error::config("controller.temperature needs 0 < floor ≤ 1 and slope ≥ 0"));
        }
        Ok(())
    }

    /// First 16 hex digits of the SHA-256 of the resolved config, output directory excluded.
    pub fn config_hash(&self) -> String {
        let mut copy = self.clone();
        copy.out_dir = PathBuf::new();
        let bytes = serde_json::to_vec(&copy).expect("config serializes");
        let digest = Sha256::digest(&bytes);
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::config(e.to_string()))
    }

    pub fn search_config(&self) -> SearchConfig {
        SearchConfig {
            search: self.search.clone(),
            controller: self.controller.clone(),
            model: self.model.clone(),
            optimizer: self.optimizer,
            seed: self.seed,
        }
    }

    pub fn oracle_recipe(&self) -> OracleRecipe {
        OracleRecipe {
            retrain: self.retrain.clone(),
            model: self.model.clone(),
            optimizer: self.optimizer,
            seed: self.seed,
        }
    }

    pub fn load_splits(&self) -> Result<DatasetSplits> {
        match self.data.source {
            DataSource::Synthetic => generate_synthetic(&self.data.synthetic),
            DataSource::File => {
                let path = self.data.path.as_ref().expect("validated");
                let ds = EncodedDataset::read(path)?;
                split_dataset(&ds, self.data.split, self.seed)
            }
        }
    }

    /// Reads and encodes the raw input named in `[prepare]`.
    pub fn prepare_dataset(&self) -> Result<EncodedDataset> {
        let input = self.prepare.input.as_ref().ok_or_else(|| Error::config("prepare.input is required"))?;
        match self.prepare.format {
            InputFormat::Delimited => read_delimited(input, &self.prepare.ingest),
            InputFormat::Movielens => read_movielens(input, self.prepare.ingest.min_frequency),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controller::GateMode;

    #[test]
    fn empty_text_is_default() {
        assert_eq!(RunConfig::from_toml_str("", &[]).unwrap(), RunConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::from_toml_str("[search]\nkk = 3\n", &[]).unwrap_err();
        assert!(matches!(err, Error::Config(ref m) if m.contains("kk")), "{err}");
        assert!(RunConfig::from_toml_str("bogus = 1", &[]).is_err());
    }

    #[test]
    fn overrides() {
        let c = RunConfig::from_toml_str(
            "seed = 3\n[search]\nk = 2\n",
            &[
                "search.k=5".into(),
                "controller.gate_mode=softmax".into(),
                "data.synthetic.rows = 500".into(),
                "optimizer.learning_rate=1e-3".into(),
            ],
        )
        .unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.search.k, Some(5));
        assert_eq!(c.controller.gate_mode, GateMode::Softmax);
        assert_eq!(c.data.synthetic.rows, 500);
        assert_eq!(c.optimizer.learning_rate, 1e-3);
        assert!(RunConfig::from_toml_str("", &["search".into()]).is_err());
        assert!(RunConfig::from_toml_str("", &["seed.x=1".into()]).is_err());
    }

    #[test]
    fn hash_tracks_settings_not_output() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.out_dir = "elsewhere".into();
        assert_eq!(a.config_hash(), b.config_hash());
        assert_eq!(a.config_hash().len(), 16);
        b.search.update_frequency = 2;
        assert_ne!(a.config_hash(), b.config_hash());
    }

    #[test]
    fn round_trips_through_toml() {
        let mut c = RunConfig::default();
        c.search.k = Some(3);
        c.oracle.k = vec![4, 5];
        let text = c.to_toml().unwrap();
        assert_eq!(RunConfig::from_toml_str(&text, &[]).unwrap(), c);
    }

    #[test]
    fn file_source_needs_path() {
        assert!(matches!(RunConfig::from_toml_str("[data]\nsource = \"file\"\n", &[]), Err(Error::Config(_))));
    }
}
