//! Run configuration: TOML file + `key=value` overrides, with a stable hash.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{gen_synthetic, load_tiles, read_manifest, Palette, Sample};
use crate::model::ModelConfig;
use crate::train::TrainConfig;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    #[default]
    Synthetic,
    Directory,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub source: DataSource,
    /// Synthetic: number of scenes and their side.
    pub count: usize,
    pub size: usize,
    /// Synthetic: trailing scenes held out for validation.
    pub val_count: usize,
    pub seed: u64,
    pub image_dir: Option<PathBuf>,
    pub label_dir: Option<PathBuf>,
    pub tile: usize,
    pub stride: usize,
    /// Directory source: ids (raster stems or tile ids) per split.
    pub train_manifest: Option<PathBuf>,
    pub val_manifest: Option<PathBuf>,
    pub palette: Palette,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Synthetic,
            count: 500,
            size: 64,
            val_count: 50,
            seed: 0,
            image_dir: None,
            label_dir: None,
            tile: 512,
            stride: 512,
            train_manifest: None,
            val_manifest: None,
            palette: Palette::isprs(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    /// Classes scored but left out of the means (e.g. clutter).
    pub exclude_classes: Vec<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub metrics: MetricsConfig,
}

fn parse_value(raw: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Applies `a.b.c=value` to a TOML table; the value is read as a TOML
/// literal, falling back to a plain string.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("malformed key `{key}`")));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("`{key}`: `{p}` is not a table")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), parse_value(raw.trim()));
    Ok(())
}

impl RunConfig {
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string().trim().replace('\n', " ")))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string().trim().replace('\n', " ")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Defaults, then the file (if any), then overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
            None => String::new(),
        };
        Self::from_toml_str(&text, overrides)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        let pal = self.palette()?;
        pal.validate()?;
        if let Some(&c) = self.metrics.exclude_classes.iter().find(|&&c| c >= self.model.num_classes) {
            return Err(Error::Config(format!("excluded class {c} is out of range")));
        }
        if self.data.source == DataSource::Synthetic && self.data.val_count >= self.data.count {
            return Err(Error::Config("data.val_count must be smaller than data.count".into()));
        }
        Ok(())
    }

    /// Sets every seed in the configuration.
    pub fn set_seed(&mut self, seed: u64) {
        self.model.seed = seed;
        self.train.seed = seed;
        self.data.seed = seed;
    }

    /// The palette restricted to the model's classes.
    pub fn palette(&self) -> Result<Palette> {
        self.data.palette.truncated(self.model.num_classes)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Hex SHA-256 prefix of the canonical (key-sorted) JSON form.
    pub fn hash(&self) -> String {
        let v = serde_json::to_value(self).expect("config serializes");
        let mut h = Sha256::new();
        h.update(v.to_string().as_bytes());
        hex::encode(&h.finalize()[..8])
    }

    /// `(train, val)` samples.
    pub fn load_data(&self) -> Result<(Vec<Sample>, Vec<Sample>)> {
        let d = &self.data;
        match d.source {
            DataSource::Synthetic => {
                let mut all = gen_synthetic(d.count, d.size, self.model.num_classes, d.seed)?;
                let val = all.split_off(d.count - d.val_count);
                Ok((all, val))
            }
            DataSource::Directory => {
                let need = |p: &Option<PathBuf>, name: &str| {
                    p.clone()
                        .ok_or_else(|| Error::Config(format!("data.{name} is required for directory data")))
                };
                let tiles = load_tiles(
                    &need(&d.image_dir, "image_dir")?,
                    &need(&d.label_dir, "label_dir")?,
                    d.tile,
                    d.stride,
                    &self.palette()?,
                )?;
                let pick = |m: &Option<PathBuf>| -> Result<Vec<Sample>> {
                    let Some(path) = m else { return Ok(tiles.clone()) };
                    let ids = read_manifest(path)?;
                    Ok(tiles
                        .iter()
                        .filter(|t| ids.iter().any(|id| t.id == *id || t.id.starts_with(&format!("{id}_"))))
                        .cloned()
                        .collect())
                };
                let train = pick(&d.train_manifest)?;
                let val = match &d.val_manifest {
                    Some(_) => pick(&d.val_manifest)?,
                    None => Vec::new(),
                };
                Ok((train, val))
            }
        }
    }

    /// Samples of a named split (`train` or `val`).
    pub fn split(&self, name: &str) -> Result<Vec<Sample>> {
        let (train, val) = self.load_data()?;
        match name {
            "train" => Ok(train),
            "val" | "test" => Ok(val),
            other => Err(Error::Config(format!("unknown split `{other}`"))),
        }
    }
}
