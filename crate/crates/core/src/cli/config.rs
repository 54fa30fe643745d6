//! Pipeline configuration: a TOML file with dotted keys, overridable per key.
//!
//! Relative paths inside a config file are resolved against the file's
//! directory; paths given as overrides are taken as they are.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::autoencoder::{CaeArchitecture, Preset, TrainConfig};
use crate::backtest::BacktestConfig;
use crate::chart_render::RenderConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config: {0}")]
    Parse(String),
    #[error("{field}: {message}")]
    Invalid { field: String, message: String },
}

fn invalid(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.to_string(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Raw price CSV read by `ingest`.
    pub input: PathBuf,
    /// Validated price CSV written by `ingest`.
    pub data: PathBuf,
    pub charts: PathBuf,
    pub checkpoint: PathBuf,
    pub embeddings: PathBuf,
    pub clusters: PathBuf,
    pub report: PathBuf,
    /// Optional benchmark curve (`date,value`) for the report plot.
    pub benchmark: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            input: "data/prices.csv".into(),
            data: "artifacts/prices.csv".into(),
            charts: "artifacts/charts".into(),
            checkpoint: "artifacts/model.cae".into(),
            embeddings: "artifacts/embeddings.csv".into(),
            clusters: "artifacts/clusters.csv".into(),
            report: "report".into(),
            benchmark: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChartsConfig {
    /// Step between consecutive training windows.
    pub train_stride: usize,
}

impl Default for ChartsConfig {
    fn default() -> Self {
        Self { train_stride: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Train on every window, including those after the backtest start.
    pub paper_mode: bool,
    pub preset: Preset,
    pub paths: Paths,
    pub render: RenderConfig,
    pub charts: ChartsConfig,
    pub train: TrainConfig,
    pub backtest: BacktestConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            paper_mode: false,
            preset: Preset::Paper,
            paths: Paths::default(),
            render: RenderConfig::default(),
            charts: ChartsConfig::default(),
            train: TrainConfig::default(),
            backtest: BacktestConfig::default(),
        }
    }
}

/// Parses an override value as TOML, falling back to a plain string.
/// TOML date literals are passed on as strings.
pub fn parse_value(raw: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => match t.remove("v") {
            Some(toml::Value::Datetime(d)) => toml::Value::String(d.to_string()),
            Some(v) => v,
            None => toml::Value::String(raw.to_string()),
        },
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn set_dotted(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<(), ConfigError> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|s| !s.is_empty()).ok_or_else(|| invalid(key, "empty key"))?;
    let mut t = table;
    for p in parts {
        let entry = t
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        t = entry
            .as_table_mut()
            .ok_or_else(|| invalid(key, format!("`{p}` is not a section")))?;
    }
    t.insert(last.to_string(), value);
    Ok(())
}

impl PipelineConfig {
    /// Reads `path` (if any), applies `overrides` in order, then validates.
    pub fn load(
        path: Option<&Path>,
        overrides: &[(String, toml::Value)],
    ) -> Result<Self, ConfigError> {
        match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|source| ConfigError::Io {
                    path: p.display().to_string(),
                    source,
                })?;
                Self::parse(&text, p.parent().unwrap_or(Path::new("")), overrides)
            }
            None => Self::parse("", Path::new(""), overrides),
        }
    }

    /// Parses config text whose relative `paths.*` are resolved against `base`.
    pub fn parse(
        text: &str,
        base: &Path,
        overrides: &[(String, toml::Value)],
    ) -> Result<Self, ConfigError> {
        let mut table: toml::Table =
            toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        if let Some(paths) = table.get_mut("paths").and_then(|v| v.as_table_mut()) {
            for (_, v) in paths.iter_mut() {
                if let toml::Value::String(s) = v {
                    if Path::new(s.as_str()).is_relative() {
                        *s = base.join(s.as_str()).display().to_string();
                    }
                }
            }
        }
        if table
            .get("train")
            .and_then(|t| t.as_table())
            .is_some_and(|t| t.contains_key("seed"))
        {
            return Err(invalid("train.seed", "set the top-level `seed` instead"));
        }
        for (k, v) in overrides {
            set_dotted(&mut table, k, v.clone())?;
        }
        let text = toml::to_string(&table).map_err(|e| ConfigError::Parse(e.to_string()))?;
        let mut cfg: PipelineConfig =
            toml::from_str(&text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.train.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn architecture(&self) -> CaeArchitecture {
        CaeArchitecture::preset(self.preset)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.preset == Preset::Custom {
            return Err(invalid("preset", "expected `paper` or `desk`"));
        }
        self.render
            .validate()
            .map_err(|e| invalid("render", e.to_string()))?;
        let size = self.architecture().input_size as u32;
        if self.render.width != size || self.render.height != size {
            return Err(invalid(
                "render.width",
                format!(
                    "the {:?} preset takes {size}x{size} charts, render is {}x{}",
                    self.preset, self.render.width, self.render.height
                )
                .to_lowercase(),
            ));
        }
        if self.charts.train_stride == 0 {
            return Err(invalid("charts.train_stride", "must be positive"));
        }
        self.train
            .validate()
            .map_err(|e| invalid("train", e.to_string()))?;
        self.backtest
            .validate()
            .map_err(|e| invalid("backtest", e.to_string()))?;
        Ok(())
    }

    /// First 16 hex digits of the SHA-256 of every setting except paths.
    pub fn config_hash(&self) -> String {
        let mut c = self.clone();
        c.paths = Paths::default();
        let json = serde_json::to_vec(&c).expect("config serializes");
        Sha256::digest(&json)[..8]
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    /// `config_hash=...` and `seed=...`, for artifact headers.
    pub fn provenance(&self) -> Vec<String> {
        vec![
            format!("config_hash={}", self.config_hash()),
            format!("seed={}", self.seed),
        ]
    }

    /// Value at a dotted key in the serialized config; `None` for unset options.
    pub fn value_at(&self, key: &str) -> Option<toml::Value> {
        let v = toml::Value::try_from(self).expect("config serializes");
        key.split('.').try_fold(v, |v, part| v.get(part).cloned())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(text: &str) -> (tempfile::TempDir, PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, text).unwrap();
        (dir, p)
    }

    #[test]
    fn defaults_are_valid() {
        let c = PipelineConfig::load(None, &[]).unwrap();
        assert_eq!(c, PipelineConfig::default());
        assert_eq!(c.backtest.formation_window, 20);
        assert_eq!(c.train.batch_size, 64);
        assert_eq!(c.render.width, 224);
    }

    #[test]
    fn dotted_keys_and_overrides() {
        let (dir, p) = write(
            "seed = 7\npreset = \"desk\"\nrender.width = 64\nrender.height = 64\nbacktest.k2 = 3\npaths.data = \"d.csv\"\n",
        );
        let c = PipelineConfig::load(
            Some(&p),
            &[("backtest.k2".into(), parse_value("4")), ("backtest.start_date".into(), parse_value("2021-02-01"))],
        )
        .unwrap();
        assert_eq!(c.backtest.k2, 4);
        assert_eq!(c.train.seed, 7);
        assert_eq!(c.paths.data, dir.path().join("d.csv"));
        assert_eq!(
            c.backtest.start_date,
            chrono::NaiveDate::from_ymd_opt(2021, 2, 1)
        );
    }

    #[test]
    fn field_level_errors() {
        let (_d, p) = write("backtest.k2 = 0\n");
        let e = PipelineConfig::load(Some(&p), &[]).unwrap_err();
        assert!(e.to_string().starts_with("backtest:"), "{e}");
        let (_d, p) = write("preset = \"desk\"\n");
        let e = PipelineConfig::load(Some(&p), &[]).unwrap_err();
        assert!(e.to_string().starts_with("render.width:"), "{e}");
        let (_d, p) = write("backtest.window = 3\n");
        let e = PipelineConfig::load(Some(&p), &[]).unwrap_err();
        assert!(e.to_string().contains("window"), "{e}");
        let (_d, p) = write("train.seed = 3\n");
        assert!(PipelineConfig::load(Some(&p), &[]).is_err());
    }

    #[test]
    fn hash_ignores_paths_only() {
        let a = PipelineConfig::default();
        let mut b = a.clone();
        b.paths.report = "elsewhere".into();
        assert_eq!(a.config_hash(), b.config_hash());
        b.seed = 1;
        assert_ne!(a.config_hash(), b.config_hash());
    }

    #[test]
    fn override_values() {
        assert_eq!(parse_value("3"), toml::Value::Integer(3));
        assert_eq!(parse_value("true"), toml::Value::Boolean(true));
        assert_eq!(parse_value("a/b.csv"), toml::Value::String("a/b.csv".into()));
        assert_eq!(parse_value("2020-01-02"), toml::Value::String("2020-01-02".into()));
    }
}
