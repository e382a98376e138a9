//! Run configuration: one TOML tree with a section per module, overridable
//! key by key.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::DatasetConfig;
use crate::evaluation::{BenchmarkConfig, EvalConfig};
use crate::model::ModelConfig;
use crate::simworld::{EpisodeConfig, WorldConfig};
use crate::training::TrainConfig;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("unknown config key {0}")]
    UnknownKey(String),
    #[error("{key}={value} is invalid: {reason}")]
    Invalid { key: String, value: String, reason: String },
    #[error("{0}")]
    Section(String),
    #[error("override {0:?} is not of the form key=value")]
    Override(String),
    #[error("{0}")]
    Parse(String),
    #[error("{path}: {reason}")]
    Io { path: String, reason: String },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub world: WorldConfig,
    pub episode: EpisodeConfig,
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub bench: BenchmarkConfig,
}

fn default_tree() -> toml::Table {
    toml::Table::try_from(RunConfig::default()).expect("default config serializes")
}

/// Parses an override value as a TOML scalar or array, falling back to a bare string.
fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.into()),
    }
}

/// Every key not present in `reference` at the same path.
fn unknown_keys(tree: &toml::Table, reference: &toml::Table, prefix: &str, out: &mut Vec<String>) {
    for (k, v) in tree {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match (v, reference.get(k)) {
            (_, None) => out.push(path),
            (toml::Value::Table(sub), Some(toml::Value::Table(rsub))) => unknown_keys(sub, rsub, &path, out),
            _ => {}
        }
    }
}

/// `(dotted key, default value)` for every leaf.
fn flatten(tree: &toml::Table, prefix: &str, out: &mut Vec<(String, String)>) {
    for (k, v) in tree {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            toml::Value::Table(sub) => flatten(sub, &path, out),
            other => out.push((path, other.to_string())),
        }
    }
}

fn lookup<'a>(tree: &'a toml::Table, key: &str) -> Option<&'a toml::Value> {
    let mut parts = key.split('.');
    let mut cur = tree.get(parts.next()?)?;
    for p in parts {
        cur = cur.as_table()?.get(p)?;
    }
    Some(cur)
}

impl RunConfig {
    /// Parses a TOML document, rejecting keys the defaults do not have.
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let tree: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse(e.message().to_string()))?;
        Self::from_tree(tree, &[])
    }

    /// Loads an optional file and applies `key=value` overrides in order.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, ConfigError> {
        let tree = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| ConfigError::Io {
                    path: p.display().to_string(),
                    reason: e.to_string(),
                })?;
                text.parse()
                    .map_err(|e: toml::de::Error| ConfigError::Parse(format!("{}: {}", p.display(), e.message())))?
            }
            None => toml::Table::new(),
        };
        Self::from_tree(tree, overrides)
    }

    fn from_tree(mut tree: toml::Table, overrides: &[String]) -> Result<Self, ConfigError> {
        let reference = default_tree();
        let mut unknown = Vec::new();
        unknown_keys(&tree, &reference, "", &mut unknown);
        if let Some(k) = unknown.into_iter().next() {
            return Err(ConfigError::UnknownKey(k));
        }
        for o in overrides {
            let (key, raw) = o.split_once('=').ok_or_else(|| ConfigError::Override(o.clone()))?;
            let key = key.trim();
            let default = lookup(&reference, key).ok_or_else(|| ConfigError::UnknownKey(key.to_string()))?;
            if default.is_table() {
                return Err(ConfigError::UnknownKey(key.to_string()));
            }
            let mut value = parse_value(raw.trim());
            if default.is_float() {
                if let toml::Value::Integer(i) = value {
                    value = toml::Value::Float(i as f64);
                }
            }
            let mut parts: Vec<&str> = key.split('.').collect();
            let leaf = parts.pop().expect("key is non-empty");
            let mut table = &mut tree;
            for p in parts {
                table = table
                    .entry(p)
                    .or_insert_with(|| toml::Value::Table(toml::Table::new()))
                    .as_table_mut()
                    .expect("non-leaf keys are tables");
            }
            table.insert(leaf.to_string(), value);
        }
        let cfg: RunConfig = toml::Value::Table(tree)
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.message().replace('\n', " ")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Section-level validation plus cross-section consistency.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let inv = |key: &str, value: String, reason: String| ConfigError::Invalid {
            key: key.to_string(),
            value,
            reason,
        };
        let section = |e: &dyn std::fmt::Display| ConfigError::Section(e.to_string());
        self.model.validate().map_err(|e| section(&e))?;
        self.train.validate().map_err(|e| section(&e))?;
        self.eval.validate().map_err(|e| section(&e))?;
        let pairs: [(&str, usize, &str, usize); 6] = [
            ("model.R", self.model.n_rays, "episode.n_rays", self.episode.n_rays),
            ("model.F", self.model.feat_dim, "world.feat_dim", self.world.feat_dim),
            ("model.C", self.model.n_classes, "world.n_classes", self.world.n_classes),
            ("model.H_max", self.model.h_max, "dataset.h_max", self.dataset.h_max),
            ("model.k", self.model.k, "dataset.k", self.dataset.k),
            ("model.K", self.model.n_waypoints, "dataset.n_waypoints", self.dataset.n_waypoints),
        ];
        for (a, va, b, vb) in pairs {
            if va != vb {
                return Err(inv(a, va.to_string(), format!("must equal {b}={vb}")));
            }
        }
        Ok(())
    }

    /// Every config key with its default, one `key = value` per line.
    pub fn key_listing() -> String {
        let mut rows = Vec::new();
        flatten(&default_tree(), "", &mut rows);
        rows.iter().map(|(k, v)| format!("  {k} = {v}\n")).collect()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}
