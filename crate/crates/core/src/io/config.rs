use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agent::AgentConfig;
use crate::baselines::{BaselineConfig, Variant};
use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::harness::{EvalConfig, TrainConfig};
use crate::reward::RewardShaping;

/// Prefix of environment variables that override config keys. The rest of
/// the name is the key path with `__` between levels, e.g.
/// `HRLREC_ENV__NUM_USERS=50` sets `env.num_users`.
pub const ENV_PREFIX: &str = "HRLREC_";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub variants: Vec<Variant>,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    pub env: EnvConfig,
    pub agent: AgentConfig,
    pub shaping: RewardShaping,
    pub baselines: BaselineConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            variants: Variant::ALL.to_vec(),
            seeds: (0..10).collect(),
            output_dir: PathBuf::from("results"),
            env: EnvConfig::default(),
            agent: AgentConfig::default(),
            shaping: RewardShaping::default(),
            baselines: BaselineConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.agent.validate()?;
        self.baselines.validate()?;
        self.train.validate(self.env.session_length)?;
        self.eval.validate()?;
        for (key, w) in [
            ("shaping.novelty_weight", self.shaping.novelty_weight),
            ("shaping.diversity_weight", self.shaping.diversity_weight),
        ] {
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::config(key, "must be a finite value ≥ 0"));
            }
        }
        if self.variants.is_empty() {
            return Err(Error::config("variants", "must name at least one variant"));
        }
        if self.variants.iter().collect::<BTreeSet<_>>().len() != self.variants.len() {
            return Err(Error::config("variants", "contains duplicates"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "must list at least one seed"));
        }
        if self.seeds.iter().collect::<BTreeSet<_>>().len() != self.seeds.len() {
            return Err(Error::config("seeds", "contains duplicates"));
        }
        Ok(())
    }

    /// Canonical TOML; parsing it back yields an equal config.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config("<config>", e.to_string()))
    }

    /// Hex SHA-256 of the canonical TOML.
    pub fn hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_toml()?.as_bytes())))
    }
}

/// Parses and validates config text, applying `overrides` (key path, raw
/// value) on top of it. Values parse as TOML literals and fall back to plain
/// strings.
pub fn parse_config<I, K, V>(text: &str, overrides: I) -> Result<ExperimentConfig>
where
    I: IntoIterator<Item = (K, V)>,
    K: AsRef<str>,
    V: AsRef<str>,
{
    let mut table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::config("<config>", e.to_string()))?;
    for (key, value) in overrides {
        apply_override(&mut table, key.as_ref(), value.as_ref())?;
    }
    let config: ExperimentConfig = serde_path_to_error::deserialize(table).map_err(|e| {
        let path = e.path().to_string();
        Error::config(if path == "." { "<config>".into() } else { path }, e.into_inner().to_string())
    })?;
    config.validate()?;
    Ok(config)
}

fn apply_override(table: &mut toml::Table, key: &str, raw: &str) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::config(key, "malformed override key"));
    }
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let (last, parents) = parts.split_last().expect("non-empty split");
    let mut node = table;
    for p in parents {
        node = node
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Error::config(key, format!("`{p}` is not a section")))?;
    }
    node.insert(last.to_string(), value);
    Ok(())
}

/// `HRLREC_ENV__NUM_USERS` becomes `env.num_users`.
pub fn env_overrides<I: IntoIterator<Item = (String, String)>>(vars: I) -> Vec<(String, String)> {
    let mut out: Vec<(String, String)> = vars
        .into_iter()
        .filter_map(|(k, v)| {
            let rest = k.strip_prefix(ENV_PREFIX)?;
            Some((rest.split("__").collect::<Vec<_>>().join(".").to_lowercase(), v))
        })
        .collect();
    out.sort();
    out
}

/// Reads `path`, applies `HRLREC_*` variables from the process environment,
/// and validates. An empty file gives the defaults.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text, env_overrides(std::env::vars()))
}
