//! Flat TOML config for `select`. Command-line flags win over file values,
//! file values win over built-in defaults.

use std::path::Path;

use activepref_core::WeightScheme;
use anyhow::{Context, Result};
use serde::Deserialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum MethodArg {
    Bottomk,
    Coreset,
    Optselect,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ModeArg {
    Exact,
    Local,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectFile {
    pub method: Option<MethodArg>,
    pub mode: Option<ModeArg>,
    pub k: Option<usize>,
    pub seed: Option<u64>,
    pub weight_scheme: Option<WeightScheme>,
    pub restarts: Option<u32>,
    pub max_sweeps: Option<usize>,
    pub exact_max_points: Option<usize>,
    pub workers: Option<usize>,
    pub strict: Option<bool>,
    pub normalize_distances: Option<bool>,
}

pub fn load<T: serde::de::DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}
