//! Run configuration: one TOML file with a section per stage. Any field can
//! be overridden by a dotted key, e.g. `model.epochs=200` or
//! `datasets.politifact.path=data/pf.jsonl`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};

use crate::corpus::{CsvColumns, DomainTag, Format, LabelMap, LoadOptions};
use crate::evaluation::ModelConfig;
use crate::extraction::{BackendConfig, ExtractOptions, MockConfig, MockProfile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    /// OpenAI-compatible HTTP endpoint.
    #[default]
    Http,
    /// Deterministic offline generator.
    Mock,
    /// Serve from the cache only; a miss is an error.
    Replay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub name: String,
    pub path: PathBuf,
    #[serde(default = "default_domain")]
    pub domain: DomainTag,
    #[serde(default)]
    pub format: Format,
    #[serde(default)]
    pub columns: CsvColumns,
    #[serde(default)]
    pub label_map: LabelMap,
}

fn default_domain() -> DomainTag {
    DomainTag::Other
}

impl DatasetConfig {
    pub fn load_options(&self) -> LoadOptions {
        LoadOptions {
            format: self.format,
            columns: self.columns.clone(),
            label_map: self.label_map.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractionConfig {
    pub backend: BackendKind,
    pub context_budget: usize,
    /// Also ask the direct veracity question per article.
    pub zeroshot: bool,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        Self {
            backend: BackendKind::Http,
            context_budget: ExtractOptions::default().context_budget,
            zeroshot: true,
        }
    }
}

impl ExtractionConfig {
    pub fn options(&self) -> ExtractOptions {
        ExtractOptions {
            context_budget: self.context_budget,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MockSection {
    pub seed: u64,
    /// Make mock answers depend on gold labels where the dataset has them.
    pub plant_labels: bool,
    pub default_profile: MockProfile,
    pub profiles: BTreeMap<String, MockProfile>,
}

impl Default for MockSection {
    fn default() -> Self {
        Self {
            seed: 0,
            plant_labels: true,
            default_profile: MockProfile {
                accuracy: Some(0.75),
                ..Default::default()
            },
            profiles: BTreeMap::new(),
        }
    }
}

impl MockSection {
    pub fn mock_config(&self) -> MockConfig {
        MockConfig {
            seed: self.seed,
            default_profile: self.default_profile,
            profiles: self.profiles.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FoldsConfig {
    pub k: usize,
}

impl Default for FoldsConfig {
    fn default() -> Self {
        Self { k: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
    #[serde(default = "default_cache")]
    pub cache_dir: PathBuf,
    /// Signal catalog TOML; the built-in catalog when absent.
    #[serde(default)]
    pub catalog: Option<PathBuf>,
    #[serde(default)]
    pub datasets: Vec<DatasetConfig>,
    #[serde(default)]
    pub extraction: ExtractionConfig,
    #[serde(default)]
    pub backend: BackendConfig,
    #[serde(default)]
    pub mock: MockSection,
    #[serde(default)]
    pub folds: FoldsConfig,
    #[serde(default)]
    pub model: ModelConfig,
}

fn default_out() -> PathBuf {
    "out".into()
}

fn default_cache() -> PathBuf {
    "cache".into()
}

impl RunConfig {
    /// Parses `text`, applies `overrides` (`key=value`), and resolves
    /// relative paths against `base`.
    pub fn from_toml(text: &str, overrides: &[String], base: &Path) -> Result<Self> {
        let mut root: toml::Value = toml::from_str(text).context("config is not valid TOML")?;
        for o in overrides {
            let (key, value) = o
                .split_once('=')
                .ok_or_else(|| anyhow!("override {o:?} is not key=value"))?;
            apply_override(&mut root, key.trim(), value.trim())?;
        }
        let mut cfg: RunConfig = root.try_into().context("invalid config")?;
        cfg.resolve(base);
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = match std::fs::read_to_string(path) {
            Ok(t) => t,
            // A missing default config is fine when overrides supply everything.
            Err(e) if e.kind() == std::io::ErrorKind::NotFound && !overrides.is_empty() => {
                String::new()
            }
            Err(e) => return Err(e).with_context(|| format!("reading config {}", path.display())),
        };
        let base = path
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or(Path::new("."));
        Self::from_toml(&text, overrides, base)
    }

    fn resolve(&mut self, base: &Path) {
        let abs = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        abs(&mut self.out_dir);
        abs(&mut self.cache_dir);
        if let Some(c) = &mut self.catalog {
            abs(c);
        }
        for d in &mut self.datasets {
            abs(&mut d.path);
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed.expect("validated config has a seed")
    }

    pub fn validate(&self) -> Result<()> {
        if self.seed.is_none() {
            bail!("config must set `seed`");
        }
        if self.folds.k < 2 {
            bail!("folds.k must be at least 2, got {}", self.folds.k);
        }
        if let Some(c) = &self.catalog {
            if !c.is_file() {
                bail!("catalog {} not found", c.display());
            }
        }
        let mut seen = std::collections::HashSet::new();
        for d in &self.datasets {
            if d.name.is_empty() || d.name.contains(['/', '\\']) {
                bail!(
                    "dataset name {:?} must be non-empty and contain no path separators",
                    d.name
                );
            }
            if !seen.insert(&d.name) {
                bail!("dataset {:?} is listed twice", d.name);
            }
            if !d.path.is_file() {
                bail!("dataset {}: file {} not found", d.name, d.path.display());
            }
        }
        self.backend.validate()?;
        self.model.validate()?;
        Ok(())
    }

    /// Datasets named in `only`, or all of them when `only` is empty.
    pub fn select(&self, only: &[String]) -> Result<Vec<&DatasetConfig>> {
        if self.datasets.is_empty() {
            bail!("config lists no datasets");
        }
        if only.is_empty() {
            return Ok(self.datasets.iter().collect());
        }
        only.iter()
            .map(|n| {
                self.datasets
                    .iter()
                    .find(|d| &d.name == n)
                    .ok_or_else(|| anyhow!("dataset {n:?} is not in the config"))
            })
            .collect()
    }

    pub fn dataset(&self, name: &str) -> Result<&DatasetConfig> {
        Ok(self.select(&[name.to_string()])?[0])
    }

    /// Everything that affects model fitting, for cache keys.
    pub fn model_fingerprint(&self) -> String {
        serde_json::json!({
            "seed": self.seed,
            "folds": self.folds,
            "model": self.model,
        })
        .to_string()
    }
}

/// TOML literal when it parses as one, string otherwise.
fn parse_scalar(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn apply_override(root: &mut toml::Value, key: &str, raw: &str) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        bail!("malformed override key {key:?}");
    }
    // Keys written with dashes on the command line map to underscores.
    let parts: Vec<String> = parts.iter().map(|p| p.replace('-', "_")).collect();
    let mut node = root;
    let mut i = 0;
    while i + 1 < parts.len() {
        let part = &parts[i];
        if part == "datasets" {
            let name = &parts[i + 1];
            let list = node
                .as_table_mut()
                .ok_or_else(|| anyhow!("{key}: not a table"))?
                .entry("datasets")
                .or_insert_with(|| toml::Value::Array(Vec::new()))
                .as_array_mut()
                .ok_or_else(|| anyhow!("{key}: datasets is not a list"))?;
            let pos = match list
                .iter()
                .position(|d| d.get("name").and_then(|v| v.as_str()) == Some(name.as_str()))
            {
                Some(p) => p,
                None => {
                    let mut t = toml::Table::new();
                    t.insert("name".into(), toml::Value::String(name.clone()));
                    list.push(toml::Value::Table(t));
                    list.len() - 1
                }
            };
            node = &mut list[pos];
            i += 2;
            continue;
        }
        node = node
            .as_table_mut()
            .ok_or_else(|| anyhow!("{key}: {part} is not a table"))?
            .entry(part.clone())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        i += 1;
    }
    let last = parts.last().expect("non-empty key");
    if i >= parts.len() {
        bail!("override {key:?} names a dataset but no field");
    }
    node.as_table_mut()
        .ok_or_else(|| anyhow!("{key}: parent is not a table"))?
        .insert(last.clone(), parse_scalar(raw));
    Ok(())
}
