//! Run manifests: what ran, with which config, and the SHA-256 of every file
//! it wrote. Timestamps live only here so all other outputs stay
//! byte-reproducible.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use chrono::{SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: serde_json::Value,
    /// Paths relative to the output directory, mapped to hex SHA-256.
    pub artifacts: BTreeMap<String, String>,
    /// Run counters that may differ between otherwise identical runs.
    #[serde(default)]
    pub stats: BTreeMap<String, serde_json::Value>,
    pub started_at: String,
    pub finished_at: String,
}

pub fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut f = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut h = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

/// Collects written artifacts for one command.
#[derive(Debug)]
pub struct ManifestBuilder {
    command: String,
    out_dir: PathBuf,
    config: serde_json::Value,
    started_at: String,
    files: Vec<PathBuf>,
    stats: BTreeMap<String, serde_json::Value>,
}

impl ManifestBuilder {
    pub fn new(command: &str, out_dir: &Path, config: serde_json::Value) -> Self {
        Self {
            command: command.to_string(),
            out_dir: out_dir.to_path_buf(),
            config,
            started_at: now(),
            files: Vec::new(),
            stats: BTreeMap::new(),
        }
    }

    pub fn record(&mut self, path: &Path) {
        self.files.push(path.to_path_buf());
    }

    pub fn note(&mut self, key: impl Into<String>, value: impl Serialize) {
        let v = serde_json::to_value(value).unwrap_or(serde_json::Value::Null);
        self.stats.insert(key.into(), v);
    }

    pub fn path(&self) -> PathBuf {
        self.out_dir.join(format!("manifest-{}.json", self.command))
    }

    pub fn finish(self) -> Result<PathBuf> {
        let mut artifacts = BTreeMap::new();
        for f in &self.files {
            let rel = f.strip_prefix(&self.out_dir).unwrap_or(f);
            let key = rel.to_string_lossy().replace('\\', "/");
            artifacts.insert(key, sha256_file(f)?);
        }
        let path = self.path();
        let m = RunManifest {
            tool: "veracity".into(),
            version: TOOL_VERSION.into(),
            command: self.command,
            config: self.config,
            artifacts,
            stats: self.stats,
            started_at: self.started_at,
            finished_at: now(),
        };
        let text = serde_json::to_string_pretty(&m)? + "\n";
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

/// Re-hashes every artifact listed in the manifest at `path`. Returns the
/// relative paths whose digest no longer matches (or which are missing).
pub fn verify_manifest(path: &Path) -> Result<Vec<String>> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let m: RunManifest = serde_json::from_str(&text).context("malformed manifest")?;
    let base = path.parent().unwrap_or(Path::new("."));
    Ok(m.artifacts
        .iter()
        .filter(|(rel, digest)| sha256_file(&base.join(rel)).ok().as_ref() != Some(digest))
        .map(|(rel, _)| rel.clone())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_round_trip_and_tamper_detection() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("sub/a.txt");
        std::fs::create_dir_all(a.parent().unwrap()).unwrap();
        std::fs::write(&a, "hello").unwrap();
        let mut b = ManifestBuilder::new("test", dir.path(), serde_json::json!({"seed": 1}));
        b.record(&a);
        let path = b.finish().unwrap();
        let m: RunManifest =
            serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        assert_eq!(
            m.artifacts["sub/a.txt"],
            "2cf24dba5fb0a30e26e83b2ac5b9e29e1b161e5c1fa7425e73043362938b9824"
        );
        assert!(verify_manifest(&path).unwrap().is_empty());
        std::fs::write(&a, "changed").unwrap();
        assert_eq!(
            verify_manifest(&path).unwrap(),
            vec!["sub/a.txt".to_string()]
        );
    }
}
