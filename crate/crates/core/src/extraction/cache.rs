//! Content-addressed completion cache.
//!
//! One JSON file per entry under `<dir>/<key[0..2]>/<key>.json`. Files are
//! written to a temporary sibling and renamed into place, so readers never
//! observe a partial entry. A cache can be exported to, or seeded from, a
//! JSONL fixture pack.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ExtractionError;

/// Decoding parameters that participate in the cache key.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodingParams {
    pub temperature: f64,
    pub max_new_tokens: u32,
}

#[derive(Serialize)]
struct KeyMaterial<'a> {
    model: &'a str,
    params: &'a DecodingParams,
    prompt: &'a str,
}

/// Hex SHA-256 over the canonical JSON of (model, params, prompt).
pub fn cache_key(model: &str, params: &DecodingParams, prompt: &str) -> String {
    let material = serde_json::to_vec(&KeyMaterial {
        model,
        params,
        prompt,
    })
    .expect("key material serializes");
    hex::encode(Sha256::digest(&material))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: String,
    pub model: String,
    pub params: DecodingParams,
    pub prompt: String,
    pub completion: String,
    pub timestamp: String,
}

impl CacheEntry {
    pub fn new(model: &str, params: DecodingParams, prompt: &str, completion: &str) -> Self {
        Self {
            key: cache_key(model, &params, prompt),
            model: model.to_string(),
            params,
            prompt: prompt.to_string(),
            completion: completion.to_string(),
            timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        }
    }

    pub fn key_is_valid(&self) -> bool {
        cache_key(&self.model, &self.params, &self.prompt) == self.key
    }
}

#[derive(Debug, Clone)]
pub struct ResponseCache {
    dir: PathBuf,
}

fn io_err(path: &Path, source: std::io::Error) -> ExtractionError {
    ExtractionError::Cache(format!("{}: {source}", path.display()))
}

impl ResponseCache {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, ExtractionError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path_for(&self, key: &str) -> PathBuf {
        let shard = key.get(..2).unwrap_or("xx");
        self.dir.join(shard).join(format!("{key}.json"))
    }

    pub fn get(&self, key: &str) -> Result<Option<CacheEntry>, ExtractionError> {
        let path = self.path_for(key);
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(io_err(&path, e)),
        };
        let entry: CacheEntry = serde_json::from_str(&text)
            .map_err(|e| ExtractionError::Cache(format!("{}: {e}", path.display())))?;
        Ok(Some(entry))
    }

    /// Stores an entry unless one with the same key already exists. Entries
    /// are immutable once written.
    pub fn put(&self, entry: &CacheEntry) -> Result<bool, ExtractionError> {
        let path = self.path_for(&entry.key);
        if path.exists() {
            return Ok(false);
        }
        let parent = path.parent().expect("sharded path has a parent");
        fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
        let mut tmp = tempfile::NamedTempFile::new_in(parent).map_err(|e| io_err(parent, e))?;
        let body = serde_json::to_vec_pretty(entry).expect("entry serializes");
        tmp.write_all(&body).map_err(|e| io_err(tmp.path(), e))?;
        tmp.as_file()
            .sync_all()
            .map_err(|e| io_err(tmp.path(), e))?;
        match tmp.persist_noclobber(&path) {
            Ok(_) => Ok(true),
            // Another worker won the race with identical content.
            Err(e) if e.error.kind() == std::io::ErrorKind::AlreadyExists => Ok(false),
            Err(e) => Err(io_err(&path, e.error)),
        }
    }

    pub fn entries(&self) -> Result<Vec<CacheEntry>, ExtractionError> {
        let mut out = Vec::new();
        let shards = match fs::read_dir(&self.dir) {
            Ok(s) => s,
            Err(e) => return Err(io_err(&self.dir, e)),
        };
        for shard in shards {
            let shard = shard.map_err(|e| io_err(&self.dir, e))?.path();
            if !shard.is_dir() {
                continue;
            }
            for f in fs::read_dir(&shard).map_err(|e| io_err(&shard, e))? {
                let f = f.map_err(|e| io_err(&shard, e))?.path();
                if f.extension().is_some_and(|x| x == "json") {
                    let text = fs::read_to_string(&f).map_err(|e| io_err(&f, e))?;
                    let entry: CacheEntry = serde_json::from_str(&text)
                        .map_err(|e| ExtractionError::Cache(format!("{}: {e}", f.display())))?;
                    out.push(entry);
                }
            }
        }
        out.sort_by(|a, b| a.key.cmp(&b.key));
        Ok(out)
    }

    /// Writes every entry whose key is in `keys` (or all entries when `keys`
    /// is `None`) as a key-sorted JSONL pack.
    pub fn export_pack(
        &self,
        path: &Path,
        keys: Option<&[String]>,
    ) -> Result<usize, ExtractionError> {
        let mut entries = match keys {
            None => self.entries()?,
            Some(keys) => {
                let mut v = Vec::with_capacity(keys.len());
                for k in keys {
                    if let Some(e) = self.get(k)? {
                        v.push(e);
                    }
                }
                v
            }
        };
        entries.sort_by(|a, b| a.key.cmp(&b.key));
        entries.dedup_by(|a, b| a.key == b.key);
        write_pack(path, &entries)?;
        Ok(entries.len())
    }

    /// Seeds the cache from a pack. Returns the number of new entries.
    pub fn import_pack(&self, path: &Path) -> Result<usize, ExtractionError> {
        let mut added = 0;
        for entry in read_pack(path)? {
            if self.put(&entry)? {
                added += 1;
            }
        }
        Ok(added)
    }
}

pub fn write_pack(path: &Path, entries: &[CacheEntry]) -> Result<(), ExtractionError> {
    let mut out = std::io::BufWriter::new(File::create(path).map_err(|e| io_err(path, e))?);
    for e in entries {
        let line = serde_json::to_string(e).expect("entry serializes");
        writeln!(out, "{line}").map_err(|err| io_err(path, err))?;
    }
    out.flush().map_err(|e| io_err(path, e))
}

pub fn read_pack(path: &Path) -> Result<Vec<CacheEntry>, ExtractionError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: CacheEntry = serde_json::from_str(&line).map_err(|e| {
            ExtractionError::Cache(format!("{} line {}: {e}", path.display(), i + 1))
        })?;
        if !entry.key_is_valid() {
            return Err(ExtractionError::Cache(format!(
                "{} line {}: key does not match entry content",
                path.display(),
                i + 1
            )));
        }
        out.push(entry);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const P: DecodingParams = DecodingParams {
        temperature: 0.0,
        max_new_tokens: 8,
    };

    #[test]
    fn key_changes_with_every_component() {
        let base = cache_key("m", &P, "prompt");
        assert_ne!(base, cache_key("m2", &P, "prompt"));
        assert_ne!(
            base,
            cache_key(
                "m",
                &DecodingParams {
                    temperature: 0.1,
                    ..P
                },
                "prompt"
            )
        );
        assert_ne!(
            base,
            cache_key(
                "m",
                &DecodingParams {
                    max_new_tokens: 9,
                    ..P
                },
                "prompt"
            )
        );
        assert_ne!(base, cache_key("m", &P, "prompT"));
    }

    #[test]
    fn put_get_and_pack_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::open(dir.path().join("c")).unwrap();
        let e = CacheEntry::new("m", P, "hello", "Yes");
        assert!(cache.put(&e).unwrap());
        assert!(!cache.put(&e).unwrap());
        assert_eq!(cache.get(&e.key).unwrap(), Some(e.clone()));
        assert_eq!(cache.get(&"ab".repeat(32)).unwrap(), None);

        let pack = dir.path().join("pack.jsonl");
        assert_eq!(cache.export_pack(&pack, None).unwrap(), 1);
        let other = ResponseCache::open(dir.path().join("d")).unwrap();
        assert_eq!(other.import_pack(&pack).unwrap(), 1);
        assert_eq!(other.entries().unwrap(), vec![e]);
        // no temp files left behind
        for shard in std::fs::read_dir(cache.dir()).unwrap() {
            for f in std::fs::read_dir(shard.unwrap().path()).unwrap() {
                assert_eq!(f.unwrap().path().extension().unwrap(), "json");
            }
        }
    }

    #[test]
    fn tampered_pack_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut e = CacheEntry::new("m", P, "hello", "Yes");
        e.prompt.push('!');
        let pack = dir.path().join("pack.jsonl");
        write_pack(&pack, &[e]).unwrap();
        assert!(read_pack(&pack).is_err());
    }

    proptest! {
        #[test]
        fn one_byte_prompt_change_changes_key(prompt in "[ -~]{1,64}", idx in any::<prop::sample::Index>()) {
            let mut bytes = prompt.clone().into_bytes();
            let i = idx.index(bytes.len());
            bytes[i] = if bytes[i] == b'a' { b'b' } else { b'a' };
            let changed = String::from_utf8(bytes).unwrap();
            prop_assume!(changed != prompt);
            prop_assert_ne!(cache_key("m", &P, &prompt), cache_key("m", &P, &changed));
        }
    }
}
