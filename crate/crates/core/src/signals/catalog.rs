use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

const DEFAULT_CATALOG: &str = include_str!("../../catalog/default_signals.toml");

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("cannot read catalog {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("catalog is not valid TOML: {0}")]
    Parse(String),
    #[error("catalog is empty")]
    Empty,
    #[error("signal #{index} ({id:?}): duplicate id")]
    DuplicateId { index: usize, id: String },
    #[error("signal #{index} ({id:?}): {reason}")]
    Invalid {
        index: usize,
        id: String,
        reason: String,
    },
}

/// One credibility signal. A "Yes" answer to its question means the
/// article shows reduced credibility.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignalSpec {
    pub id: String,
    pub name: String,
    pub definition: String,
    pub question: String,
    /// Column position in answer matrices.
    #[serde(skip)]
    pub order: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct CatalogFile {
    #[serde(default)]
    signal: Vec<SignalSpec>,
}

pub fn default_catalog() -> Vec<SignalSpec> {
    parse_catalog(DEFAULT_CATALOG).expect("bundled catalog is valid")
}

/// Reads a catalog file; with no path, returns the bundled default.
pub fn load_catalog(path: Option<&Path>) -> Result<Vec<SignalSpec>, CatalogError> {
    match path {
        None => Ok(default_catalog()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|source| CatalogError::Io {
                path: p.display().to_string(),
                source,
            })?;
            parse_catalog(&text)
        }
    }
}

pub fn parse_catalog(text: &str) -> Result<Vec<SignalSpec>, CatalogError> {
    let file: CatalogFile = toml::from_str(text).map_err(|e| CatalogError::Parse(e.to_string()))?;
    let mut specs = file.signal;
    for (i, s) in specs.iter_mut().enumerate() {
        s.order = i;
    }
    validate(&specs)?;
    Ok(specs)
}

pub fn catalog_to_toml(specs: &[SignalSpec]) -> String {
    toml::to_string(&CatalogFile {
        signal: specs.to_vec(),
    })
    .expect("catalog serializes")
}

pub fn validate(specs: &[SignalSpec]) -> Result<(), CatalogError> {
    if specs.is_empty() {
        return Err(CatalogError::Empty);
    }
    let mut ids = HashSet::new();
    for (index, s) in specs.iter().enumerate() {
        let invalid = |reason: &str| CatalogError::Invalid {
            index,
            id: s.id.clone(),
            reason: reason.to_string(),
        };
        if s.id.is_empty()
            || !s
                .id
                .chars()
                .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
        {
            return Err(invalid("id must be non-empty snake_case"));
        }
        if s.id == super::ZERO_SHOT_ID {
            return Err(invalid("id is reserved"));
        }
        if !ids.insert(s.id.as_str()) {
            return Err(CatalogError::DuplicateId {
                index,
                id: s.id.clone(),
            });
        }
        let q = s.question.trim();
        if q.is_empty() {
            return Err(invalid("missing question"));
        }
        if !q.ends_with('?') {
            return Err(invalid("question must end with '?'"));
        }
        if q.contains('\n') {
            return Err(invalid("question must be a single line"));
        }
    }
    Ok(())
}
