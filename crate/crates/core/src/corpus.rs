//! Article datasets: loading, validation, summary statistics, stratified
//! folds and context-budget truncation.
//!
//! The canonical on-disk format is JSONL with one `{id, title, text, label}`
//! object per line. CSV sources are mapped onto the same fields through a
//! [`CsvColumns`] mapping, and string labels go through a [`LabelMap`].

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("no records in {0}")]
    NoRecords(String),
    #[error("malformed record at line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("duplicate article id {id:?} at line {line}")]
    DuplicateId { id: String, line: usize },
    #[error("mixed labeled and unlabeled records (line {line} breaks the pattern)")]
    MixedLabels { line: usize },
    #[error("dataset name must not be empty")]
    EmptyName,
    #[error("dataset is unlabeled")]
    Unlabeled,
    #[error("class {class} has {count} members, fewer than k = {k}")]
    ClassTooSmall { class: u8, count: usize, k: usize },
    #[error("fold count must be at least 2, got {0}")]
    BadFoldCount(usize),
    #[error("unknown domain tag {0:?}")]
    UnknownDomain(String),
    #[error("unknown dataset format {0:?}")]
    UnknownFormat(String),
}

/// Binary veracity label. `1` is misinformation, `0` is non-misinformation.
pub type Label = u8;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Article {
    pub id: String,
    pub title: String,
    #[serde(rename = "text")]
    pub body: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<Label>,
}

impl Article {
    pub fn new(id: impl Into<String>, title: impl Into<String>, body: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            title: title.into(),
            body: body.into(),
            label: None,
        }
    }

    pub fn with_label(mut self, label: Label) -> Self {
        self.label = Some(label);
        self
    }

    /// Whitespace token count of title and body together.
    pub fn token_count(&self) -> usize {
        count_tokens(&self.title) + count_tokens(&self.body)
    }
}

pub fn count_tokens(text: &str) -> usize {
    text.split_whitespace().count()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DomainTag {
    Politics,
    Entertainment,
    Other,
}

impl fmt::Display for DomainTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DomainTag::Politics => "politics",
            DomainTag::Entertainment => "entertainment",
            DomainTag::Other => "other",
        })
    }
}

impl FromStr for DomainTag {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "politics" => Ok(DomainTag::Politics),
            "entertainment" => Ok(DomainTag::Entertainment),
            "other" => Ok(DomainTag::Other),
            _ => Err(CorpusError::UnknownDomain(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    pub domain: DomainTag,
    pub articles: Vec<Article>,
}

impl Dataset {
    /// Builds a dataset, enforcing unique ids, non-empty content and
    /// all-or-nothing labeling.
    pub fn new(
        name: impl Into<String>,
        domain: DomainTag,
        articles: Vec<Article>,
    ) -> Result<Self, CorpusError> {
        let name = name.into();
        if name.trim().is_empty() {
            return Err(CorpusError::EmptyName);
        }
        if articles.is_empty() {
            return Err(CorpusError::NoRecords(name));
        }
        let mut seen = HashSet::with_capacity(articles.len());
        let labeled = articles[0].label.is_some();
        for (i, a) in articles.iter().enumerate() {
            let line = i + 1;
            if !seen.insert(a.id.as_str()) {
                return Err(CorpusError::DuplicateId {
                    id: a.id.clone(),
                    line,
                });
            }
            if a.title.trim().is_empty() && a.body.trim().is_empty() {
                return Err(CorpusError::Malformed {
                    line,
                    reason: "title and text are both empty".into(),
                });
            }
            if a.label.is_some() != labeled {
                return Err(CorpusError::MixedLabels { line });
            }
            if let Some(l) = a.label {
                if l > 1 {
                    return Err(CorpusError::Malformed {
                        line,
                        reason: format!("label must be 0 or 1, got {l}"),
                    });
                }
            }
        }
        Ok(Self {
            name,
            domain,
            articles,
        })
    }

    pub fn len(&self) -> usize {
        self.articles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.articles.is_empty()
    }

    pub fn is_labeled(&self) -> bool {
        self.articles.first().is_some_and(|a| a.label.is_some())
    }

    /// Gold labels in article order, or `None` for unlabeled datasets.
    pub fn labels(&self) -> Option<Vec<Label>> {
        self.articles.iter().map(|a| a.label).collect()
    }

    pub fn ids(&self) -> Vec<String> {
        self.articles.iter().map(|a| a.id.clone()).collect()
    }

    /// Writes the dataset in the canonical JSONL layout.
    pub fn write_jsonl(&self, path: &Path) -> Result<(), CorpusError> {
        let io_err = |source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut out = std::io::BufWriter::new(File::create(path).map_err(io_err)?);
        for a in &self.articles {
            let line = serde_json::to_string(a).expect("article serializes");
            writeln!(out, "{line}").map_err(io_err)?;
        }
        out.flush().map_err(io_err)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Jsonl,
    Csv,
}

impl FromStr for Format {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "jsonl" => Ok(Format::Jsonl),
            "csv" => Ok(Format::Csv),
            _ => Err(CorpusError::UnknownFormat(s.to_string())),
        }
    }
}

/// Maps source label vocabulary (e.g. `"fake"`, `"real"`) onto 1/0.
///
/// Matching is case-insensitive. The literal strings `"0"` and `"1"` are
/// always accepted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMap(pub BTreeMap<String, Label>);

impl Default for LabelMap {
    fn default() -> Self {
        let mut m = BTreeMap::new();
        for (k, v) in [
            ("fake", 1),
            ("false", 1),
            ("misinformation", 1),
            ("real", 0),
            ("true", 0),
            ("legit", 0),
            ("legitimate", 0),
        ] {
            m.insert(k.to_string(), v);
        }
        LabelMap(m)
    }
}

impl LabelMap {
    pub fn map(&self, raw: &str) -> Option<Label> {
        let key = raw.trim();
        match key {
            "0" => return Some(0),
            "1" => return Some(1),
            _ => {}
        }
        let lower = key.to_lowercase();
        self.0
            .iter()
            .find(|(k, _)| k.to_lowercase() == lower)
            .map(|(_, v)| *v)
    }
}

/// Column names in a CSV source for each canonical field.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CsvColumns {
    pub id: String,
    pub title: String,
    pub text: String,
    pub label: String,
}

impl Default for CsvColumns {
    fn default() -> Self {
        Self {
            id: "id".into(),
            title: "title".into(),
            text: "text".into(),
            label: "label".into(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoadOptions {
    pub format: Format,
    pub columns: CsvColumns,
    pub label_map: LabelMap,
}

pub fn load_dataset(
    path: &Path,
    opts: &LoadOptions,
    name: &str,
    domain: DomainTag,
) -> Result<Dataset, CorpusError> {
    let file = File::open(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let articles = match opts.format {
        Format::Jsonl => read_jsonl(BufReader::new(file), &opts.label_map)?,
        Format::Csv => read_csv(file, &opts.columns, &opts.label_map)?,
    };
    if articles.is_empty() {
        return Err(CorpusError::NoRecords(path.display().to_string()));
    }
    Dataset::new(name, domain, articles).map_err(|e| match e {
        // Dataset::new counts records from 1; CSV adds a header line.
        CorpusError::NoRecords(_) => CorpusError::NoRecords(path.display().to_string()),
        other => other,
    })
}

fn json_label(value: &serde_json::Value, map: &LabelMap) -> Result<Option<Label>, String> {
    use serde_json::Value;
    match value {
        Value::Null => Ok(None),
        Value::Number(n) => match n.as_u64() {
            Some(v @ 0..=1) => Ok(Some(v as Label)),
            _ => Err(format!("label must be 0 or 1, got {n}")),
        },
        Value::Bool(b) => Ok(Some(*b as Label)),
        Value::String(s) => map
            .map(s)
            .map(Some)
            .ok_or_else(|| format!("unmapped label {s:?}")),
        other => Err(format!("unsupported label value {other}")),
    }
}

fn json_string(
    obj: &serde_json::Map<String, serde_json::Value>,
    key: &str,
) -> Result<String, String> {
    match obj.get(key) {
        Some(serde_json::Value::String(s)) => Ok(s.clone()),
        Some(serde_json::Value::Number(n)) if key == "id" => Ok(n.to_string()),
        Some(serde_json::Value::Null) | None if key != "id" => Ok(String::new()),
        Some(other) => Err(format!("field {key:?} must be a string, got {other}")),
        None => Err(format!("missing field {key:?}")),
    }
}

fn read_jsonl<R: BufRead>(reader: R, map: &LabelMap) -> Result<Vec<Article>, CorpusError> {
    let mut out = Vec::new();
    let mut labeled: Option<bool> = None;
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| CorpusError::Malformed {
            line: line_no,
            reason: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |reason: String| CorpusError::Malformed {
            line: line_no,
            reason,
        };
        let value: serde_json::Value =
            serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
        let obj = value
            .as_object()
            .ok_or_else(|| malformed("record is not a JSON object".into()))?;
        let id = json_string(obj, "id").map_err(malformed)?;
        let title = json_string(obj, "title").map_err(malformed)?;
        let body = json_string(obj, "text").map_err(malformed)?;
        let label = match obj.get("label") {
            Some(v) => json_label(v, map).map_err(malformed)?,
            None => None,
        };
        check_record(&mut labeled, label.is_some(), &title, &body, line_no)?;
        out.push(Article {
            id,
            title,
            body,
            label,
        });
    }
    check_unique(&out, 0)?;
    Ok(out)
}

fn read_csv<R: std::io::Read>(
    reader: R,
    cols: &CsvColumns,
    map: &LabelMap,
) -> Result<Vec<Article>, CorpusError> {
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(false)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| CorpusError::Malformed {
            line: 1,
            reason: e.to_string(),
        })?
        .clone();
    let find = |name: &str| headers.iter().position(|h| h.trim() == name);
    let missing = |name: &str| CorpusError::Malformed {
        line: 1,
        reason: format!("header has no column {name:?}"),
    };
    let id_col = find(&cols.id).ok_or_else(|| missing(&cols.id))?;
    let title_col = find(&cols.title).ok_or_else(|| missing(&cols.title))?;
    let text_col = find(&cols.text).ok_or_else(|| missing(&cols.text))?;
    let label_col = find(&cols.label);

    let mut out = Vec::new();
    let mut labeled = None;
    for (i, rec) in rdr.records().enumerate() {
        let line_no = i + 2;
        let rec = rec.map_err(|e| CorpusError::Malformed {
            line: line_no,
            reason: e.to_string(),
        })?;
        let field = |c: usize| rec.get(c).unwrap_or_default().to_string();
        let label = match label_col.map(field) {
            Some(raw) if !raw.trim().is_empty() => {
                Some(map.map(&raw).ok_or_else(|| CorpusError::Malformed {
                    line: line_no,
                    reason: format!("unmapped label {raw:?}"),
                })?)
            }
            _ => None,
        };
        let (title, body) = (field(title_col), field(text_col));
        check_record(&mut labeled, label.is_some(), &title, &body, line_no)?;
        out.push(Article {
            id: field(id_col),
            title,
            body,
            label,
        });
    }
    check_unique(&out, 1)?;
    Ok(out)
}

fn check_record(
    labeled: &mut Option<bool>,
    has_label: bool,
    title: &str,
    body: &str,
    line: usize,
) -> Result<(), CorpusError> {
    if title.trim().is_empty() && body.trim().is_empty() {
        return Err(CorpusError::Malformed {
            line,
            reason: "title and text are both empty".into(),
        });
    }
    match labeled {
        None => *labeled = Some(has_label),
        Some(l) if *l != has_label => return Err(CorpusError::MixedLabels { line }),
        _ => {}
    }
    Ok(())
}

fn check_unique(articles: &[Article], header_lines: usize) -> Result<(), CorpusError> {
    let mut seen = HashSet::with_capacity(articles.len());
    for (i, a) in articles.iter().enumerate() {
        if a.id.trim().is_empty() {
            return Err(CorpusError::Malformed {
                line: i + 1 + header_lines,
                reason: "empty id".into(),
            });
        }
        if !seen.insert(a.id.as_str()) {
            return Err(CorpusError::DuplicateId {
                id: a.id.clone(),
                line: i + 1 + header_lines,
            });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsSummary {
    pub name: String,
    pub size: usize,
    /// Class counts keyed by label; empty for unlabeled datasets.
    pub class_counts: BTreeMap<Label, usize>,
    pub class_proportions: BTreeMap<Label, f64>,
    pub mean_tokens: f64,
}

pub fn dataset_stats(d: &Dataset) -> StatsSummary {
    let mut class_counts = BTreeMap::new();
    for a in &d.articles {
        if let Some(l) = a.label {
            *class_counts.entry(l).or_insert(0usize) += 1;
        }
    }
    let size = d.len();
    let class_proportions = class_counts
        .iter()
        .map(|(&k, &v)| (k, v as f64 / size as f64))
        .collect();
    let total_tokens: usize = d.articles.iter().map(Article::token_count).sum();
    StatsSummary {
        name: d.name.clone(),
        size,
        class_counts,
        class_proportions,
        mean_tokens: if size == 0 {
            0.0
        } else {
            total_tokens as f64 / size as f64
        },
    }
}

/// Assignment of every article to one of `k` folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    pub assignments: Vec<usize>,
}

impl FoldPlan {
    /// Row indices held out in `fold`, ascending.
    pub fn test_rows(&self, fold: usize) -> Vec<usize> {
        self.assignments
            .iter()
            .enumerate()
            .filter(|(_, &f)| f == fold)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn train_rows(&self, fold: usize) -> Vec<usize> {
        self.assignments
            .iter()
            .enumerate()
            .filter(|(_, &f)| f != fold)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn len(&self) -> usize {
        self.assignments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignments.is_empty()
    }
}

/// Stratified k-fold assignment from gold labels.
///
/// Each class is shuffled with a seeded ChaCha stream, then dealt round-robin
/// across folds. The deal for class 1 continues at the fold after the last
/// one used by class 0, so fold sizes differ by at most one.
pub fn make_folds_from_labels(
    labels: &[Label],
    k: usize,
    seed: u64,
) -> Result<FoldPlan, CorpusError> {
    if k < 2 {
        return Err(CorpusError::BadFoldCount(k));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignments = vec![0usize; labels.len()];
    let mut next_fold = 0usize;
    for class in [0u8, 1u8] {
        let mut members: Vec<usize> = labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == class)
            .map(|(i, _)| i)
            .collect();
        if members.len() < k {
            return Err(CorpusError::ClassTooSmall {
                class,
                count: members.len(),
                k,
            });
        }
        members.shuffle(&mut rng);
        for idx in members {
            assignments[idx] = next_fold;
            next_fold = (next_fold + 1) % k;
        }
    }
    Ok(FoldPlan {
        k,
        seed,
        assignments,
    })
}

pub fn make_folds(d: &Dataset, k: usize, seed: u64) -> Result<FoldPlan, CorpusError> {
    let labels = d.labels().ok_or(CorpusError::Unlabeled)?;
    make_folds_from_labels(&labels, k, seed)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Truncation {
    pub article: Article,
    /// Body tokens were dropped.
    pub truncated: bool,
    /// The title alone reaches the budget, so the body was emptied.
    pub title_overflow: bool,
}

/// Trims the body at a whitespace-token boundary so that title and body fit
/// in `budget` tokens. The title is always kept whole.
pub fn truncate_for_context(a: &Article, budget: usize) -> Truncation {
    assert!(budget > 0, "context budget must be positive");
    let title_tokens = count_tokens(&a.title);
    if a.token_count() <= budget {
        return Truncation {
            article: a.clone(),
            truncated: false,
            title_overflow: title_tokens > budget,
        };
    }
    let mut out = a.clone();
    if title_tokens >= budget {
        out.body.clear();
        return Truncation {
            article: out,
            truncated: true,
            title_overflow: true,
        };
    }
    let keep = budget - title_tokens;
    out.body = a
        .body
        .split_whitespace()
        .take(keep)
        .collect::<Vec<_>>()
        .join(" ");
    Truncation {
        article: out,
        truncated: true,
        title_overflow: false,
    }
}
