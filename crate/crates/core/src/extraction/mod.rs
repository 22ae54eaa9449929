//! Runs signal and zero-shot prompts against a completion backend and
//! assembles the per-dataset answer matrix.
//!
//! Every cell is an independent single-turn request. Cells fan out over a
//! fixed number of worker threads; the matrix is assembled by (row, column)
//! so the result does not depend on completion order. Each fresh completion
//! lands in the cache before it is used, which makes interrupted runs
//! resumable.

mod backend;
mod cache;
mod http;
mod matrix;
mod mock;

use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use backend::{
    complete, BackendConfig, BackendError, Completion, CompletionBackend, ReplayBackend,
};
pub use cache::{cache_key, read_pack, write_pack, CacheEntry, DecodingParams, ResponseCache};
pub use http::OpenAiBackend;
pub use matrix::{AnswerMatrix, ZeroShotPredictions};
pub use mock::{MockBackend, MockConfig, MockProfile};

use crate::corpus::{truncate_for_context, Dataset};
use crate::signals::{
    build_signal_prompt, build_zeroshot_prompt, parse_answer, AnswerValue, PromptText, SignalSpec,
};

#[derive(Debug, Error)]
pub enum ExtractionError {
    #[error("invalid backend config: {0}")]
    Config(String),
    #[error("cache error: {0}")]
    Cache(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("backend failed after {} attempt(s): {}", attempts.len(), describe_attempts(attempts))]
    Backend { attempts: Vec<BackendError> },
    #[error("extraction aborted at cell ({article_id}, {signal_id}); {} of {total} cells completed: {source}", completed.len())]
    Incomplete {
        article_id: String,
        signal_id: String,
        /// (row, column) of every cell that finished before the abort.
        completed: Vec<(usize, usize)>,
        total: usize,
        #[source]
        source: Box<ExtractionError>,
    },
    #[error("nothing to extract: {0}")]
    Empty(String),
}

fn describe_attempts(attempts: &[BackendError]) -> String {
    attempts
        .iter()
        .enumerate()
        .map(|(i, e)| format!("#{}: {e}", i + 1))
        .collect::<Vec<_>>()
        .join("; ")
}

impl ExtractionError {
    /// True when the failure came from the completion backend rather than
    /// from configuration or local files.
    pub fn is_backend(&self) -> bool {
        match self {
            ExtractionError::Backend { .. } => true,
            ExtractionError::Incomplete { source, .. } => source.is_backend(),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtractOptions {
    /// Whitespace-token budget for title plus body.
    pub context_budget: usize,
}

impl Default for ExtractOptions {
    fn default() -> Self {
        Self {
            context_budget: 3000,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionStats {
    pub cells: usize,
    pub cache_hits: usize,
    pub backend_calls: usize,
    pub parse_warnings: usize,
    pub truncated_articles: usize,
}

struct CellResult {
    idx: usize,
    result: Result<Completion, ExtractionError>,
}

/// Completes `prompts` with up to `cfg.max_concurrency` workers. Returns
/// completions in input order, or the first failure by index together with
/// the indices that did finish.
fn run_cells(
    prompts: &[PromptText],
    cfg: &BackendConfig,
    cache: Option<&ResponseCache>,
    backend: &dyn CompletionBackend,
) -> Result<Vec<Completion>, (usize, ExtractionError, Vec<usize>)> {
    let next = AtomicUsize::new(0);
    let abort = AtomicBool::new(false);
    let workers = cfg.max_concurrency.clamp(1, prompts.len().max(1));

    let mut results: Vec<CellResult> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|_| {
                s.spawn(|| {
                    let mut local = Vec::new();
                    while !abort.load(Ordering::Relaxed) {
                        let idx = next.fetch_add(1, Ordering::Relaxed);
                        if idx >= prompts.len() {
                            break;
                        }
                        let result = complete(&prompts[idx], cfg, cache, backend);
                        if result.is_err() {
                            abort.store(true, Ordering::Relaxed);
                        }
                        local.push(CellResult { idx, result });
                    }
                    local
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("extraction worker panicked"))
            .collect()
    });
    results.sort_by_key(|c| c.idx);

    let mut done = Vec::with_capacity(results.len());
    let mut failure = None;
    let mut completions = Vec::with_capacity(prompts.len());
    for c in results {
        match c.result {
            Ok(comp) => {
                done.push(c.idx);
                completions.push(comp);
            }
            Err(e) => {
                if failure.is_none() {
                    failure = Some((c.idx, e));
                }
            }
        }
    }
    match failure {
        Some((idx, e)) => Err((idx, e, done)),
        None => Ok(completions),
    }
}

/// Builds the m×n answer matrix for `d` against `catalog`.
pub fn extract_signals(
    d: &Dataset,
    catalog: &[SignalSpec],
    cfg: &BackendConfig,
    cache: Option<&ResponseCache>,
    backend: &dyn CompletionBackend,
    opts: &ExtractOptions,
) -> Result<(AnswerMatrix, ExtractionStats), ExtractionError> {
    cfg.validate()?;
    if d.is_empty() {
        return Err(ExtractionError::Empty(format!(
            "dataset {} has no articles",
            d.name
        )));
    }
    if catalog.is_empty() {
        return Err(ExtractionError::Empty("catalog has no signals".into()));
    }
    let n = catalog.len();
    let mut stats = ExtractionStats::default();
    let mut prompts = Vec::with_capacity(d.len() * n);
    for a in &d.articles {
        let t = truncate_for_context(a, opts.context_budget);
        if t.truncated {
            stats.truncated_articles += 1;
        }
        if t.title_overflow {
            log::warn!("article {}: title alone exceeds the context budget", a.id);
        }
        prompts.extend(catalog.iter().map(|s| build_signal_prompt(&t.article, s)));
    }

    let completions = run_cells(&prompts, cfg, cache, backend).map_err(|(idx, e, done)| {
        ExtractionError::Incomplete {
            article_id: d.articles[idx / n].id.clone(),
            signal_id: catalog[idx % n].id.clone(),
            completed: done.into_iter().map(|i| (i / n, i % n)).collect(),
            total: prompts.len(),
            source: Box::new(e),
        }
    })?;

    let mut answers = Vec::with_capacity(completions.len());
    let mut warnings = Vec::with_capacity(completions.len());
    for c in &completions {
        stats.cells += 1;
        if c.cached {
            stats.cache_hits += 1;
        }
        stats.backend_calls += c.attempts as usize;
        let a = parse_answer(&c.text, true);
        if a.warning {
            stats.parse_warnings += 1;
        }
        answers.push(a.value);
        warnings.push(a.warning);
    }
    let mut m = AnswerMatrix::new(
        d.name.clone(),
        catalog.iter().map(|s| s.id.clone()).collect(),
        d.ids(),
        answers,
    )?;
    m.warnings = warnings;
    Ok((m, stats))
}

/// Asks the zero-shot veracity question once per article. Yes maps to 1;
/// anything unusable falls back to 0 with a warning.
pub fn extract_zeroshot(
    d: &Dataset,
    cfg: &BackendConfig,
    cache: Option<&ResponseCache>,
    backend: &dyn CompletionBackend,
    opts: &ExtractOptions,
) -> Result<(ZeroShotPredictions, ExtractionStats), ExtractionError> {
    cfg.validate()?;
    if d.is_empty() {
        return Err(ExtractionError::Empty(format!(
            "dataset {} has no articles",
            d.name
        )));
    }
    let mut stats = ExtractionStats::default();
    let prompts: Vec<PromptText> = d
        .articles
        .iter()
        .map(|a| {
            let t = truncate_for_context(a, opts.context_budget);
            if t.truncated {
                stats.truncated_articles += 1;
            }
            build_zeroshot_prompt(&t.article)
        })
        .collect();
    let completions = run_cells(&prompts, cfg, cache, backend).map_err(|(idx, e, done)| {
        ExtractionError::Incomplete {
            article_id: d.articles[idx].id.clone(),
            signal_id: crate::signals::ZERO_SHOT_ID.to_string(),
            completed: done.into_iter().map(|i| (i, 0)).collect(),
            total: prompts.len(),
            source: Box::new(e),
        }
    })?;
    let mut predictions = Vec::with_capacity(completions.len());
    let mut warnings = Vec::with_capacity(completions.len());
    for c in &completions {
        stats.cells += 1;
        if c.cached {
            stats.cache_hits += 1;
        }
        stats.backend_calls += c.attempts as usize;
        let a = parse_answer(&c.text, false);
        if a.warning {
            stats.parse_warnings += 1;
        }
        predictions.push(u8::from(a.value == AnswerValue::Yes));
        warnings.push(a.warning);
    }
    Ok((
        ZeroShotPredictions {
            dataset: d.name.clone(),
            article_ids: d.ids(),
            predictions,
            warnings,
        },
        stats,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Article;
    use crate::signals::default_catalog;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::atomic::AtomicU32;

    fn dataset(m: usize) -> Dataset {
        let articles = (0..m)
            .map(|i| {
                Article::new(
                    format!("a{i}"),
                    format!("Title {i}"),
                    format!("Body of article {i}."),
                )
                .with_label((i % 2) as u8)
            })
            .collect();
        Dataset::new("toy", crate::corpus::DomainTag::Other, articles).unwrap()
    }

    fn fast_cfg() -> BackendConfig {
        BackendConfig {
            retry_backoff_ms: 0,
            ..Default::default()
        }
    }

    struct Counting<B> {
        inner: B,
        calls: AtomicU32,
    }

    impl<B: CompletionBackend> CompletionBackend for Counting<B> {
        fn complete(&self, p: &PromptText, c: &BackendConfig) -> Result<String, BackendError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            self.inner.complete(p, c)
        }
        fn name(&self) -> &str {
            "counting"
        }
    }

    #[test]
    fn cold_then_warm_cache() {
        let d = dataset(3);
        let cat = default_catalog();
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::open(dir.path()).unwrap();
        let b = Counting {
            inner: MockBackend::new(7),
            calls: AtomicU32::new(0),
        };
        let opts = ExtractOptions::default();
        let (m1, s1) = extract_signals(&d, &cat, &fast_cfg(), Some(&cache), &b, &opts).unwrap();
        assert_eq!(b.calls.load(Ordering::SeqCst), 57);
        assert_eq!(s1.backend_calls, 57);
        let (m2, s2) = extract_signals(&d, &cat, &fast_cfg(), Some(&cache), &b, &opts).unwrap();
        assert_eq!(b.calls.load(Ordering::SeqCst), 57);
        assert_eq!(s2.cache_hits, 57);
        assert_eq!(m1, m2);
    }

    #[test]
    fn concurrency_does_not_change_result() {
        let d = dataset(10);
        let cat = default_catalog();
        let b = MockBackend::new(3);
        let opts = ExtractOptions::default();
        let mut c1 = fast_cfg();
        c1.max_concurrency = 1;
        let mut c16 = fast_cfg();
        c16.max_concurrency = 16;
        let (a, _) = extract_signals(&d, &cat, &c1, None, &b, &opts).unwrap();
        let (z, _) = extract_signals(&d, &cat, &c16, None, &b, &opts).unwrap();
        assert_eq!(a, z);
    }

    #[test]
    fn planted_accuracy_is_recovered() {
        let d = dataset(6);
        let cat = default_catalog();
        let b = MockBackend::new(1)
            .with_default_profile(MockProfile {
                abstain_rate: 0.0,
                accuracy: Some(1.0),
                yes_rate: 0.5,
            })
            .with_truth(&d);
        let (m, _) = extract_signals(&d, &cat, &fast_cfg(), None, &b, &Default::default()).unwrap();
        for (r, a) in d.articles.iter().enumerate() {
            let want = if a.label == Some(1) {
                AnswerValue::Yes
            } else {
                AnswerValue::No
            };
            assert!(m.row(r).iter().all(|&v| v == want));
        }
    }

    #[test]
    fn full_abstention() {
        let d = dataset(2);
        let b = MockBackend::new(1).with_default_profile(MockProfile {
            abstain_rate: 1.0,
            ..Default::default()
        });
        let (m, s) = extract_signals(
            &d,
            &default_catalog(),
            &fast_cfg(),
            None,
            &b,
            &Default::default(),
        )
        .unwrap();
        assert!(m.answers.iter().all(|&v| v == AnswerValue::Unsure));
        assert_eq!(s.parse_warnings, 0);
    }

    #[test]
    fn zeroshot_maps_yes_to_one() {
        let d = dataset(4);
        let b = MockBackend::new(1)
            .with_default_profile(MockProfile {
                abstain_rate: 0.0,
                accuracy: Some(1.0),
                yes_rate: 0.5,
            })
            .with_truth(&d);
        let (p, _) = extract_zeroshot(&d, &fast_cfg(), None, &b, &Default::default()).unwrap();
        assert_eq!(p.predictions, d.labels().unwrap());
    }

    #[test]
    fn replay_reports_incomplete() {
        let d = dataset(1);
        let err = extract_signals(
            &d,
            &default_catalog(),
            &fast_cfg(),
            None,
            &ReplayBackend,
            &Default::default(),
        )
        .unwrap_err();
        assert!(matches!(err, ExtractionError::Incomplete { .. }));
        assert!(err.is_backend());
    }

    /// Serves `responses` in order, one per connection.
    fn serve(responses: Vec<(u16, String)>) -> (String, std::thread::JoinHandle<Vec<String>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!(
            "http://{}/v1/chat/completions",
            listener.local_addr().unwrap()
        );
        let h = std::thread::spawn(move || {
            let mut bodies = Vec::new();
            for (code, body) in responses {
                let (mut s, _) = listener.accept().unwrap();
                let mut r = BufReader::new(s.try_clone().unwrap());
                let mut len = 0usize;
                loop {
                    let mut line = String::new();
                    r.read_line(&mut line).unwrap();
                    let l = line.to_ascii_lowercase();
                    if let Some(v) = l.strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                }
                let mut buf = vec![0; len];
                r.read_exact(&mut buf).unwrap();
                bodies.push(String::from_utf8(buf).unwrap());
                write!(
                    s,
                    "HTTP/1.1 {code} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                )
                .unwrap();
            }
            bodies
        });
        (url, h)
    }

    fn ok_body(text: &str) -> String {
        serde_json::json!({"choices": [{"message": {"role": "assistant", "content": text}}]})
            .to_string()
    }

    #[test]
    fn http_backend_round_trip() {
        let (url, h) = serve(vec![(200, ok_body("Yes."))]);
        let cfg = BackendConfig {
            endpoint: url,
            ..fast_cfg()
        };
        let b = OpenAiBackend::new(&cfg);
        let p = PromptText {
            text: "hello".into(),
            signal_id: "s".into(),
        };
        assert_eq!(b.complete(&p, &cfg).unwrap(), "Yes.");
        let sent: serde_json::Value = serde_json::from_str(&h.join().unwrap()[0]).unwrap();
        assert_eq!(sent["messages"][0]["content"], "hello");
        assert_eq!(sent["temperature"], 0.0);
        assert_eq!(sent["max_tokens"], 8);
    }

    #[test]
    fn http_retries_server_errors() {
        let (url, h) = serve(vec![(503, "{}".into()), (200, ok_body("No"))]);
        let cfg = BackendConfig {
            endpoint: url,
            retries: 2,
            ..fast_cfg()
        };
        let b = OpenAiBackend::new(&cfg);
        let p = PromptText {
            text: "x".into(),
            signal_id: "s".into(),
        };
        let c = complete(&p, &cfg, None, &b).unwrap();
        assert_eq!((c.text.as_str(), c.attempts), ("No", 2));
        h.join().unwrap();
    }

    #[test]
    fn unreachable_endpoint_exhausts_retries() {
        let port = TcpListener::bind("127.0.0.1:0")
            .unwrap()
            .local_addr()
            .unwrap()
            .port();
        let cfg = BackendConfig {
            endpoint: format!("http://127.0.0.1:{port}/v1/chat/completions"),
            retries: 2,
            timeout_secs: 2,
            ..fast_cfg()
        };
        let b = OpenAiBackend::new(&cfg);
        let p = PromptText {
            text: "x".into(),
            signal_id: "s".into(),
        };
        match complete(&p, &cfg, None, &b) {
            Err(ExtractionError::Backend { attempts }) => assert_eq!(attempts.len(), 3),
            other => panic!("unexpected {other:?}"),
        }
    }
}
