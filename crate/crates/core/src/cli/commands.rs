use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use super::config::{BackendKind, DatasetConfig, RunConfig};
use super::manifest::ManifestBuilder;
use crate::analysis::{
    ablation, aggregate_associations, answer_distribution, associations, average_frequencies,
    distribution_map, summarize_ablations, tp_fn_frequencies, write_ablation_csv,
    write_aggregated_csv, write_associations_csv, write_frequencies_csv, AblationResult,
    DatasetAssociations, Group,
};
use crate::corpus::{load_dataset, make_folds, truncate_for_context, Dataset, Label};
use crate::evaluation::{
    cv_predictions, derive_seed, evaluate_zeroshot, run_cross_domain, run_cv, EvaluationReport,
    Method,
};
use crate::extraction::{
    cache_key, extract_signals, extract_zeroshot, AnswerMatrix, CompletionBackend, ExtractionError,
    MockBackend, OpenAiBackend, ReplayBackend, ResponseCache, ZeroShotPredictions,
};
use crate::label_model::{answers_to_votes, fit, predict_proba, VoteMatrix};
use crate::signals::{build_signal_prompt, build_zeroshot_prompt, load_catalog};

/// Shared state for one invocation.
pub struct Ctx {
    pub cfg: RunConfig,
    pub only: Vec<String>,
}

impl Ctx {
    fn out(&self) -> &Path {
        &self.cfg.out_dir
    }

    fn dataset_dir(&self, name: &str) -> Result<PathBuf> {
        let dir = self.out().join(name);
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(dir)
    }

    fn manifest(&self, command: &str) -> Result<ManifestBuilder> {
        std::fs::create_dir_all(self.out())
            .with_context(|| format!("creating {}", self.out().display()))?;
        Ok(ManifestBuilder::new(
            command,
            self.out(),
            serde_json::to_value(&self.cfg)?,
        ))
    }

    fn load(&self, d: &DatasetConfig) -> Result<Dataset> {
        load_dataset(&d.path, &d.load_options(), &d.name, d.domain)
            .with_context(|| format!("loading dataset {}", d.name))
    }

    fn matrix_path(&self, name: &str) -> PathBuf {
        self.out().join(name).join("matrix.csv")
    }

    fn zeroshot_path(&self, name: &str) -> PathBuf {
        self.out().join(name).join("zeroshot.csv")
    }

    /// The dataset's answer matrix, aligned with the dataset's article order.
    fn matrix(&self, d: &Dataset) -> Result<AnswerMatrix> {
        let path = self.matrix_path(&d.name);
        if !path.is_file() {
            bail!(
                "no answer matrix for {} at {}: run extract first",
                d.name,
                path.display()
            );
        }
        let am = AnswerMatrix::read_csv(&path, &d.name)?;
        if am.article_ids != d.ids() {
            bail!(
                "answer matrix for {} does not match the dataset's articles; rerun extract",
                d.name
            );
        }
        Ok(am)
    }

    fn labels(&self, d: &Dataset, what: &str) -> Result<Vec<Label>> {
        d.labels().ok_or_else(|| {
            anyhow!(
                "dataset {} is unlabeled: {what} requires gold labels",
                d.name
            )
        })
    }
}

fn write_json(path: &Path, value: &impl Serialize, m: &mut ManifestBuilder) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    m.record(path);
    Ok(())
}

fn backend(ctx: &Ctx, d: &Dataset) -> Box<dyn CompletionBackend> {
    let cfg = &ctx.cfg;
    match cfg.extraction.backend {
        BackendKind::Http => Box::new(OpenAiBackend::new(&cfg.backend)),
        BackendKind::Replay => Box::new(ReplayBackend),
        BackendKind::Mock => {
            let b = MockBackend::from_config(cfg.mock.mock_config());
            Box::new(if cfg.mock.plant_labels {
                b.with_truth(d)
            } else {
                b
            })
        }
    }
}

pub fn extract(ctx: &Ctx) -> Result<()> {
    let cfg = &ctx.cfg;
    let catalog = load_catalog(cfg.catalog.as_deref()).context("loading signal catalog")?;
    let cache = ResponseCache::open(&cfg.cache_dir)?;
    let mut m = ctx.manifest("extract")?;
    let opts = cfg.extraction.options();
    let params = cfg.backend.decoding();
    for dc in cfg.select(&ctx.only)? {
        let d = ctx.load(dc)?;
        let dir = ctx.dataset_dir(&d.name)?;
        let b = backend(ctx, &d);
        log::info!(
            "extracting {} signals for {} articles of {}",
            catalog.len(),
            d.len(),
            d.name
        );
        let (am, stats) =
            match extract_signals(&d, &catalog, &cfg.backend, Some(&cache), b.as_ref(), &opts) {
                Ok(r) => r,
                Err(e) => {
                    if let ExtractionError::Incomplete {
                        completed, total, ..
                    } = &e
                    {
                        let progress = dir.join("extract-progress.json");
                        let body = serde_json::json!({ "completed": completed, "total": total });
                        std::fs::write(&progress, serde_json::to_string_pretty(&body)? + "\n")?;
                        log::error!("partial progress written to {}", progress.display());
                    }
                    return Err(e).with_context(|| format!("extracting {}", d.name));
                }
            };
        let _ = std::fs::remove_file(dir.join("extract-progress.json"));
        let path = ctx.matrix_path(&d.name);
        am.write_csv(&path)?;
        m.record(&path);
        m.note(format!("{}.signals", d.name), stats);

        let mut keys: Vec<String> = Vec::with_capacity(d.len() * (catalog.len() + 1));
        for a in &d.articles {
            let t = truncate_for_context(a, opts.context_budget);
            for s in &catalog {
                keys.push(cache_key(
                    &cfg.backend.model,
                    &params,
                    &build_signal_prompt(&t.article, s).text,
                ));
            }
            if cfg.extraction.zeroshot {
                keys.push(cache_key(
                    &cfg.backend.model,
                    &params,
                    &build_zeroshot_prompt(&t.article).text,
                ));
            }
        }

        if cfg.extraction.zeroshot {
            let (zs, stats) = extract_zeroshot(&d, &cfg.backend, Some(&cache), b.as_ref(), &opts)
                .with_context(|| format!("zero-shot extraction for {}", d.name))?;
            let path = ctx.zeroshot_path(&d.name);
            zs.write_csv(&path)?;
            m.record(&path);
            m.note(format!("{}.zeroshot", d.name), stats);
        }

        let pack = dir.join("pack.jsonl");
        cache.export_pack(&pack, Some(&keys))?;
        m.record(&pack);
        println!("{}: {} x {} answers", d.name, am.rows(), am.cols());
    }
    m.finish()?;
    Ok(())
}

fn method_table_row(name: &str, r: &EvaluationReport) -> String {
    let rate = |x: Option<f64>| x.map(|v| format!("{v:.2}")).unwrap_or_else(|| "-".into());
    format!(
        "{:<16} {:<10} {:>14}   FNR {}  FPR {}",
        name,
        r.protocol.method.as_str(),
        r.summary_cell(),
        rate(r.fnr),
        rate(r.fpr)
    )
}

pub fn evaluate(ctx: &Ctx, method: Method) -> Result<()> {
    let cfg = &ctx.cfg;
    let mut m = ctx.manifest(&format!("evaluate-{}", method.as_str()))?;
    println!("{:<16} {:<10} {:>14}", "dataset", "method", "F1-macro");
    for dc in cfg.select(&ctx.only)? {
        let d = ctx.load(dc)?;
        let labels = ctx.labels(&d, "evaluation")?;
        let dir = ctx.dataset_dir(&d.name)?;
        let folds = || make_folds(&d, cfg.folds.k, cfg.seed());
        let report = match method {
            Method::Zeroshot => {
                let path = ctx.zeroshot_path(&d.name);
                if !path.is_file() {
                    bail!(
                        "no zero-shot predictions for {} at {}: run extract first",
                        d.name,
                        path.display()
                    );
                }
                let zs = ZeroShotPredictions::read_csv(&path, &d.name)?;
                if zs.article_ids != d.ids() {
                    bail!(
                        "zero-shot predictions for {} do not match the dataset; rerun extract",
                        d.name
                    );
                }
                evaluate_zeroshot(&zs.predictions, &labels, Some(&folds()?), &d.name)?
            }
            _ => {
                let vm = answers_to_votes(&ctx.matrix(&d)?);
                let report = run_cv(&vm, &labels, &folds()?, method, &cfg.model, &d.name)?;
                if method == Method::Pastel {
                    write_full_fit(ctx, &vm, &dir, &mut m)?;
                }
                report
            }
        };
        write_json(
            &dir.join(format!("eval-{}.json", method.as_str())),
            &report,
            &mut m,
        )?;
        println!("{}", method_table_row(&d.name, &report));
    }
    m.finish()?;
    Ok(())
}

/// Fits the label model on every article and writes its parameters and
/// weak labels.
fn write_full_fit(ctx: &Ctx, vm: &VoteMatrix, dir: &Path, m: &mut ManifestBuilder) -> Result<()> {
    let cfg = &ctx.cfg;
    let c = cfg.model.correlations(vm)?;
    let params = fit(
        vm,
        &c,
        &cfg.model.fit_config(derive_seed(cfg.seed(), "full")),
    )?;
    let p = dir.join("params.json");
    params.write_json(&p)?;
    m.record(&p);
    let wl = predict_proba(&params, vm)?;
    let p = dir.join("weak_labels.csv");
    wl.write_csv(&p)?;
    m.record(&p);
    Ok(())
}

pub fn crossdomain(
    ctx: &Ctx,
    train: Option<&str>,
    test: Option<&str>,
    all: bool,
    method: Method,
) -> Result<()> {
    let cfg = &ctx.cfg;
    if method == Method::Zeroshot {
        bail!("cross-domain evaluation needs a trained method (pastel or majority)");
    }
    let pairs: Vec<(String, String)> = if all {
        let names: Vec<String> = cfg
            .select(&ctx.only)?
            .iter()
            .map(|d| d.name.clone())
            .collect();
        if names.len() < 2 {
            bail!("--all needs at least two datasets");
        }
        names
            .iter()
            .flat_map(|a| {
                names
                    .iter()
                    .filter(move |b| *b != a)
                    .map(move |b| (a.clone(), b.clone()))
            })
            .collect()
    } else {
        match (train, test) {
            (Some(a), Some(b)) => vec![(a.to_string(), b.to_string())],
            _ => bail!("crossdomain needs --train and --test, or --all"),
        }
    };
    let mut m = ctx.manifest(&format!("crossdomain-{}", method.as_str()))?;
    let dir = ctx.dataset_dir("crossdomain")?;
    let mut cache: BTreeMap<String, (VoteMatrix, Option<Vec<Label>>)> = BTreeMap::new();
    for (a, b) in &pairs {
        for name in [a, b] {
            if !cache.contains_key(name) {
                let d = ctx.load(cfg.dataset(name)?)?;
                let vm = answers_to_votes(&ctx.matrix(&d)?);
                cache.insert(name.clone(), (vm, d.labels()));
            }
        }
        let (train_vm, _) = &cache[a];
        let (test_vm, test_labels) = &cache[b];
        let labels = test_labels
            .as_ref()
            .ok_or_else(|| anyhow!("dataset {b} is unlabeled: scoring requires gold labels"))?;
        if train_vm.col_ids != test_vm.col_ids {
            bail!("catalog mismatch: {a} and {b} were extracted with different signals");
        }
        let r = run_cross_domain(
            train_vm,
            a,
            test_vm,
            labels,
            b,
            method,
            &cfg.model,
            cfg.seed(),
        )?;
        write_json(
            &dir.join(format!("{a}__{b}-{}.json", method.as_str())),
            &r,
            &mut m,
        )?;
        println!("train {a:<14} -> test {b:<14} {:.2}", r.f1_mean);
    }
    m.finish()?;
    Ok(())
}

pub fn analyze(ctx: &Ctx) -> Result<()> {
    let cfg = &ctx.cfg;
    let mut m = ctx.manifest("analyze")?;
    let root = ctx.dataset_dir("analysis")?;
    let mut per_dataset = Vec::new();
    let mut freqs = Vec::new();
    for dc in cfg.select(&ctx.only)? {
        let d = ctx.load(dc)?;
        let labels = d.labels().ok_or_else(|| {
            anyhow!(
                "dataset {} is unlabeled: analysis requires gold labels",
                d.name
            )
        })?;
        let am = ctx.matrix(&d)?;
        let dir = root.join(&d.name);
        std::fs::create_dir_all(&dir)?;

        let assoc = associations(&am, &labels)?;
        let p = dir.join("associations.csv");
        write_associations_csv(&assoc, &p)?;
        m.record(&p);
        write_json(&dir.join("associations.json"), &assoc, &mut m)?;

        let dist = answer_distribution(&am, &labels)?;
        write_json(
            &dir.join("distribution.json"),
            &distribution_map(&dist),
            &mut m,
        )?;

        let folds = make_folds(&d, cfg.folds.k, cfg.seed())?;
        let preds = cv_predictions(&answers_to_votes(&am), &folds, Method::Pastel, &cfg.model)?;
        let f = tp_fn_frequencies(&am, &preds, &labels)?;
        let p = dir.join("frequencies.csv");
        write_frequencies_csv(&f, &p)?;
        m.record(&p);
        write_json(&dir.join("frequencies.json"), &f, &mut m)?;

        let rejected = assoc.iter().filter(|a| a.reject).count();
        println!(
            "{}: {rejected} of {} signals associated at p < 0.05",
            d.name,
            assoc.len()
        );
        per_dataset.push(DatasetAssociations {
            dataset: d.name.clone(),
            domain: d.domain,
            rows: assoc,
        });
        freqs.push(f);
    }

    let mut aggregated = Vec::new();
    for g in Group::ALL {
        if per_dataset.iter().any(|d| g.contains(d.domain)) {
            aggregated.extend(aggregate_associations(&per_dataset, g)?);
        }
    }
    let p = root.join("aggregated.csv");
    write_aggregated_csv(&aggregated, &p)?;
    m.record(&p);
    write_json(&root.join("aggregated.json"), &aggregated, &mut m)?;

    let mean = average_frequencies(&freqs)?;
    let p = root.join("frequencies-mean.csv");
    write_frequencies_csv(&mean, &p)?;
    m.record(&p);
    write_json(&root.join("frequencies-mean.json"), &mean, &mut m)?;
    let show = |x: Option<f64>| {
        x.map(|v| format!("{v:.2}"))
            .unwrap_or_else(|| "undefined".into())
    };
    println!(
        "trigger totals: TP {} / FN {}",
        show(mean.tp_total),
        show(mean.fn_total)
    );
    m.finish()?;
    Ok(())
}

pub fn ablate(ctx: &Ctx) -> Result<()> {
    let cfg = &ctx.cfg;
    let mut m = ctx.manifest("ablate")?;
    let dir = ctx.dataset_dir("ablation")?;
    let mut results: Vec<(crate::corpus::DomainTag, AblationResult)> = Vec::new();
    for dc in cfg.select(&ctx.only)? {
        let d = ctx.load(dc)?;
        let labels = d.labels().ok_or_else(|| {
            anyhow!(
                "dataset {} is unlabeled: analysis requires gold labels",
                d.name
            )
        })?;
        let vm = answers_to_votes(&ctx.matrix(&d)?);
        let folds = make_folds(&d, cfg.folds.k, cfg.seed())?;

        let digest = {
            let mut h = Sha256::new();
            h.update(cfg.model_fingerprint());
            h.update(std::fs::read(ctx.matrix_path(&d.name))?);
            hex::encode(&h.finalize()[..8])
        };
        let cached = dir.join(format!("baseline-{}-{digest}.json", d.name));
        let baseline: Option<EvaluationReport> = match std::fs::read_to_string(&cached) {
            Ok(text) => match serde_json::from_str(&text) {
                Ok(r) => {
                    log::info!("reusing cached baseline {}", cached.display());
                    m.note(format!("{}.baseline_cached", d.name), true);
                    Some(r)
                }
                Err(e) => {
                    log::warn!(
                        "ignoring unreadable cached baseline {}: {e}",
                        cached.display()
                    );
                    None
                }
            },
            Err(_) => None,
        };
        let reused = baseline.is_some();
        let r = ablation(&vm, &labels, &folds, &cfg.model, &d.name, baseline)?;
        if !reused {
            write_json(&cached, &r.baseline, &mut m)?;
        } else {
            m.record(&cached);
        }
        write_json(&dir.join(format!("{}.json", d.name)), &r, &mut m)?;
        println!(
            "{}: baseline {} over {} removals",
            d.name,
            r.baseline.summary_cell(),
            r.rows.len()
        );
        results.push((d.domain, r));
    }
    let summary = summarize_ablations(&results)?;
    let p = dir.join("summary.csv");
    write_ablation_csv(&summary, &p)?;
    m.record(&p);
    write_json(&dir.join("summary.json"), &summary, &mut m)?;
    for row in &summary {
        let v = row
            .overall
            .map(|x| format!("{x:+.2}%"))
            .unwrap_or_else(|| "undefined".into());
        println!("  without {:<28} {v}", row.removed);
    }
    m.finish()?;
    Ok(())
}

fn read_report(path: &Path) -> Option<EvaluationReport> {
    serde_json::from_str(&std::fs::read_to_string(path).ok()?).ok()
}

/// Collects whatever reports exist into a Markdown summary.
pub fn report(ctx: &Ctx) -> Result<()> {
    let cfg = &ctx.cfg;
    let names: Vec<String> = cfg
        .select(&ctx.only)?
        .iter()
        .map(|d| d.name.clone())
        .collect();
    let mut out = String::from("# Results\n\n## Within-dataset F1-macro\n\n| method |");
    for n in &names {
        write!(out, " {n} |")?;
    }
    out.push_str("\n|---|");
    out.push_str(&"---|".repeat(names.len()));
    out.push('\n');
    let mut found = 0;
    for method in [Method::Zeroshot, Method::Majority, Method::Pastel] {
        write!(out, "| {} |", method.as_str())?;
        for n in &names {
            match read_report(
                &ctx.out()
                    .join(n)
                    .join(format!("eval-{}.json", method.as_str())),
            ) {
                Some(r) => {
                    found += 1;
                    write!(out, " {} |", r.summary_cell())?
                }
                None => out.push_str(" - |"),
            }
        }
        out.push('\n');
    }

    let cross = ctx.out().join("crossdomain");
    if cross.is_dir() {
        out.push_str("\n## Cross-dataset F1-macro (rows train, columns test)\n\n| train |");
        for n in &names {
            write!(out, " {n} |")?;
        }
        out.push_str("\n|---|");
        out.push_str(&"---|".repeat(names.len()));
        out.push('\n');
        for a in &names {
            write!(out, "| {a} |")?;
            for b in &names {
                match read_report(&cross.join(format!("{a}__{b}-pastel.json"))) {
                    Some(r) => {
                        found += 1;
                        write!(out, " {:.2} |", r.f1_mean)?
                    }
                    None => out.push_str(" - |"),
                }
            }
            out.push('\n');
        }
    }

    let summary = ctx.out().join("ablation").join("summary.csv");
    if summary.is_file() {
        found += 1;
        out.push_str("\n## Ablation (percent change in F1-macro)\n\n");
        let mut rdr = csv::Reader::from_path(&summary)?;
        let header: Vec<String> = rdr.headers()?.iter().map(String::from).collect();
        writeln!(out, "| {} |", header.join(" | "))?;
        writeln!(out, "|{}", "---|".repeat(header.len()))?;
        for rec in rdr.records() {
            writeln!(out, "| {} |", rec?.iter().collect::<Vec<_>>().join(" | "))?;
        }
    }
    if found == 0 {
        bail!(
            "no reports found under {}: run evaluate first",
            ctx.out().display()
        );
    }
    let path = ctx.out().join("report.md");
    std::fs::write(&path, &out).with_context(|| format!("writing {}", path.display()))?;
    print!("{out}");
    Ok(())
}
