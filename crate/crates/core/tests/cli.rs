use std::path::{Path, PathBuf};
use std::process::Command;

use veracity::cli::{verify_manifest, RunManifest};
use veracity::corpus::{Article, Dataset, DomainTag};
use veracity::signals::{catalog_to_toml, default_catalog};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_veracity"));
    c.env("RUST_LOG", "warn");
    c
}

fn write_dataset(dir: &Path, name: &str, m: usize, labeled: bool) -> PathBuf {
    let articles = (0..m)
        .map(|i| {
            let a = Article::new(
                format!("{name}-{i}"),
                format!("{name} headline number {i}"),
                format!("Body of article {i} in {name}. It reports on events."),
            );
            if labeled {
                a.with_label(((i * 7 + 3) % 5 < 2) as u8)
            } else {
                a
            }
        })
        .collect();
    let d = Dataset::new(name, DomainTag::Politics, articles).unwrap();
    let path = dir.join(format!("{name}.jsonl"));
    d.write_jsonl(&path).unwrap();
    path
}

/// A config with a mock backend and the given datasets (name, domain).
fn write_config(dir: &Path, datasets: &[(&str, &str)], extra: &str) -> PathBuf {
    let mut text = String::from(
        "seed = 11\nout_dir = \"out\"\ncache_dir = \"cache\"\n\n[extraction]\nbackend = \"mock\"\n\n[mock]\nseed = 5\n\n[model]\nepochs = 200\n",
    );
    for (name, domain) in datasets {
        text.push_str(&format!(
            "\n[[datasets]]\nname = \"{name}\"\npath = \"{name}.jsonl\"\ndomain = \"{domain}\"\n"
        ));
    }
    text.push_str(extra);
    let path = dir.join("veracity.toml");
    std::fs::write(&path, text).unwrap();
    path
}

fn run(cfg: &Path, args: &[&str]) -> (i32, String, String) {
    let out = bin().arg("--config").arg(cfg).args(args).output().unwrap();
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn ok(cfg: &Path, args: &[&str]) -> String {
    let (code, stdout, stderr) = run(cfg, args);
    assert_eq!(code, 0, "{args:?} failed: {stderr}");
    stdout
}

fn manifest(dir: &Path, command: &str) -> RunManifest {
    let text =
        std::fs::read_to_string(dir.join("out").join(format!("manifest-{command}.json"))).unwrap();
    serde_json::from_str(&text).unwrap()
}

#[test]
fn extract_writes_matrix_and_reruns_from_cache() {
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), "tiny", 3, true);
    let cfg = write_config(dir.path(), &[("tiny", "politics")], "");
    ok(&cfg, &["extract"]);
    let matrix = std::fs::read_to_string(dir.path().join("out/tiny/matrix.csv")).unwrap();
    let lines: Vec<&str> = matrix.lines().collect();
    assert_eq!(lines.len(), 4);
    assert_eq!(lines[0].split(',').count(), 20);
    let cells: usize = lines[1..].iter().map(|l| l.split(',').count() - 1).sum();
    assert_eq!(cells, 57);
    let first = manifest(dir.path(), "extract");
    assert_eq!(first.stats["tiny.signals"]["cache_hits"], 0);

    ok(&cfg, &["extract"]);
    let second = manifest(dir.path(), "extract");
    assert_eq!(second.stats["tiny.signals"]["backend_calls"], 0);
    assert_eq!(second.stats["tiny.signals"]["cache_hits"], 57);
    assert_eq!(first.artifacts, second.artifacts);
    assert_eq!(
        std::fs::read_to_string(dir.path().join("out/tiny/matrix.csv")).unwrap(),
        matrix
    );
}

#[test]
fn invalid_catalog_names_the_entry() {
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), "tiny", 3, true);
    let mut cat = default_catalog();
    cat[4].id = cat[1].id.clone();
    std::fs::write(dir.path().join("bad.toml"), catalog_to_toml(&cat)).unwrap();
    let cfg = write_config(dir.path(), &[("tiny", "politics")], "");
    let (code, _, stderr) = run(&cfg, &["extract", "--set", "catalog=\"bad.toml\""]);
    assert_eq!(code, 1);
    assert!(stderr.contains(&cat[1].id), "{stderr}");
}

#[test]
fn unreachable_backend_exits_with_transport_code() {
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), "tiny", 3, true);
    let cfg = write_config(
        dir.path(),
        &[("tiny", "politics")],
        "\n[backend]\nendpoint = \"http://127.0.0.1:9/v1/chat/completions\"\nretries = 0\ntimeout_secs = 2\nmax_concurrency = 1\n",
    );
    let (code, _, stderr) = run(&cfg, &["extract", "--extraction.backend", "http"]);
    assert_eq!(code, 2, "{stderr}");
    assert!(dir.path().join("out/tiny/extract-progress.json").is_file());
}

#[test]
fn evaluation_requires_extraction_first() {
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), "d", 20, true);
    let cfg = write_config(dir.path(), &[("d", "politics")], "");
    for method in ["zeroshot", "pastel"] {
        let (code, _, stderr) = run(&cfg, &["evaluate", "--method", method]);
        assert_eq!(code, 1);
        assert!(stderr.contains("run extract first"), "{stderr}");
    }
}

#[test]
fn missing_seed_and_unknown_dataset_are_user_errors() {
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), "d", 20, true);
    let cfg = dir.path().join("noseed.toml");
    std::fs::write(&cfg, "[[datasets]]\nname = \"d\"\npath = \"d.jsonl\"\n").unwrap();
    let (code, _, stderr) = run(&cfg, &["evaluate"]);
    assert_eq!(code, 1);
    assert!(stderr.contains("seed"), "{stderr}");
    assert_eq!(
        run(&cfg, &["--seed", "3", "evaluate", "--dataset", "nope"]).0,
        1
    );
    assert_eq!(run(&cfg, &["evaluate", "--method", "bogus"]).0, 1);
}

#[test]
fn unlabeled_dataset_cannot_be_analyzed() {
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), "u", 5, false);
    let cfg = write_config(dir.path(), &[("u", "other")], "");
    ok(&cfg, &["extract", "--extraction.zeroshot", "false"]);
    for cmd in ["analyze", "ablate"] {
        let (code, _, stderr) = run(&cfg, &[cmd]);
        assert_eq!(code, 1);
        assert!(stderr.contains("analysis requires gold labels"), "{stderr}");
    }
}

fn pipeline(dir: &Path) {
    write_dataset(dir, "pol", 50, true);
    let cfg = write_config(dir, &[("pol", "politics")], "");
    ok(&cfg, &["extract"]);
    ok(&cfg, &["evaluate", "--method", "pastel"]);
    ok(&cfg, &["evaluate", "--method", "majority"]);
    ok(&cfg, &["evaluate", "--method", "zeroshot"]);
}

#[test]
fn evaluation_reports_share_folds() {
    let dir = tempfile::tempdir().unwrap();
    pipeline(dir.path());
    let read = |m: &str| -> serde_json::Value {
        serde_json::from_str(
            &std::fs::read_to_string(dir.path().join(format!("out/pol/eval-{m}.json"))).unwrap(),
        )
        .unwrap()
    };
    let (p, mv, zs) = (read("pastel"), read("majority"), read("zeroshot"));
    assert_eq!(p["folds"].as_array().unwrap().len(), 10);
    for (a, b) in p["folds"]
        .as_array()
        .unwrap()
        .iter()
        .zip(mv["folds"].as_array().unwrap())
    {
        assert_eq!(a["n_test"], b["n_test"]);
    }
    assert_eq!(zs["folds"].as_array().unwrap().len(), 10);
    assert!(dir.path().join("out/pol/params.json").is_file());
    assert!(dir.path().join("out/pol/weak_labels.csv").is_file());
    for cmd in [
        "extract",
        "evaluate-pastel",
        "evaluate-majority",
        "evaluate-zeroshot",
    ] {
        let path = dir.path().join("out").join(format!("manifest-{cmd}.json"));
        assert!(verify_manifest(&path).unwrap().is_empty(), "{cmd}");
    }
    let out = ok(&dir.path().join("veracity.toml"), &["report"]);
    assert!(out.contains("| pastel |"), "{out}");
}

#[test]
fn pipeline_is_byte_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    pipeline(a.path());
    pipeline(b.path());
    for f in [
        "pol/matrix.csv",
        "pol/zeroshot.csv",
        "pol/params.json",
        "pol/weak_labels.csv",
        "pol/eval-pastel.json",
        "pol/eval-majority.json",
        "pol/eval-zeroshot.json",
    ] {
        let x = std::fs::read(a.path().join("out").join(f)).unwrap();
        let y = std::fs::read(b.path().join("out").join(f)).unwrap();
        assert!(x == y, "{f} differs between runs");
    }
}

#[test]
fn analysis_ablation_and_crossdomain() {
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), "pol", 40, true);
    write_dataset(dir.path(), "ent", 40, true);
    let cfg = write_config(
        dir.path(),
        &[("pol", "politics"), ("ent", "entertainment")],
        "",
    );
    ok(
        &cfg,
        &[
            "extract",
            "--extraction.zeroshot",
            "false",
            "--set",
            "model.epochs=50",
        ],
    );

    ok(&cfg, &["analyze", "--folds", "5"]);
    let assoc: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("out/analysis/pol/associations.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(assoc.as_array().unwrap().len(), 19);
    let agg = std::fs::read_to_string(dir.path().join("out/analysis/aggregated.csv")).unwrap();
    assert_eq!(agg.lines().count(), 1 + 3 * 19);
    let dist: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("out/analysis/ent/distribution.json")).unwrap(),
    )
    .unwrap();
    let any = dist.as_object().unwrap().values().next().unwrap();
    let s: f64 = ["yes", "no", "unsure"]
        .iter()
        .map(|k| any["credible"][k].as_f64().unwrap())
        .sum();
    assert!((s - 1.0).abs() < 1e-12);

    let args = [
        "ablate",
        "--dataset",
        "pol",
        "--folds",
        "5",
        "--model.epochs",
        "50",
    ];
    ok(&cfg, &args);
    let first = manifest(dir.path(), "ablate");
    assert!(!first.stats.contains_key("pol.baseline_cached"));
    let abl: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("out/ablation/pol.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(abl["rows"].as_array().unwrap().len(), 19);
    assert!(abl["baseline"]["f1_mean"].is_number());
    let before = std::fs::read(dir.path().join("out/ablation/pol.json")).unwrap();
    ok(&cfg, &args);
    assert_eq!(
        manifest(dir.path(), "ablate").stats["pol.baseline_cached"],
        true
    );
    assert_eq!(
        std::fs::read(dir.path().join("out/ablation/pol.json")).unwrap(),
        before
    );

    let out = ok(&cfg, &["crossdomain", "--all"]);
    assert_eq!(out.lines().count(), 2);
    let n = std::fs::read_dir(dir.path().join("out/crossdomain"))
        .unwrap()
        .count();
    assert_eq!(n, 2);

    // A matrix extracted with a different catalog cannot be paired.
    let mut cat = default_catalog();
    cat.truncate(5);
    std::fs::write(dir.path().join("small.toml"), catalog_to_toml(&cat)).unwrap();
    ok(
        &cfg,
        &[
            "extract",
            "--dataset",
            "ent",
            "--set",
            "catalog=\"small.toml\"",
        ],
    );
    let (code, _, stderr) = run(&cfg, &["crossdomain", "--train", "pol", "--test", "ent"]);
    assert_eq!(code, 1);
    assert!(stderr.contains("catalog mismatch"), "{stderr}");
}
