use std::path::Path;

use veracity::corpus::Article;
use veracity::signals::{build_signal_prompt, build_zeroshot_prompt, default_catalog};

fn fixture(name: &str) -> String {
    let path = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name);
    std::fs::read_to_string(path).unwrap()
}

fn golden_article() -> Article {
    let v: serde_json::Value = serde_json::from_str(&fixture("golden_article.json")).unwrap();
    Article::new(
        v["id"].as_str().unwrap(),
        v["title"].as_str().unwrap(),
        v["text"].as_str().unwrap(),
    )
}

#[test]
fn signal_prompt_matches_golden() {
    let cat = default_catalog();
    let inference = cat.iter().find(|s| s.id == "inference").unwrap();
    let p = build_signal_prompt(&golden_article(), inference);
    assert_eq!(p.text, fixture("golden_prompt_inference.txt"));
    assert_eq!(p.signal_id, "inference");
}

#[test]
fn zeroshot_prompt_matches_golden() {
    let p = build_zeroshot_prompt(&golden_article());
    assert_eq!(p.text, fixture("golden_prompt_zeroshot.txt"));
    assert!(p.is_zero_shot());
}

#[test]
fn every_catalog_question_renders_once() {
    let a = golden_article();
    for s in default_catalog() {
        let p = build_signal_prompt(&a, &s);
        assert_eq!(p.text.matches("### Response:").count(), 1, "{}", s.id);
        assert!(
            p.text
                .contains(&format!("{} (Yes/Unsure/No)", s.question.trim())),
            "{}",
            s.id
        );
    }
}
