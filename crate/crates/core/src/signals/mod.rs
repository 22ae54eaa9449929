//! Credibility-signal catalog, prompt rendering and completion parsing.

mod answer;
mod catalog;
mod prompt;

pub use answer::{parse_answer, Answer, AnswerValue};
pub use catalog::{
    catalog_to_toml, default_catalog, load_catalog, parse_catalog, validate, CatalogError,
    SignalSpec,
};
pub use prompt::{
    build_signal_prompt, build_zeroshot_prompt, prompt_title, PromptText, ZERO_SHOT_QUESTION,
};

/// Signal id carried by zero-shot veracity prompts.
pub const ZERO_SHOT_ID: &str = "zero_shot";
