use serde::{Deserialize, Serialize};

use super::{SignalSpec, ZERO_SHOT_ID};
use crate::corpus::Article;

const ROLE: &str = "You are a helpful and unbiased news verification assistant. \
You will be provided with the title and the full body of text of a news article. \
Then, you will answer further questions related to the given article. \
Ensure that your answers are grounded in reality, truthful and reliable.";

const ANSWER_WITH_UNSURE: &str = "You are expected to answer with 'Yes' or 'No', \
but you are also allowed to answer with 'Unsure' if you do not have enough \
information or context to provide a reliable answer.";

const ANSWER_BINARY: &str = "You are expected to answer with 'Yes' or 'No'.";

pub const ZERO_SHOT_QUESTION: &str = "Does this article contain misinformation?";

/// A fully rendered single-turn prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptText {
    pub text: String,
    /// Catalog id of the asked signal, or `zero_shot`.
    pub signal_id: String,
}

impl PromptText {
    pub fn is_zero_shot(&self) -> bool {
        self.signal_id == ZERO_SHOT_ID
    }
}

fn render(title: &str, body: &str, answer_rule: &str, question_line: &str) -> String {
    format!(
        "### Instruction:\n{ROLE} {answer_rule}\n\n### Input:\n{title}\n{body}\n\n{question_line}\n\n### Response:"
    )
}

/// Renders the instruction/input/response prompt for one signal question.
pub fn build_signal_prompt(a: &Article, s: &SignalSpec) -> PromptText {
    PromptText {
        text: render(
            &a.title,
            &a.body,
            ANSWER_WITH_UNSURE,
            &format!("{} (Yes/Unsure/No)", s.question.trim()),
        ),
        signal_id: s.id.clone(),
    }
}

/// Same template, asking directly for the veracity verdict with binary
/// answers only.
pub fn build_zeroshot_prompt(a: &Article) -> PromptText {
    PromptText {
        text: render(
            &a.title,
            &a.body,
            ANSWER_BINARY,
            &format!("{ZERO_SHOT_QUESTION} (Yes/No)"),
        ),
        signal_id: ZERO_SHOT_ID.to_string(),
    }
}

/// Recovers the title line from a rendered prompt.
pub fn prompt_title(prompt: &str) -> Option<&str> {
    let rest = prompt.split_once("### Input:\n")?.1;
    Some(rest.split('\n').next().unwrap_or(""))
}
