use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnswerValue {
    Yes,
    No,
    Unsure,
}

impl AnswerValue {
    pub const ALL: [AnswerValue; 3] = [AnswerValue::Yes, AnswerValue::No, AnswerValue::Unsure];

    pub fn as_str(self) -> &'static str {
        match self {
            AnswerValue::Yes => "yes",
            AnswerValue::No => "no",
            AnswerValue::Unsure => "unsure",
        }
    }
}

impl fmt::Display for AnswerValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AnswerValue {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "yes" => Ok(AnswerValue::Yes),
            "no" => Ok(AnswerValue::No),
            "unsure" => Ok(AnswerValue::Unsure),
            other => Err(format!("not an answer: {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Answer {
    pub value: AnswerValue,
    pub raw: String,
    /// The completion did not contain a usable answer token and `value` is
    /// the mode's fallback.
    pub warning: bool,
}

/// Maps a completion onto an answer.
///
/// Scans the completion for the first standalone word (split on anything
/// that is not alphanumeric) equal to yes, no or unsure, ignoring case.
/// With `allow_unsure` false an "unsure" token is treated like garbage and
/// falls back to `No`; in signal mode garbage falls back to `Unsure`.
pub fn parse_answer(completion: &str, allow_unsure: bool) -> Answer {
    let fallback = if allow_unsure {
        AnswerValue::Unsure
    } else {
        AnswerValue::No
    };
    let found = completion
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .find_map(|t| match t.to_lowercase().as_str() {
            "yes" => Some(AnswerValue::Yes),
            "no" => Some(AnswerValue::No),
            "unsure" => Some(AnswerValue::Unsure),
            _ => None,
        });
    let (value, warning) = match found {
        Some(AnswerValue::Unsure) if !allow_unsure => (fallback, true),
        Some(v) => (v, false),
        None => (fallback, true),
    };
    Answer {
        value,
        raw: completion.to_string(),
        warning,
    }
}
