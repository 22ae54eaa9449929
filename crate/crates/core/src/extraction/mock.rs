//! Deterministic stand-in for an LLM.
//!
//! Answers are drawn from per-signal profiles using uniforms derived from
//! SHA-256 of (seed, signal id, prompt), so a given seed and prompt always
//! produce the same completion, in any process.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::backend::{BackendConfig, BackendError, CompletionBackend};
use crate::corpus::{Dataset, Label};
use crate::signals::{prompt_title, PromptText};

/// Answer distribution for one signal.
///
/// With a planted label for the article and `accuracy` set, a non-abstaining
/// answer agrees with the label's polarity (Yes for misinformation) with
/// probability `accuracy`. Otherwise Yes is drawn with probability
/// `yes_rate`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockProfile {
    pub abstain_rate: f64,
    pub accuracy: Option<f64>,
    pub yes_rate: f64,
}

impl Default for MockProfile {
    fn default() -> Self {
        Self {
            abstain_rate: 0.05,
            accuracy: None,
            yes_rate: 0.5,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockConfig {
    pub seed: u64,
    pub default_profile: MockProfile,
    pub profiles: BTreeMap<String, MockProfile>,
}

#[derive(Debug, Clone, Default)]
pub struct MockBackend {
    config: MockConfig,
    /// Planted labels keyed by article title.
    truth: HashMap<String, Label>,
}

impl MockBackend {
    pub fn new(seed: u64) -> Self {
        Self::from_config(MockConfig {
            seed,
            ..Default::default()
        })
    }

    pub fn from_config(config: MockConfig) -> Self {
        Self {
            config,
            truth: HashMap::new(),
        }
    }

    pub fn with_default_profile(mut self, p: MockProfile) -> Self {
        self.config.default_profile = p;
        self
    }

    pub fn with_profile(mut self, signal_id: impl Into<String>, p: MockProfile) -> Self {
        self.config.profiles.insert(signal_id.into(), p);
        self
    }

    /// Plants the dataset's gold labels so profiles with an accuracy can
    /// answer relative to them. Articles are recognised by title.
    pub fn with_truth(mut self, d: &Dataset) -> Self {
        for a in &d.articles {
            if let Some(l) = a.label {
                let title = a.title.split('\n').next().unwrap_or("").to_string();
                self.truth.insert(title, l);
            }
        }
        self
    }

    fn uniforms(&self, prompt: &PromptText) -> (f64, f64) {
        let mut h = Sha256::new();
        h.update(self.config.seed.to_le_bytes());
        h.update((prompt.signal_id.len() as u64).to_le_bytes());
        h.update(prompt.signal_id.as_bytes());
        h.update(Sha256::digest(prompt.text.as_bytes()));
        let d = h.finalize();
        let word = |i: usize| u64::from_le_bytes(d[i..i + 8].try_into().unwrap());
        let unit = |w: u64| (w >> 11) as f64 / (1u64 << 53) as f64;
        (unit(word(0)), unit(word(8)))
    }

    pub fn answer_for(&self, prompt: &PromptText) -> &'static str {
        let profile = self
            .config
            .profiles
            .get(&prompt.signal_id)
            .copied()
            .unwrap_or(self.config.default_profile);
        let (u_abstain, u_answer) = self.uniforms(prompt);
        if u_abstain < profile.abstain_rate {
            return "Unsure";
        }
        let planted = prompt_title(&prompt.text).and_then(|t| self.truth.get(t));
        let yes = match (profile.accuracy, planted) {
            (Some(acc), Some(&label)) => (u_answer < acc) == (label == 1),
            _ => u_answer < profile.yes_rate,
        };
        if yes {
            "Yes"
        } else {
            "No"
        }
    }
}

impl CompletionBackend for MockBackend {
    fn complete(&self, prompt: &PromptText, _: &BackendConfig) -> Result<String, BackendError> {
        Ok(self.answer_for(prompt).to_string())
    }

    fn name(&self) -> &str {
        "mock"
    }
}
