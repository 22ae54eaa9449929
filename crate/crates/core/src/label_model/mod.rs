//! Generative label model over ternary labeling-function votes.
//!
//! The joint model is log-linear, p_w(λ, y) ∝ exp(w·φ(λ, y) + log 2π_y), with
//! per-function accuracy and propensity factors plus optional pairwise
//! correlation factors. It is fitted without ground truth by minimising the
//! negative log marginal likelihood of the observed vote rows.

mod fit;
mod model;
mod votes;

use thiserror::Error;

pub use fit::{fit, FitConfig, FitMode, AUTO_EXACT_LIMIT};
pub use model::{
    discretize, features, log_partition_exact, majority_vote, objective_and_gradient,
    predict_proba, LabelModelParams, WeakLabels, MAX_ENUMERATION,
};
pub use votes::{
    answer_to_vote, answers_to_votes, select_correlations, CorrelationSet, VoteMatrix, ABSTAIN,
};

#[derive(Debug, Error)]
pub enum LabelModelError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid correlation set: {0}")]
    Correlation(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("every vote abstains; nothing to fit")]
    AllAbstain,
    #[error("{n} labeling functions exceed the enumeration limit of {max}")]
    TooLarge { n: usize, max: usize },
    #[error("objective became non-finite at epoch {epoch}")]
    Diverged {
        epoch: usize,
        /// Last iterate with a finite objective.
        last: Box<LabelModelParams>,
    },
    #[error("{0}")]
    Io(String),
}
