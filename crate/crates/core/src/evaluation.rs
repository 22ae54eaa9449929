//! Macro-F1 scoring, confusion counts, and the cross-validation and
//! cross-domain protocols.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{FoldPlan, Label};
use crate::label_model::{
    fit, majority_vote, predict_proba, select_correlations, CorrelationSet, FitConfig, FitMode,
    LabelModelError, VoteMatrix,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("length mismatch: {0} predictions vs {1} labels")]
    LengthMismatch(usize, usize),
    #[error("nothing to score")]
    Empty,
    #[error("label {0} is not 0 or 1")]
    BadLabel(u8),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("method {0} needs zero-shot predictions, not a vote matrix")]
    WrongMethod(Method),
    #[error("fold {fold}: {source}")]
    Fit {
        fold: usize,
        #[source]
        source: LabelModelError,
    },
    #[error(transparent)]
    LabelModel(#[from] LabelModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Pastel,
    Majority,
    Zeroshot,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Pastel => "pastel",
            Method::Majority => "majority",
            Method::Zeroshot => "zeroshot",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "pastel" => Ok(Method::Pastel),
            "majority" | "mv" => Ok(Method::Majority),
            "zeroshot" | "zero-shot" | "zs" => Ok(Method::Zeroshot),
            other => Err(format!(
                "unknown method {other:?} (pastel, majority, zeroshot)"
            )),
        }
    }
}

/// Positive class is 1 (misinformation).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    fn add(&mut self, o: &ConfusionCounts) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
        self.tn += o.tn;
    }
}

fn check(preds: &[Label], labels: &[Label]) -> Result<(), EvalError> {
    if preds.len() != labels.len() {
        return Err(EvalError::LengthMismatch(preds.len(), labels.len()));
    }
    if preds.is_empty() {
        return Err(EvalError::Empty);
    }
    if let Some(&v) = preds.iter().chain(labels).find(|&&v| v > 1) {
        return Err(EvalError::BadLabel(v));
    }
    Ok(())
}

pub fn confusion(preds: &[Label], labels: &[Label]) -> Result<ConfusionCounts, EvalError> {
    check(preds, labels)?;
    let mut c = ConfusionCounts::default();
    for (&p, &l) in preds.iter().zip(labels) {
        match (p, l) {
            (1, 1) => c.tp += 1,
            (1, _) => c.fp += 1,
            (_, 1) => c.fn_ += 1,
            _ => c.tn += 1,
        }
    }
    Ok(c)
}

/// 2TP/(2TP+FP+FN), or 1 when the class never occurs in either vector.
fn class_f1(tp: u64, fp: u64, fn_: u64) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        1.0
    } else {
        (2 * tp) as f64 / denom as f64
    }
}

pub fn f1_from_confusion(c: &ConfusionCounts) -> f64 {
    let pos = class_f1(c.tp, c.fp, c.fn_);
    let neg = class_f1(c.tn, c.fn_, c.fp);
    (pos + neg) / 2.0
}

pub fn f1_macro(preds: &[Label], labels: &[Label]) -> Result<f64, EvalError> {
    Ok(f1_from_confusion(&confusion(preds, labels)?))
}

/// (FNR, FPR); `None` where the denominator is zero.
pub fn fnr_fpr(c: &ConfusionCounts) -> (Option<f64>, Option<f64>) {
    let rate = |num: u64, den: u64| (den > 0).then(|| num as f64 / den as f64);
    (rate(c.fn_, c.tp + c.fn_), rate(c.fp, c.fp + c.tn))
}

/// Per-task seed: first eight bytes of SHA-256(base ‖ tag).
pub fn derive_seed(base: u64, tag: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    h.update(tag.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

pub fn fold_seed(base: u64, fold: usize) -> u64 {
    derive_seed(base, &format!("fold-{fold}"))
}

/// Label-model settings shared by every protocol. The fit seed is not part
/// of it; protocols derive one per task from the run seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub epochs: usize,
    pub step_size: f64,
    pub mode: FitMode,
    pub chains: usize,
    pub sweeps: usize,
    pub prior: f64,
    pub init_accuracy: f64,
    /// Agreement threshold for correlated pairs; 1.0 keeps C empty.
    pub correlation_threshold: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let f = FitConfig::default();
        Self {
            epochs: f.epochs,
            step_size: f.step_size,
            mode: f.mode,
            chains: f.chains,
            sweeps: f.sweeps,
            prior: f.prior,
            init_accuracy: f.init_accuracy,
            correlation_threshold: 1.0,
        }
    }
}

impl ModelConfig {
    pub fn fit_config(&self, seed: u64) -> FitConfig {
        FitConfig {
            epochs: self.epochs,
            step_size: self.step_size,
            seed,
            mode: self.mode,
            chains: self.chains,
            sweeps: self.sweeps,
            prior: self.prior,
            init_accuracy: self.init_accuracy,
        }
    }

    pub fn validate(&self) -> Result<(), LabelModelError> {
        if !(0.0..=1.0).contains(&self.correlation_threshold) {
            return Err(LabelModelError::Config(format!(
                "correlation_threshold {} not in [0, 1]",
                self.correlation_threshold
            )));
        }
        self.fit_config(0).validate()
    }

    pub fn correlations(&self, train: &VoteMatrix) -> Result<CorrelationSet, LabelModelError> {
        if self.correlation_threshold >= 1.0 || train.m() < 2 {
            Ok(CorrelationSet::empty())
        } else {
            select_correlations(train, self.correlation_threshold)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Protocol {
    pub method: Method,
    /// Dataset(s) the model was fitted on.
    pub train: String,
    /// Dataset scored; equals `train` for cross-validation.
    pub test: String,
    /// Number of folds; 1 for single-shot protocols.
    pub folds: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub n_test: usize,
    pub f1_macro: f64,
    pub confusion: ConfusionCounts,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanConfusion {
    pub tp: f64,
    pub fp: f64,
    #[serde(rename = "fn")]
    pub fn_: f64,
    pub tn: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub protocol: Protocol,
    pub folds: Vec<FoldResult>,
    pub f1_mean: f64,
    /// Sample standard deviation over folds; absent with a single fold.
    pub f1_std: Option<f64>,
    /// Standard error of the mean, std/√k.
    pub f1_stderr: Option<f64>,
    pub f1_min: f64,
    pub f1_max: f64,
    pub mean_confusion: MeanConfusion,
    /// Rates over the summed confusion counts.
    pub fnr: Option<f64>,
    pub fpr: Option<f64>,
}

impl EvaluationReport {
    pub fn from_folds(protocol: Protocol, folds: Vec<FoldResult>) -> Result<Self, EvalError> {
        if folds.is_empty() {
            return Err(EvalError::Empty);
        }
        let k = folds.len() as f64;
        let scores: Vec<f64> = folds.iter().map(|f| f.f1_macro).collect();
        let mean = scores.iter().sum::<f64>() / k;
        let std = (folds.len() > 1)
            .then(|| (scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt());
        let mut total = ConfusionCounts::default();
        for f in &folds {
            total.add(&f.confusion);
        }
        let (fnr, fpr) = fnr_fpr(&total);
        Ok(Self {
            protocol,
            f1_mean: mean,
            f1_std: std,
            f1_stderr: std.map(|s| s / k.sqrt()),
            f1_min: scores.iter().copied().fold(f64::INFINITY, f64::min),
            f1_max: scores.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            mean_confusion: MeanConfusion {
                tp: total.tp as f64 / k,
                fp: total.fp as f64 / k,
                fn_: total.fn_ as f64 / k,
                tn: total.tn as f64 / k,
            },
            fnr,
            fpr,
            folds,
        })
    }

    /// "0.77 ± 0.04" style cell.
    pub fn summary_cell(&self) -> String {
        match self.f1_std {
            Some(s) => format!("{:.2} ± {:.2}", self.f1_mean, s),
            None => format!("{:.2}", self.f1_mean),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn score_fold(fold: usize, preds: &[Label], labels: &[Label]) -> Result<FoldResult, EvalError> {
    let c = confusion(preds, labels)?;
    Ok(FoldResult {
        fold,
        n_test: preds.len(),
        f1_macro: f1_from_confusion(&c),
        confusion: c,
    })
}

fn pick<T: Copy>(xs: &[T], rows: &[usize]) -> Vec<T> {
    rows.iter().map(|&i| xs[i]).collect()
}

/// Fits on `train` (no labels) and returns discrete predictions on `test`.
pub fn fit_predict(
    train: &VoteMatrix,
    test: &VoteMatrix,
    method: Method,
    cfg: &ModelConfig,
    seed: u64,
) -> Result<Vec<Label>, EvalError> {
    match method {
        Method::Majority => Ok(majority_vote(test).predictions),
        Method::Pastel => {
            let c = cfg.correlations(train)?;
            let params = fit(train, &c, &cfg.fit_config(seed))?;
            Ok(predict_proba(&params, test)?.predictions)
        }
        Method::Zeroshot => Err(EvalError::WrongMethod(method)),
    }
}

/// k-fold protocol: for each fold, fit on the training rows and score on the
/// held-out rows. Folds run in parallel; each uses its own derived seed, so
/// the report does not depend on scheduling.
pub fn run_cv(
    vm: &VoteMatrix,
    labels: &[Label],
    folds: &FoldPlan,
    method: Method,
    cfg: &ModelConfig,
    dataset: &str,
) -> Result<EvaluationReport, EvalError> {
    if labels.len() != vm.m() || folds.len() != vm.m() {
        return Err(EvalError::Shape(format!(
            "{} rows, {} labels, {} fold assignments",
            vm.m(),
            labels.len(),
            folds.len()
        )));
    }
    let results: Vec<Result<FoldResult, EvalError>> =
        (0..folds.k)
            .into_par_iter()
            .map(|f| {
                let test_rows = folds.test_rows(f);
                let train = vm.select_rows(&folds.train_rows(f));
                let test = vm.select_rows(&test_rows);
                let preds = fit_predict(&train, &test, method, cfg, fold_seed(folds.seed, f))
                    .map_err(|e| match e {
                        EvalError::LabelModel(source) => EvalError::Fit { fold: f, source },
                        other => other,
                    })?;
                score_fold(f, &preds, &pick(labels, &test_rows))
            })
            .collect();
    let folds_out = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    EvaluationReport::from_folds(
        Protocol {
            method,
            train: dataset.to_string(),
            test: dataset.to_string(),
            folds: folds.k,
            seed: folds.seed,
        },
        folds_out,
    )
}

/// Fits on every row of `train` and scores once on every row of `test`.
#[allow(clippy::too_many_arguments)]
/// Out-of-fold predictions: every row is predicted by the model trained on
/// the other folds, with the same per-fold seeds as [`run_cv`].
pub fn cv_predictions(
    vm: &VoteMatrix,
    folds: &FoldPlan,
    method: Method,
    cfg: &ModelConfig,
) -> Result<Vec<Label>, EvalError> {
    if folds.len() != vm.m() {
        return Err(EvalError::Shape(format!(
            "{} rows, {} fold assignments",
            vm.m(),
            folds.len()
        )));
    }
    let per_fold: Vec<Result<(Vec<usize>, Vec<Label>), EvalError>> = (0..folds.k)
        .into_par_iter()
        .map(|f| {
            let rows = folds.test_rows(f);
            let train = vm.select_rows(&folds.train_rows(f));
            let preds = fit_predict(
                &train,
                &vm.select_rows(&rows),
                method,
                cfg,
                fold_seed(folds.seed, f),
            )
            .map_err(|e| match e {
                EvalError::LabelModel(source) => EvalError::Fit { fold: f, source },
                other => other,
            })?;
            Ok((rows, preds))
        })
        .collect();
    let mut out = vec![0; vm.m()];
    for r in per_fold {
        let (rows, preds) = r?;
        for (i, p) in rows.into_iter().zip(preds) {
            out[i] = p;
        }
    }
    Ok(out)
}

pub fn run_cross_domain(
    train: &VoteMatrix,
    train_name: &str,
    test: &VoteMatrix,
    test_labels: &[Label],
    test_name: &str,
    method: Method,
    cfg: &ModelConfig,
    seed: u64,
) -> Result<EvaluationReport, EvalError> {
    if train.col_ids != test.col_ids {
        return Err(EvalError::Shape(format!(
            "signal columns differ between {train_name} and {test_name}"
        )));
    }
    if test_labels.len() != test.m() {
        return Err(EvalError::LengthMismatch(test.m(), test_labels.len()));
    }
    let preds = fit_predict(train, test, method, cfg, fold_seed(seed, 0))?;
    EvaluationReport::from_folds(
        Protocol {
            method,
            train: train_name.to_string(),
            test: test_name.to_string(),
            folds: 1,
            seed,
        },
        vec![score_fold(0, &preds, test_labels)?],
    )
}

/// Scores zero-shot predictions on each fold's test split, or once over all
/// rows when no fold plan is given.
pub fn evaluate_zeroshot(
    preds: &[Label],
    labels: &[Label],
    folds: Option<&FoldPlan>,
    dataset: &str,
) -> Result<EvaluationReport, EvalError> {
    check(preds, labels)?;
    let (k, seed, results) = match folds {
        Some(plan) => {
            if plan.len() != labels.len() {
                return Err(EvalError::Shape(
                    "fold plan does not cover the labels".into(),
                ));
            }
            let res = (0..plan.k)
                .map(|f| {
                    let rows = plan.test_rows(f);
                    score_fold(f, &pick(preds, &rows), &pick(labels, &rows))
                })
                .collect::<Result<Vec<_>, _>>()?;
            (plan.k, plan.seed, res)
        }
        None => (1, 0, vec![score_fold(0, preds, labels)?]),
    };
    EvaluationReport::from_folds(
        Protocol {
            method: Method::Zeroshot,
            train: dataset.to_string(),
            test: dataset.to_string(),
            folds: k,
            seed,
        },
        results,
    )
}
