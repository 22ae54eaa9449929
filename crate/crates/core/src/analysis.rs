//! Signal-level analyses: answer distributions, association with veracity,
//! leave-one-signal-out ablation, and trigger frequencies among true
//! positives and false negatives.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{DomainTag, FoldPlan, Label};
use crate::evaluation::{run_cv, EvalError, EvaluationReport, Method, ModelConfig};
use crate::extraction::AnswerMatrix;
use crate::label_model::VoteMatrix;
use crate::signals::AnswerValue;

/// Conventional significance level for the reject flag.
pub const ALPHA: f64 = 0.05;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("analysis requires gold labels")]
    Unlabeled,
    #[error("{0} labels for {1} rows")]
    LengthMismatch(usize, usize),
    #[error("ablation needs at least two signals")]
    TooFewSignals,
    #[error("no datasets in group {0}")]
    EmptyGroup(Group),
    #[error("signal lists differ between datasets")]
    SignalMismatch,
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("writing {path}: {reason}")]
    Write { path: String, reason: String },
}

fn check_labels(rows: usize, labels: &[Label]) -> Result<(), AnalysisError> {
    if labels.is_empty() {
        return Err(AnalysisError::Unlabeled);
    }
    if labels.len() != rows {
        return Err(AnalysisError::LengthMismatch(labels.len(), rows));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct AnswerShares {
    pub count: usize,
    pub yes: f64,
    pub no: f64,
    pub unsure: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalDistribution {
    pub signal_id: String,
    /// Answer shares among articles labelled 0 (credible).
    pub credible: AnswerShares,
    /// Answer shares among articles labelled 1 (misinformation).
    pub misinformation: AnswerShares,
}

/// Share of Yes/No/Unsure per signal within each veracity class. A class
/// with no articles reports zero shares and a zero count.
pub fn answer_distribution(
    am: &AnswerMatrix,
    labels: &[Label],
) -> Result<Vec<SignalDistribution>, AnalysisError> {
    check_labels(am.rows(), labels)?;
    Ok((0..am.cols())
        .map(|j| {
            let mut counts = [[0usize; 3]; 2];
            for (a, &l) in am.column(j).zip(labels) {
                let slot = match a {
                    AnswerValue::Yes => 0,
                    AnswerValue::No => 1,
                    AnswerValue::Unsure => 2,
                };
                counts[usize::from(l == 1)][slot] += 1;
            }
            let shares = |c: [usize; 3]| {
                let total: usize = c.iter().sum();
                let frac = |x: usize| {
                    if total == 0 {
                        0.0
                    } else {
                        x as f64 / total as f64
                    }
                };
                AnswerShares {
                    count: total,
                    yes: frac(c[0]),
                    no: frac(c[1]),
                    unsure: frac(c[2]),
                }
            };
            SignalDistribution {
                signal_id: am.signal_ids[j].clone(),
                credible: shares(counts[0]),
                misinformation: shares(counts[1]),
            }
        })
        .collect())
}

/// Rows: triggered / not triggered. Columns: misinformation / credible.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContingencyTable2x2 {
    pub triggered_misinfo: u64,
    pub triggered_credible: u64,
    pub untriggered_misinfo: u64,
    pub untriggered_credible: u64,
}

impl ContingencyTable2x2 {
    pub fn from_cells(cells: [[u64; 2]; 2]) -> Self {
        Self {
            triggered_misinfo: cells[0][0],
            triggered_credible: cells[0][1],
            untriggered_misinfo: cells[1][0],
            untriggered_credible: cells[1][1],
        }
    }

    pub fn cells(&self) -> [[u64; 2]; 2] {
        [
            [self.triggered_misinfo, self.triggered_credible],
            [self.untriggered_misinfo, self.untriggered_credible],
        ]
    }

    pub fn total(&self) -> u64 {
        self.cells().iter().flatten().sum()
    }

    /// Triggered means the signal was answered Yes.
    pub fn for_signal(column: impl Iterator<Item = AnswerValue>, labels: &[Label]) -> Self {
        let mut cells = [[0u64; 2]; 2];
        for (a, &l) in column.zip(labels) {
            let row = usize::from(a != AnswerValue::Yes);
            let col = usize::from(l != 1);
            cells[row][col] += 1;
        }
        Self::from_cells(cells)
    }
}

/// Pearson statistic without continuity correction and its 1-dof p-value.
/// A zero row or column total gives (0, 1).
pub fn chi_squared(t: &ContingencyTable2x2) -> (f64, f64) {
    let c = t.cells().map(|r| r.map(|x| x as f64));
    let rows = [c[0][0] + c[0][1], c[1][0] + c[1][1]];
    let cols = [c[0][0] + c[1][0], c[0][1] + c[1][1]];
    let n = rows[0] + rows[1];
    if rows.contains(&0.0) || cols.contains(&0.0) {
        return (0.0, 1.0);
    }
    let mut stat = 0.0;
    for i in 0..2 {
        for j in 0..2 {
            let e = rows[i] * cols[j] / n;
            stat += (c[i][j] - e).powi(2) / e;
        }
    }
    (stat, chi2_sf_1dof(stat))
}

/// Survival function of χ² with one degree of freedom.
pub fn chi2_sf_1dof(x: f64) -> f64 {
    if x <= 0.0 {
        1.0
    } else {
        statrs::function::erf::erfc((x / 2.0).sqrt())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalAssociation {
    pub signal_id: String,
    pub table: ContingencyTable2x2,
    pub chi2: f64,
    pub p_value: f64,
    /// χ² divided by the dataset's largest χ².
    pub normalized: f64,
    pub reject: bool,
}

pub fn associations(
    am: &AnswerMatrix,
    labels: &[Label],
) -> Result<Vec<SignalAssociation>, AnalysisError> {
    check_labels(am.rows(), labels)?;
    let mut out: Vec<SignalAssociation> = (0..am.cols())
        .map(|j| {
            let table = ContingencyTable2x2::for_signal(am.column(j), labels);
            let (chi2, p) = chi_squared(&table);
            SignalAssociation {
                signal_id: am.signal_ids[j].clone(),
                table,
                chi2,
                p_value: p,
                normalized: 0.0,
                reject: p < ALPHA,
            }
        })
        .collect();
    let max = out.iter().map(|a| a.chi2).fold(0.0, f64::max);
    if max > 0.0 {
        for a in &mut out {
            a.normalized = a.chi2 / max;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Group {
    Politics,
    Entertainment,
    All,
}

impl Group {
    pub const ALL: [Group; 3] = [Group::Politics, Group::Entertainment, Group::All];

    pub fn contains(self, d: DomainTag) -> bool {
        match self {
            Group::All => true,
            Group::Politics => d == DomainTag::Politics,
            Group::Entertainment => d == DomainTag::Entertainment,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Group::Politics => "politics",
            Group::Entertainment => "entertainment",
            Group::All => "all",
        }
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Group {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "politics" => Ok(Group::Politics),
            "entertainment" => Ok(Group::Entertainment),
            "all" => Ok(Group::All),
            other => Err(format!(
                "unknown group {other:?} (politics, entertainment, all)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregatedAssociation {
    pub signal_id: String,
    pub group: Group,
    pub datasets: Vec<String>,
    pub normalized_mean: f64,
    /// Rejected in every member dataset.
    pub reject: bool,
}

/// A dataset's association rows together with its name and domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetAssociations {
    pub dataset: String,
    pub domain: DomainTag,
    pub rows: Vec<SignalAssociation>,
}

pub fn aggregate_associations(
    per_dataset: &[DatasetAssociations],
    group: Group,
) -> Result<Vec<AggregatedAssociation>, AnalysisError> {
    let members: Vec<&DatasetAssociations> = per_dataset
        .iter()
        .filter(|d| group.contains(d.domain))
        .collect();
    let Some(first) = members.first() else {
        return Err(AnalysisError::EmptyGroup(group));
    };
    let ids: Vec<&str> = first.rows.iter().map(|r| r.signal_id.as_str()).collect();
    if members.iter().any(|d| {
        !d.rows
            .iter()
            .map(|r| r.signal_id.as_str())
            .eq(ids.iter().copied())
    }) {
        return Err(AnalysisError::SignalMismatch);
    }
    let k = members.len() as f64;
    Ok(ids
        .iter()
        .enumerate()
        .map(|(j, id)| AggregatedAssociation {
            signal_id: id.to_string(),
            group,
            datasets: members.iter().map(|d| d.dataset.clone()).collect(),
            normalized_mean: members.iter().map(|d| d.rows[j].normalized).sum::<f64>() / k,
            reject: members.iter().all(|d| d.rows[j].reject),
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub removed: String,
    pub f1_with: f64,
    pub f1_without: f64,
    /// 100·(without − with)/with; absent when the baseline scores 0.
    pub percent_change: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationResult {
    pub dataset: String,
    pub baseline: EvaluationReport,
    pub rows: Vec<AblationRow>,
}

pub fn percent_change(with: f64, without: f64) -> Option<f64> {
    (with != 0.0).then(|| 100.0 * (without - with) / with)
}

/// Re-runs cross-validation once per signal with that column removed, on the
/// baseline's folds and seeds.
pub fn ablation(
    vm: &VoteMatrix,
    labels: &[Label],
    folds: &FoldPlan,
    cfg: &ModelConfig,
    dataset: &str,
    baseline: Option<EvaluationReport>,
) -> Result<AblationResult, AnalysisError> {
    if vm.n() < 2 {
        return Err(AnalysisError::TooFewSignals);
    }
    check_labels(vm.m(), labels)?;
    let baseline = match baseline {
        Some(b) => b,
        None => run_cv(vm, labels, folds, Method::Pastel, cfg, dataset)?,
    };
    let rows = (0..vm.n())
        .into_par_iter()
        .map(|drop| {
            let keep: Vec<usize> = (0..vm.n()).filter(|&j| j != drop).collect();
            let r = run_cv(
                &vm.select_columns(&keep),
                labels,
                folds,
                Method::Pastel,
                cfg,
                dataset,
            )?;
            Ok(AblationRow {
                removed: vm.col_ids[drop].clone(),
                f1_with: baseline.f1_mean,
                f1_without: r.f1_mean,
                percent_change: percent_change(baseline.f1_mean, r.f1_mean),
            })
        })
        .collect::<Result<Vec<_>, AnalysisError>>()?;
    Ok(AblationResult {
        dataset: dataset.to_string(),
        baseline,
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationSummaryRow {
    pub removed: String,
    pub per_dataset: BTreeMap<String, Option<f64>>,
    pub politics: Option<f64>,
    pub entertainment: Option<f64>,
    pub overall: Option<f64>,
}

fn mean_defined(xs: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = xs.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// One row per removed signal with per-dataset changes and domain means.
pub fn summarize_ablations(
    results: &[(DomainTag, AblationResult)],
) -> Result<Vec<AblationSummaryRow>, AnalysisError> {
    let Some((_, first)) = results.first() else {
        return Ok(Vec::new());
    };
    let ids: Vec<&str> = first.rows.iter().map(|r| r.removed.as_str()).collect();
    if results.iter().any(|(_, r)| {
        !r.rows
            .iter()
            .map(|x| x.removed.as_str())
            .eq(ids.iter().copied())
    }) {
        return Err(AnalysisError::SignalMismatch);
    }
    Ok(ids
        .iter()
        .enumerate()
        .map(|(j, id)| {
            let in_group = |g: Group| {
                mean_defined(
                    results
                        .iter()
                        .filter(|(d, _)| g.contains(*d))
                        .map(|(_, r)| r.rows[j].percent_change),
                )
            };
            AblationSummaryRow {
                removed: id.to_string(),
                per_dataset: results
                    .iter()
                    .map(|(_, r)| (r.dataset.clone(), r.rows[j].percent_change))
                    .collect(),
                politics: in_group(Group::Politics),
                entertainment: in_group(Group::Entertainment),
                overall: in_group(Group::All),
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalFrequency {
    pub signal_id: String,
    /// Yes answers per true-positive article.
    pub tp: Option<f64>,
    /// Yes answers per false-negative article.
    pub fn_: Option<f64>,
    /// 100·(tp − fn)/tp.
    pub decrease_pct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyTable {
    pub tp_rows: usize,
    pub fn_rows: usize,
    pub signals: Vec<SignalFrequency>,
    pub tp_total: Option<f64>,
    pub fn_total: Option<f64>,
    pub decrease_pct: Option<f64>,
}

fn decrease(tp: Option<f64>, fn_: Option<f64>) -> Option<f64> {
    match (tp, fn_) {
        (Some(t), Some(f)) if t != 0.0 => Some(100.0 * (t - f) / t),
        _ => None,
    }
}

/// Trigger frequencies among true positives (pred 1, gold 1) and false
/// negatives (pred 0, gold 1). An empty group yields `None` entries.
pub fn tp_fn_frequencies(
    am: &AnswerMatrix,
    preds: &[Label],
    gold: &[Label],
) -> Result<FrequencyTable, AnalysisError> {
    check_labels(am.rows(), gold)?;
    if preds.len() != gold.len() {
        return Err(AnalysisError::LengthMismatch(preds.len(), gold.len()));
    }
    let tp_rows: Vec<usize> = (0..gold.len())
        .filter(|&i| gold[i] == 1 && preds[i] == 1)
        .collect();
    let fn_rows: Vec<usize> = (0..gold.len())
        .filter(|&i| gold[i] == 1 && preds[i] == 0)
        .collect();
    let freq = |rows: &[usize], j: usize| {
        (!rows.is_empty()).then(|| {
            rows.iter()
                .filter(|&&i| am.get(i, j) == AnswerValue::Yes)
                .count() as f64
                / rows.len() as f64
        })
    };
    let signals: Vec<SignalFrequency> = (0..am.cols())
        .map(|j| {
            let tp = freq(&tp_rows, j);
            let fn_ = freq(&fn_rows, j);
            SignalFrequency {
                signal_id: am.signal_ids[j].clone(),
                tp,
                fn_,
                decrease_pct: decrease(tp, fn_),
            }
        })
        .collect();
    let total = |f: fn(&SignalFrequency) -> Option<f64>| signals.iter().map(f).sum::<Option<f64>>();
    let tp_total = total(|s| s.tp);
    let fn_total = total(|s| s.fn_);
    Ok(FrequencyTable {
        tp_rows: tp_rows.len(),
        fn_rows: fn_rows.len(),
        tp_total,
        fn_total,
        decrease_pct: decrease(tp_total, fn_total),
        signals,
    })
}

/// Per-signal mean over datasets, skipping undefined entries.
pub fn average_frequencies(tables: &[FrequencyTable]) -> Result<FrequencyTable, AnalysisError> {
    let Some(first) = tables.first() else {
        return Err(AnalysisError::Unlabeled);
    };
    let ids: Vec<&str> = first.signals.iter().map(|s| s.signal_id.as_str()).collect();
    if tables.iter().any(|t| {
        !t.signals
            .iter()
            .map(|s| s.signal_id.as_str())
            .eq(ids.iter().copied())
    }) {
        return Err(AnalysisError::SignalMismatch);
    }
    let signals: Vec<SignalFrequency> = ids
        .iter()
        .enumerate()
        .map(|(j, id)| {
            let tp = mean_defined(tables.iter().map(|t| t.signals[j].tp));
            let fn_ = mean_defined(tables.iter().map(|t| t.signals[j].fn_));
            SignalFrequency {
                signal_id: id.to_string(),
                tp,
                fn_,
                decrease_pct: decrease(tp, fn_),
            }
        })
        .collect();
    let tp_total = mean_defined(tables.iter().map(|t| t.tp_total));
    let fn_total = mean_defined(tables.iter().map(|t| t.fn_total));
    Ok(FrequencyTable {
        tp_rows: tables.iter().map(|t| t.tp_rows).sum(),
        fn_rows: tables.iter().map(|t| t.fn_rows).sum(),
        signals,
        tp_total,
        fn_total,
        decrease_pct: decrease(tp_total, fn_total),
    })
}

/// Answer shares keyed by signal, then class, then answer.
pub fn distribution_map(
    d: &[SignalDistribution],
) -> BTreeMap<String, BTreeMap<&'static str, BTreeMap<&'static str, f64>>> {
    let shares =
        |s: &AnswerShares| BTreeMap::from([("yes", s.yes), ("no", s.no), ("unsure", s.unsure)]);
    d.iter()
        .map(|s| {
            let classes = BTreeMap::from([
                ("credible", shares(&s.credible)),
                ("misinformation", shares(&s.misinformation)),
            ]);
            (s.signal_id.clone(), classes)
        })
        .collect()
}

fn write_err(path: &Path) -> impl Fn(csv::Error) -> AnalysisError + '_ {
    move |e| AnalysisError::Write {
        path: path.display().to_string(),
        reason: e.to_string(),
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.6}")).unwrap_or_default()
}

pub fn write_associations_csv(
    rows: &[SignalAssociation],
    path: &Path,
) -> Result<(), AnalysisError> {
    let err = write_err(path);
    let mut w = csv::Writer::from_path(path).map_err(&err)?;
    w.write_record([
        "signal_id",
        "triggered_misinfo",
        "triggered_credible",
        "untriggered_misinfo",
        "untriggered_credible",
        "chi2",
        "p_value",
        "normalized",
        "reject",
    ])
    .map_err(&err)?;
    for r in rows {
        let t = &r.table;
        w.write_record([
            r.signal_id.clone(),
            t.triggered_misinfo.to_string(),
            t.triggered_credible.to_string(),
            t.untriggered_misinfo.to_string(),
            t.untriggered_credible.to_string(),
            format!("{:.6}", r.chi2),
            format!("{:.6e}", r.p_value),
            format!("{:.6}", r.normalized),
            r.reject.to_string(),
        ])
        .map_err(&err)?;
    }
    w.flush().map_err(|e| err(e.into()))
}

pub fn write_aggregated_csv(
    rows: &[AggregatedAssociation],
    path: &Path,
) -> Result<(), AnalysisError> {
    let err = write_err(path);
    let mut w = csv::Writer::from_path(path).map_err(&err)?;
    w.write_record([
        "group",
        "signal_id",
        "normalized_mean",
        "reject",
        "datasets",
    ])
    .map_err(&err)?;
    for r in rows {
        w.write_record([
            r.group.to_string(),
            r.signal_id.clone(),
            format!("{:.6}", r.normalized_mean),
            r.reject.to_string(),
            r.datasets.join(";"),
        ])
        .map_err(&err)?;
    }
    w.flush().map_err(|e| err(e.into()))
}

/// Percent changes in percent; empty cells are undefined.
pub fn write_ablation_csv(rows: &[AblationSummaryRow], path: &Path) -> Result<(), AnalysisError> {
    let err = write_err(path);
    let mut w = csv::Writer::from_path(path).map_err(&err)?;
    let datasets: Vec<String> = rows
        .first()
        .map(|r| r.per_dataset.keys().cloned().collect())
        .unwrap_or_default();
    let mut header = vec!["removed".to_string()];
    header.extend(datasets.iter().cloned());
    header.extend(["politics", "entertainment", "overall"].map(String::from));
    w.write_record(&header).map_err(&err)?;
    for r in rows {
        let mut rec = vec![r.removed.clone()];
        rec.extend(
            datasets
                .iter()
                .map(|d| opt(r.per_dataset.get(d).copied().flatten())),
        );
        rec.extend([opt(r.politics), opt(r.entertainment), opt(r.overall)]);
        w.write_record(&rec).map_err(&err)?;
    }
    w.flush().map_err(|e| err(e.into()))
}

pub fn write_frequencies_csv(t: &FrequencyTable, path: &Path) -> Result<(), AnalysisError> {
    let err = write_err(path);
    let mut w = csv::Writer::from_path(path).map_err(&err)?;
    w.write_record(["signal_id", "tp", "fn", "decrease_pct"])
        .map_err(&err)?;
    for s in &t.signals {
        w.write_record([
            s.signal_id.clone(),
            opt(s.tp),
            opt(s.fn_),
            opt(s.decrease_pct),
        ])
        .map_err(&err)?;
    }
    w.write_record([
        "total".to_string(),
        opt(t.tp_total),
        opt(t.fn_total),
        opt(t.decrease_pct),
    ])
    .map_err(&err)?;
    w.flush().map_err(|e| err(e.into()))
}
