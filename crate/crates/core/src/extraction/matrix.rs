use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ExtractionError;
use crate::corpus::Label;
use crate::signals::AnswerValue;

/// Ternary answers for every (article, signal) cell, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerMatrix {
    pub dataset: String,
    pub signal_ids: Vec<String>,
    pub article_ids: Vec<String>,
    pub answers: Vec<AnswerValue>,
    /// Cells whose completion needed the parser fallback.
    pub warnings: Vec<bool>,
}

impl AnswerMatrix {
    pub fn new(
        dataset: impl Into<String>,
        signal_ids: Vec<String>,
        article_ids: Vec<String>,
        answers: Vec<AnswerValue>,
    ) -> Result<Self, ExtractionError> {
        if answers.len() != signal_ids.len() * article_ids.len() {
            return Err(ExtractionError::Shape(format!(
                "{} answers for a {}x{} matrix",
                answers.len(),
                article_ids.len(),
                signal_ids.len()
            )));
        }
        let warnings = vec![false; answers.len()];
        Ok(Self {
            dataset: dataset.into(),
            signal_ids,
            article_ids,
            answers,
            warnings,
        })
    }

    pub fn rows(&self) -> usize {
        self.article_ids.len()
    }

    pub fn cols(&self) -> usize {
        self.signal_ids.len()
    }

    pub fn get(&self, row: usize, col: usize) -> AnswerValue {
        self.answers[row * self.cols() + col]
    }

    pub fn row(&self, row: usize) -> &[AnswerValue] {
        let n = self.cols();
        &self.answers[row * n..(row + 1) * n]
    }

    pub fn column(&self, col: usize) -> impl Iterator<Item = AnswerValue> + '_ {
        (0..self.rows()).map(move |r| self.get(r, col))
    }

    pub fn warning_count(&self) -> usize {
        self.warnings.iter().filter(|&&w| w).count()
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), ExtractionError> {
        let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
        let mut header = vec!["article_id".to_string()];
        header.extend(self.signal_ids.iter().cloned());
        w.write_record(&header).map_err(csv_err(path))?;
        for (r, id) in self.article_ids.iter().enumerate() {
            let mut rec = vec![id.as_str()];
            rec.extend(self.row(r).iter().map(|a| a.as_str()));
            w.write_record(&rec).map_err(csv_err(path))?;
        }
        w.flush()
            .map_err(|e| ExtractionError::Cache(format!("{}: {e}", path.display())))
    }

    pub fn read_csv(path: &Path, dataset: &str) -> Result<Self, ExtractionError> {
        let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
        let header = r.headers().map_err(csv_err(path))?.clone();
        if header.get(0) != Some("article_id") {
            return Err(ExtractionError::Shape(format!(
                "{}: first column must be article_id",
                path.display()
            )));
        }
        let signal_ids: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let mut article_ids = Vec::new();
        let mut answers = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec.map_err(csv_err(path))?;
            article_ids.push(rec.get(0).unwrap_or_default().to_string());
            for cell in rec.iter().skip(1) {
                answers.push(cell.parse::<AnswerValue>().map_err(|e| {
                    ExtractionError::Shape(format!("{} row {}: {e}", path.display(), i + 2))
                })?);
            }
        }
        Self::new(dataset, signal_ids, article_ids, answers)
    }

    /// Keeps only the listed columns, in the given order.
    pub fn select_columns(&self, cols: &[usize]) -> Self {
        let signal_ids = cols.iter().map(|&c| self.signal_ids[c].clone()).collect();
        let mut answers = Vec::with_capacity(self.rows() * cols.len());
        let mut warnings = Vec::with_capacity(self.rows() * cols.len());
        for r in 0..self.rows() {
            for &c in cols {
                answers.push(self.get(r, c));
                warnings.push(self.warnings[r * self.cols() + c]);
            }
        }
        Self {
            dataset: self.dataset.clone(),
            signal_ids,
            article_ids: self.article_ids.clone(),
            answers,
            warnings,
        }
    }
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> ExtractionError + '_ {
    move |e| ExtractionError::Cache(format!("{}: {e}", path.display()))
}

/// Direct veracity verdicts from the zero-shot prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ZeroShotPredictions {
    pub dataset: String,
    pub article_ids: Vec<String>,
    pub predictions: Vec<Label>,
    pub warnings: Vec<bool>,
}

impl ZeroShotPredictions {
    pub fn write_csv(&self, path: &Path) -> Result<(), ExtractionError> {
        let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
        w.write_record(["article_id", "prediction", "warning"])
            .map_err(csv_err(path))?;
        for i in 0..self.article_ids.len() {
            let pred = self.predictions[i].to_string();
            let warn = if self.warnings[i] { "1" } else { "0" };
            w.write_record([self.article_ids[i].as_str(), pred.as_str(), warn])
                .map_err(csv_err(path))?;
        }
        w.flush()
            .map_err(|e| ExtractionError::Cache(format!("{}: {e}", path.display())))
    }

    pub fn read_csv(path: &Path, dataset: &str) -> Result<Self, ExtractionError> {
        let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
        let mut out = Self {
            dataset: dataset.to_string(),
            article_ids: Vec::new(),
            predictions: Vec::new(),
            warnings: Vec::new(),
        };
        for (i, rec) in r.records().enumerate() {
            let rec = rec.map_err(csv_err(path))?;
            let bad = || ExtractionError::Shape(format!("{} row {}", path.display(), i + 2));
            out.article_ids
                .push(rec.get(0).ok_or_else(bad)?.to_string());
            let p: Label = rec
                .get(1)
                .ok_or_else(bad)?
                .trim()
                .parse()
                .map_err(|_| bad())?;
            if p > 1 {
                return Err(bad());
            }
            out.predictions.push(p);
            out.warnings
                .push(rec.get(2).map(|w| w.trim() == "1").unwrap_or(false));
        }
        Ok(out)
    }
}
