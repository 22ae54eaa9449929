use std::path::Path;

use serde::{Deserialize, Serialize};

use super::LabelModelError;
use crate::extraction::AnswerMatrix;
use crate::signals::AnswerValue;

/// Labeling-function output meaning "no vote".
pub const ABSTAIN: i8 = -1;

/// m×n grid of votes in {1, 0, -1}, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteMatrix {
    pub row_ids: Vec<String>,
    pub col_ids: Vec<String>,
    votes: Vec<i8>,
}

impl VoteMatrix {
    pub fn new(
        row_ids: Vec<String>,
        col_ids: Vec<String>,
        votes: Vec<i8>,
    ) -> Result<Self, LabelModelError> {
        if votes.len() != row_ids.len() * col_ids.len() {
            return Err(LabelModelError::Shape(format!(
                "{} votes for a {}x{} matrix",
                votes.len(),
                row_ids.len(),
                col_ids.len()
            )));
        }
        if let Some(v) = votes.iter().find(|v| !matches!(v, -1..=1)) {
            return Err(LabelModelError::Shape(format!(
                "vote {v} is not in {{1, 0, -1}}"
            )));
        }
        Ok(Self {
            row_ids,
            col_ids,
            votes,
        })
    }

    /// Builds a matrix with generated ids; handy for synthetic data.
    pub fn from_rows(rows: &[Vec<i8>]) -> Result<Self, LabelModelError> {
        let n = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n) {
            return Err(LabelModelError::Shape("ragged rows".into()));
        }
        Self::new(
            (0..rows.len()).map(|i| format!("r{i}")).collect(),
            (0..n).map(|j| format!("lf{j}")).collect(),
            rows.concat(),
        )
    }

    pub fn m(&self) -> usize {
        self.row_ids.len()
    }

    pub fn n(&self) -> usize {
        self.col_ids.len()
    }

    pub fn get(&self, i: usize, j: usize) -> i8 {
        self.votes[i * self.n() + j]
    }

    pub fn row(&self, i: usize) -> &[i8] {
        let n = self.n();
        &self.votes[i * n..(i + 1) * n]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[i8]> {
        (0..self.m()).map(|i| self.row(i))
    }

    pub fn votes(&self) -> &[i8] {
        &self.votes
    }

    pub fn all_abstain(&self) -> bool {
        self.votes.iter().all(|&v| v == ABSTAIN)
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            row_ids: rows.iter().map(|&i| self.row_ids[i].clone()).collect(),
            col_ids: self.col_ids.clone(),
            votes: rows
                .iter()
                .flat_map(|&i| self.row(i).iter().copied())
                .collect(),
        }
    }

    pub fn select_columns(&self, cols: &[usize]) -> Self {
        Self {
            row_ids: self.row_ids.clone(),
            col_ids: cols.iter().map(|&j| self.col_ids[j].clone()).collect(),
            votes: self
                .rows()
                .flat_map(|r| cols.iter().map(move |&j| r[j]))
                .collect(),
        }
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), LabelModelError> {
        let mut w = csv::Writer::from_path(path).map_err(io_err(path))?;
        let mut header = vec!["article_id"];
        header.extend(self.col_ids.iter().map(String::as_str));
        w.write_record(&header).map_err(io_err(path))?;
        for (i, id) in self.row_ids.iter().enumerate() {
            let mut rec = vec![id.clone()];
            rec.extend(self.row(i).iter().map(|v| v.to_string()));
            w.write_record(&rec).map_err(io_err(path))?;
        }
        w.flush()
            .map_err(|e| LabelModelError::Io(format!("{}: {e}", path.display())))
    }

    pub fn read_csv(path: &Path) -> Result<Self, LabelModelError> {
        let mut r = csv::Reader::from_path(path).map_err(io_err(path))?;
        let header = r.headers().map_err(io_err(path))?.clone();
        let col_ids = header.iter().skip(1).map(str::to_string).collect();
        let mut row_ids = Vec::new();
        let mut votes = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec.map_err(io_err(path))?;
            row_ids.push(rec.get(0).unwrap_or_default().to_string());
            for cell in rec.iter().skip(1) {
                let v: i8 = cell.trim().parse().map_err(|_| {
                    LabelModelError::Shape(format!(
                        "{} row {}: bad vote {cell:?}",
                        path.display(),
                        i + 2
                    ))
                })?;
                votes.push(v);
            }
        }
        Self::new(row_ids, col_ids, votes)
    }
}

fn io_err(path: &Path) -> impl Fn(csv::Error) -> LabelModelError + '_ {
    move |e| LabelModelError::Io(format!("{}: {e}", path.display()))
}

/// Yes votes misinformation (1), No votes credible (0), Unsure abstains.
pub fn answer_to_vote(a: AnswerValue) -> i8 {
    match a {
        AnswerValue::Yes => 1,
        AnswerValue::No => 0,
        AnswerValue::Unsure => ABSTAIN,
    }
}

pub fn answers_to_votes(am: &AnswerMatrix) -> VoteMatrix {
    VoteMatrix {
        row_ids: am.article_ids.clone(),
        col_ids: am.signal_ids.clone(),
        votes: am.answers.iter().map(|&a| answer_to_vote(a)).collect(),
    }
}

/// Unordered pairs of labeling functions modelled as correlated.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<(usize, usize)>", into = "Vec<(usize, usize)>")]
pub struct CorrelationSet {
    pairs: Vec<(usize, usize)>,
}

impl CorrelationSet {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Normalises each pair to (low, high) and sorts. Rejects self-pairs and
    /// duplicates.
    pub fn new(pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self, LabelModelError> {
        let mut out: Vec<(usize, usize)> = Vec::new();
        for (j, k) in pairs {
            if j == k {
                return Err(LabelModelError::Correlation(format!(
                    "self-pair ({j}, {k})"
                )));
            }
            out.push((j.min(k), j.max(k)));
        }
        out.sort_unstable();
        if let Some(w) = out.windows(2).find(|w| w[0] == w[1]) {
            return Err(LabelModelError::Correlation(format!(
                "duplicate pair {:?}",
                w[0]
            )));
        }
        Ok(Self { pairs: out })
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn check_width(&self, n: usize) -> Result<(), LabelModelError> {
        match self.pairs.iter().find(|&&(_, k)| k >= n) {
            Some(p) => Err(LabelModelError::Correlation(format!(
                "pair {p:?} out of range for {n} labeling functions"
            ))),
            None => Ok(()),
        }
    }

    /// Sorted indices of every labeling function that appears in a pair.
    pub fn members(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.pairs.iter().flat_map(|&(j, k)| [j, k]).collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    /// Relabels indices through `map` (old index -> new index).
    pub fn remap(&self, map: impl Fn(usize) -> usize) -> Result<Self, LabelModelError> {
        Self::new(self.pairs.iter().map(|&(j, k)| (map(j), map(k))))
    }
}

impl TryFrom<Vec<(usize, usize)>> for CorrelationSet {
    type Error = LabelModelError;

    fn try_from(v: Vec<(usize, usize)>) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<CorrelationSet> for Vec<(usize, usize)> {
    fn from(c: CorrelationSet) -> Self {
        c.pairs
    }
}

/// Pairs whose agreement rate, over rows where both vote, is strictly above
/// `threshold`. Pairs that never co-vote are skipped.
pub fn select_correlations(
    vm: &VoteMatrix,
    threshold: f64,
) -> Result<CorrelationSet, LabelModelError> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(LabelModelError::Config(format!(
            "threshold {threshold} not in [0, 1]"
        )));
    }
    if vm.m() < 2 {
        return Err(LabelModelError::Shape("need at least two rows".into()));
    }
    let n = vm.n();
    let mut pairs = Vec::new();
    for j in 0..n {
        for k in j + 1..n {
            let (mut both, mut agree) = (0usize, 0usize);
            for r in vm.rows() {
                if r[j] != ABSTAIN && r[k] != ABSTAIN {
                    both += 1;
                    agree += usize::from(r[j] == r[k]);
                }
            }
            if both > 0 && agree as f64 / both as f64 > threshold {
                pairs.push((j, k));
            }
        }
    }
    CorrelationSet::new(pairs)
}
