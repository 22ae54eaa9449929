use std::path::Path;

use serde::{Deserialize, Serialize};

use super::votes::{CorrelationSet, VoteMatrix, ABSTAIN};
use super::LabelModelError;

/// Largest n for which `log_partition_exact` enumerates all 2·3^n states.
pub const MAX_ENUMERATION: usize = 12;

/// Fitted weights and fit metadata.
///
/// `weights` is laid out as `[accuracy (n), propensity (n), correlation (|C|)]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelModelParams {
    pub n: usize,
    #[serde(rename = "C")]
    pub correlations: CorrelationSet,
    pub weights: Vec<f64>,
    pub prior: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Mean negative log marginal likelihood after each accepted step, starting
    /// with the initial point. Empty for sampled fits.
    pub objective_trace: Vec<f64>,
}

impl LabelModelParams {
    /// Accuracy weights `init_accuracy`, everything else zero.
    pub fn init(n: usize, correlations: CorrelationSet, prior: f64, init_accuracy: f64) -> Self {
        let mut weights = vec![0.0; 2 * n + correlations.len()];
        weights[..n].fill(init_accuracy);
        Self {
            n,
            correlations,
            weights,
            prior,
            epochs: 0,
            seed: 0,
            objective_trace: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        2 * self.n + self.correlations.len()
    }

    pub fn accuracy(&self) -> &[f64] {
        &self.weights[..self.n]
    }

    pub fn propensity(&self) -> &[f64] {
        &self.weights[self.n..2 * self.n]
    }

    pub fn correlation(&self) -> &[f64] {
        &self.weights[2 * self.n..]
    }

    pub fn final_objective(&self) -> Option<f64> {
        self.objective_trace.last().copied()
    }

    pub fn validate(&self) -> Result<(), LabelModelError> {
        self.correlations.check_width(self.n)?;
        if self.weights.len() != self.dim() {
            return Err(LabelModelError::Shape(format!(
                "expected {} weights for n={} and |C|={}, got {}",
                self.dim(),
                self.n,
                self.correlations.len(),
                self.weights.len()
            )));
        }
        if !(self.prior > 0.0 && self.prior < 1.0) {
            return Err(LabelModelError::Config(format!(
                "prior {} not in (0, 1)",
                self.prior
            )));
        }
        if self.weights.iter().any(|w| !w.is_finite()) {
            return Err(LabelModelError::Config("non-finite weight".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String, LabelModelError> {
        serde_json::to_string_pretty(self).map_err(|e| LabelModelError::Io(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self, LabelModelError> {
        let p: Self = serde_json::from_str(s).map_err(|e| LabelModelError::Io(e.to_string()))?;
        p.validate()?;
        Ok(p)
    }

    pub fn write_json(&self, path: &Path) -> Result<(), LabelModelError> {
        std::fs::write(path, self.to_json()? + "\n")
            .map_err(|e| LabelModelError::Io(format!("{}: {e}", path.display())))
    }

    pub fn read_json(path: &Path) -> Result<Self, LabelModelError> {
        let s = std::fs::read_to_string(path)
            .map_err(|e| LabelModelError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&s)
    }

    /// Log of the fixed class factor, log(2·π_y). Zero for both classes at
    /// prior 0.5, so the partition function at w = 0 is 2·3^n.
    pub(crate) fn class_offset(&self, y: u8) -> f64 {
        let p = if y == 1 { self.prior } else { 1.0 - self.prior };
        (2.0 * p).ln()
    }
}

/// Feature vector φ(row, y) of length 2n+|C|.
pub fn features(row: &[i8], y: u8, c: &CorrelationSet) -> Vec<f64> {
    let n = row.len();
    let mut phi = vec![0.0; 2 * n + c.len()];
    for (j, &v) in row.iter().enumerate() {
        phi[j] = f64::from(u8::from(v == y as i8));
        phi[n + j] = f64::from(u8::from(v != ABSTAIN));
    }
    for (t, &(j, k)) in c.pairs().iter().enumerate() {
        phi[2 * n + t] = f64::from(u8::from(row[j] == row[k]));
    }
    phi
}

/// w·φ(row, y), without the class offset.
pub(crate) fn score(p: &LabelModelParams, row: &[i8], y: u8) -> f64 {
    let n = p.n;
    let w = &p.weights;
    let mut s = 0.0;
    for (j, &v) in row.iter().enumerate() {
        if v != ABSTAIN {
            s += w[n + j];
            if v == y as i8 {
                s += w[j];
            }
        }
    }
    for (t, &(j, k)) in p.correlations.pairs().iter().enumerate() {
        if row[j] == row[k] {
            s += w[2 * n + t];
        }
    }
    s
}

pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    if !max.is_finite() {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// log Z_w by summing over every joint (λ, y) configuration.
pub fn log_partition_exact(p: &LabelModelParams) -> Result<f64, LabelModelError> {
    if p.n > MAX_ENUMERATION {
        return Err(LabelModelError::TooLarge {
            n: p.n,
            max: MAX_ENUMERATION,
        });
    }
    p.validate()?;
    let mut terms = Vec::with_capacity(2 * 3usize.pow(p.n as u32));
    let mut row = vec![ABSTAIN; p.n];
    for_each_config(&mut row, &mut |row| {
        for y in [0u8, 1] {
            terms.push(score(p, row, y) + p.class_offset(y));
        }
    });
    Ok(log_sum_exp(&terms))
}

/// Calls `f` on every assignment of {-1, 0, 1} to `row`.
pub(crate) fn for_each_config(row: &mut [i8], f: &mut impl FnMut(&[i8])) {
    row.fill(ABSTAIN);
    loop {
        f(row);
        let mut j = 0;
        loop {
            if j == row.len() {
                return;
            }
            if row[j] < 1 {
                row[j] += 1;
                break;
            }
            row[j] = ABSTAIN;
            j += 1;
        }
    }
}

/// Probabilistic and discrete labels for each row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeakLabels {
    pub article_ids: Vec<String>,
    pub proba: Vec<f64>,
    pub predictions: Vec<u8>,
    /// Rows on which every labeling function abstained.
    pub all_abstain: Vec<bool>,
}

impl WeakLabels {
    fn from_proba(vm: &VoteMatrix, proba: Vec<f64>) -> Self {
        Self {
            article_ids: vm.row_ids.clone(),
            predictions: proba.iter().map(|&q| discretize(q)).collect(),
            all_abstain: vm.rows().map(|r| r.iter().all(|&v| v == ABSTAIN)).collect(),
            proba,
        }
    }

    pub fn len(&self) -> usize {
        self.proba.len()
    }

    pub fn is_empty(&self) -> bool {
        self.proba.is_empty()
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), LabelModelError> {
        let io = |e: csv::Error| LabelModelError::Io(format!("{}: {e}", path.display()));
        let mut w = csv::Writer::from_path(path).map_err(io)?;
        w.write_record(["article_id", "probability", "prediction"])
            .map_err(io)?;
        for i in 0..self.len() {
            w.write_record([
                self.article_ids[i].as_str(),
                &format!("{:.10}", self.proba[i]),
                &self.predictions[i].to_string(),
            ])
            .map_err(io)?;
        }
        w.flush()
            .map_err(|e| LabelModelError::Io(format!("{}: {e}", path.display())))
    }
}

/// 1 above one half, 0 below, and 0 on an exact tie.
pub fn discretize(q: f64) -> u8 {
    u8::from(q > 0.5)
}

/// ỹ = σ(w·φ(row,1) − w·φ(row,0) + logit(prior)) for every row.
pub fn predict_proba(p: &LabelModelParams, vm: &VoteMatrix) -> Result<WeakLabels, LabelModelError> {
    p.validate()?;
    if vm.n() != p.n {
        return Err(LabelModelError::Shape(format!(
            "model has {} labeling functions, matrix has {}",
            p.n,
            vm.n()
        )));
    }
    let logit = (p.prior / (1.0 - p.prior)).ln();
    let proba = vm
        .rows()
        .map(|r| sigmoid(score(p, r, 1) - score(p, r, 0) + logit))
        .collect();
    Ok(WeakLabels::from_proba(vm, proba))
}

/// Share of non-abstaining votes for class 1; 0.5 on all-abstain rows.
pub fn majority_vote(vm: &VoteMatrix) -> WeakLabels {
    let proba = vm
        .rows()
        .map(|r| {
            let (ones, votes) = r.iter().fold((0usize, 0usize), |(o, t), &v| match v {
                1 => (o + 1, t + 1),
                0 => (o, t + 1),
                _ => (o, t),
            });
            if votes == 0 {
                0.5
            } else {
                ones as f64 / votes as f64
            }
        })
        .collect();
    WeakLabels::from_proba(vm, proba)
}

/// Negative phase evaluated exactly: log Z and E_{p_w}[φ].
///
/// Labeling functions outside every correlated pair contribute independent
/// factors z_j = 1 + e^{p_j}(1 + e^{a_j}) that do not depend on y; only the
/// coupled ones are enumerated.
pub(crate) struct ExactNegative {
    coupled: Vec<usize>,
}

impl ExactNegative {
    pub fn new(c: &CorrelationSet) -> Self {
        Self {
            coupled: c.members(),
        }
    }

    pub fn coupled(&self) -> usize {
        self.coupled.len()
    }

    pub fn eval(&self, p: &LabelModelParams, grad: &mut [f64]) -> f64 {
        let n = p.n;
        let w = &p.weights;
        let mut is_coupled = vec![false; n];
        for &j in &self.coupled {
            is_coupled[j] = true;
        }
        let mut log_z = 0.0;
        for j in (0..n).filter(|&j| !is_coupled[j]) {
            let (a, b) = (w[j], w[n + j]);
            let terms = [0.0, b + a, b];
            let lz = log_sum_exp(&terms);
            log_z += lz;
            grad[j] = (terms[1] - lz).exp();
            grad[n + j] = (terms[1] - lz).exp() + (terms[2] - lz).exp();
        }

        let k = self.coupled.len();
        let mut sub = vec![ABSTAIN; k];
        let mut full = vec![ABSTAIN; n];
        let mut scores = Vec::with_capacity(2 * 3usize.pow(k as u32));
        for_each_config(&mut sub, &mut |s| {
            for (&j, &v) in self.coupled.iter().zip(s) {
                full[j] = v;
            }
            for y in [0u8, 1] {
                scores.push(coupled_score(p, &self.coupled, &full, y) + p.class_offset(y));
            }
        });
        let lz = log_sum_exp(&scores);
        log_z += lz;

        for &j in &self.coupled {
            grad[j] = 0.0;
            grad[n + j] = 0.0;
        }
        for g in &mut grad[2 * n..] {
            *g = 0.0;
        }
        let mut idx = 0;
        for_each_config(&mut sub, &mut |s| {
            for (&j, &v) in self.coupled.iter().zip(s) {
                full[j] = v;
            }
            for y in [0u8, 1] {
                let pr = (scores[idx] - lz).exp();
                idx += 1;
                for &j in &self.coupled {
                    let v = full[j];
                    if v != ABSTAIN {
                        grad[n + j] += pr;
                        if v == y as i8 {
                            grad[j] += pr;
                        }
                    }
                }
                for (t, &(a, b)) in p.correlations.pairs().iter().enumerate() {
                    if full[a] == full[b] {
                        grad[2 * n + t] += pr;
                    }
                }
            }
        });
        log_z
    }
}

fn coupled_score(p: &LabelModelParams, coupled: &[usize], row: &[i8], y: u8) -> f64 {
    let n = p.n;
    let w = &p.weights;
    let mut s = 0.0;
    for &j in coupled {
        let v = row[j];
        if v != ABSTAIN {
            s += w[n + j];
            if v == y as i8 {
                s += w[j];
            }
        }
    }
    for (t, &(j, k)) in p.correlations.pairs().iter().enumerate() {
        if row[j] == row[k] {
            s += w[2 * n + t];
        }
    }
    s
}

/// Distinct vote rows with their multiplicities, in order of first
/// appearance. The marginal likelihood only depends on row counts.
pub(crate) struct RowTable {
    n: usize,
    rows: Vec<i8>,
    counts: Vec<f64>,
    total: f64,
}

impl RowTable {
    pub fn new(vm: &VoteMatrix) -> Self {
        let n = vm.n();
        let mut index: std::collections::HashMap<&[i8], usize> = std::collections::HashMap::new();
        let mut rows = Vec::new();
        let mut counts = Vec::new();
        for r in vm.rows() {
            match index.get(r) {
                Some(&k) => counts[k] += 1.0,
                None => {
                    index.insert(r, counts.len());
                    rows.extend_from_slice(r);
                    counts.push(1.0);
                }
            }
        }
        Self {
            n,
            rows,
            counts,
            total: vm.m() as f64,
        }
    }

    fn iter(&self) -> impl Iterator<Item = (&[i8], f64)> {
        self.rows
            .chunks(self.n.max(1))
            .zip(self.counts.iter().copied())
    }
}

/// Positive phase: mean log marginal likelihood of the observed rows (without
/// log Z) and (1/m)·Σ_i E_{y|Λ_i}[φ], written into `grad`.
pub(crate) fn positive_phase(p: &LabelModelParams, rows: &RowTable, grad: &mut [f64]) -> f64 {
    let n = p.n;
    grad.fill(0.0);
    let (o0, o1) = (p.class_offset(0), p.class_offset(1));
    let mut ll = 0.0;
    for (r, cnt) in rows.iter() {
        let s0 = score(p, r, 0) + o0;
        let s1 = score(p, r, 1) + o1;
        let lse = log_sum_exp(&[s0, s1]);
        ll += cnt * lse;
        let q1 = (s1 - lse).exp();
        for (j, &v) in r.iter().enumerate() {
            match v {
                1 => {
                    grad[j] += cnt * q1;
                    grad[n + j] += cnt;
                }
                0 => {
                    grad[j] += cnt * (1.0 - q1);
                    grad[n + j] += cnt;
                }
                _ => {}
            }
        }
        for (t, &(j, k)) in p.correlations.pairs().iter().enumerate() {
            if r[j] == r[k] {
                grad[2 * n + t] += cnt;
            }
        }
    }
    for g in grad.iter_mut() {
        *g /= rows.total;
    }
    ll / rows.total
}

/// Mean negative log marginal likelihood and its gradient, both exact.
pub fn objective_and_gradient(
    p: &LabelModelParams,
    vm: &VoteMatrix,
) -> Result<(f64, Vec<f64>), LabelModelError> {
    p.validate()?;
    if vm.n() != p.n || vm.m() == 0 {
        return Err(LabelModelError::Shape("matrix does not match model".into()));
    }
    let neg = ExactNegative::new(&p.correlations);
    if neg.coupled() > MAX_ENUMERATION {
        return Err(LabelModelError::TooLarge {
            n: neg.coupled(),
            max: MAX_ENUMERATION,
        });
    }
    Ok(exact_step(p, &RowTable::new(vm), &neg))
}

pub(crate) fn exact_step(
    p: &LabelModelParams,
    rows: &RowTable,
    neg: &ExactNegative,
) -> (f64, Vec<f64>) {
    let mut pos = vec![0.0; p.dim()];
    let ll = positive_phase(p, rows, &mut pos);
    let mut g = vec![0.0; p.dim()];
    let log_z = neg.eval(p, &mut g);
    for (gi, pi) in g.iter_mut().zip(&pos) {
        *gi -= pi;
    }
    (log_z - ll, g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn params(n: usize, c: CorrelationSet, w: Vec<f64>, prior: f64) -> LabelModelParams {
        let mut p = LabelModelParams::init(n, c, prior, 0.0);
        p.weights = w;
        p
    }

    #[test]
    fn feature_examples() {
        let c = CorrelationSet::empty();
        assert_eq!(features(&[1, 0], 1, &c), vec![1.0, 0.0, 1.0, 1.0]);
        assert_eq!(features(&[-1, -1], 0, &c), vec![0.0; 4]);
        let c = CorrelationSet::new([(0, 1)]).unwrap();
        assert_eq!(features(&[1, 1], 0, &c)[4], 1.0);
    }

    #[test]
    fn uniform_partition() {
        let p = LabelModelParams::init(2, CorrelationSet::empty(), 0.5, 0.0);
        assert_relative_eq!(
            log_partition_exact(&p).unwrap(),
            18f64.ln(),
            epsilon = 1e-12
        );
        let p = LabelModelParams::init(3, CorrelationSet::empty(), 0.3, 0.0);
        assert_relative_eq!(
            log_partition_exact(&p).unwrap(),
            54f64.ln(),
            epsilon = 1e-12
        );
        let p = LabelModelParams::init(13, CorrelationSet::empty(), 0.5, 0.0);
        assert!(matches!(
            log_partition_exact(&p),
            Err(LabelModelError::TooLarge { .. })
        ));
    }

    #[test]
    fn factorized_negative_matches_enumeration() {
        let c = CorrelationSet::new([(1, 3)]).unwrap();
        let p = params(
            4,
            c,
            vec![0.3, -0.2, 1.1, 0.4, 0.5, -0.7, 0.2, 0.9, 0.6],
            0.35,
        );
        let mut g = vec![0.0; p.dim()];
        let lz = ExactNegative::new(&p.correlations).eval(&p, &mut g);
        assert_relative_eq!(lz, log_partition_exact(&p).unwrap(), epsilon = 1e-12);
    }

    #[test]
    fn prediction_edge_cases() {
        let vm = VoteMatrix::from_rows(&[vec![1, 0, 1], vec![-1, -1, -1]]).unwrap();
        let p = LabelModelParams::init(3, CorrelationSet::empty(), 0.5, 0.0);
        let wl = predict_proba(&p, &vm).unwrap();
        assert_eq!(wl.proba, vec![0.5, 0.5]);
        assert_eq!(wl.predictions, vec![0, 0]);
        let mut p = LabelModelParams::init(3, CorrelationSet::empty(), 0.2, 1.0);
        p.weights[3] = 2.0;
        let wl = predict_proba(&p, &vm).unwrap();
        assert_relative_eq!(wl.proba[1], 0.2, epsilon = 1e-12);
        assert!(wl.all_abstain[1]);
        let bad = VoteMatrix::from_rows(&[vec![1, 0]]).unwrap();
        assert!(predict_proba(&p, &bad).is_err());
    }

    #[test]
    fn majority_examples() {
        let vm =
            VoteMatrix::from_rows(&[vec![1, 1, 0, -1], vec![1, 0, -1, -1], vec![-1; 4]]).unwrap();
        let wl = majority_vote(&vm);
        assert_eq!(wl.predictions, vec![1, 0, 0]);
        assert_eq!(wl.proba[1], 0.5);
        assert_eq!(wl.all_abstain, vec![false, false, true]);
    }

    #[test]
    fn params_json_round_trip() {
        let mut p = LabelModelParams::init(2, CorrelationSet::new([(0, 1)]).unwrap(), 0.5, 0.7);
        p.objective_trace = vec![1.5, 1.25];
        let s = p.to_json().unwrap();
        assert!(s.contains("\"C\""));
        assert_eq!(LabelModelParams::from_json(&s).unwrap(), p);
        p.weights.pop();
        assert!(LabelModelParams::from_json(&p.to_json().unwrap()).is_err());
    }
}
