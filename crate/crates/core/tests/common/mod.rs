//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use veracity::label_model::{LabelModelParams, VoteMatrix};

/// Unnormalised log joint, written out directly from the factor definitions.
pub fn brute_log_joint(p: &LabelModelParams, row: &[i8], y: u8) -> f64 {
    let n = p.n;
    let mut s = 0.0;
    for j in 0..n {
        if row[j] == y as i8 {
            s += p.weights[j];
        }
        if row[j] != -1 {
            s += p.weights[n + j];
        }
    }
    for (t, &(a, b)) in p.correlations.pairs().iter().enumerate() {
        if row[a] == row[b] {
            s += p.weights[2 * n + t];
        }
    }
    let prior = if y == 1 { p.prior } else { 1.0 - p.prior };
    s + (2.0 * prior).ln()
}

fn all_rows(n: usize) -> Vec<Vec<i8>> {
    let mut out = vec![vec![]];
    for _ in 0..n {
        out = out
            .into_iter()
            .flat_map(|r| {
                [-1i8, 0, 1].into_iter().map(move |v| {
                    let mut r = r.clone();
                    r.push(v);
                    r
                })
            })
            .collect();
    }
    out
}

pub fn brute_log_z(p: &LabelModelParams) -> f64 {
    let mut total = 0.0;
    for row in all_rows(p.n) {
        for y in [0u8, 1] {
            total += brute_log_joint(p, &row, y).exp();
        }
    }
    total.ln()
}

/// p(y = 1 | row) via the joint and the marginal of the row.
pub fn brute_conditional(p: &LabelModelParams, row: &[i8]) -> f64 {
    let j1 = brute_log_joint(p, row, 1).exp();
    let j0 = brute_log_joint(p, row, 0).exp();
    j1 / (j0 + j1)
}

/// Mean negative log marginal likelihood by enumeration.
pub fn brute_nll(p: &LabelModelParams, vm: &VoteMatrix) -> f64 {
    let log_z = brute_log_z(p);
    let mut total = 0.0;
    for i in 0..vm.m() {
        let r = vm.row(i);
        let marg = brute_log_joint(p, r, 0).exp() + brute_log_joint(p, r, 1).exp();
        total += log_z - marg.ln();
    }
    total / vm.m() as f64
}

pub struct Synthetic {
    pub votes: VoteMatrix,
    pub labels: Vec<u8>,
}

/// Class-conditionally independent labeling functions: each votes with
/// probability `propensity[j]` and, when voting, is correct with probability
/// `accuracy[j]`.
pub fn synthetic(m: usize, accuracy: &[f64], propensity: &[f64], seed: u64) -> Synthetic {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels = Vec::with_capacity(m);
    let mut rows = Vec::with_capacity(m);
    for _ in 0..m {
        let y: u8 = rng.random_range(0..=1);
        let row: Vec<i8> = accuracy
            .iter()
            .zip(propensity)
            .map(|(&acc, &prop)| {
                if rng.random::<f64>() >= prop {
                    -1
                } else if rng.random::<f64>() < acc {
                    y as i8
                } else {
                    1 - y as i8
                }
            })
            .collect();
        labels.push(y);
        rows.push(row);
    }
    Synthetic {
        votes: VoteMatrix::from_rows(&rows).unwrap(),
        labels,
    }
}

/// Rows sampled from a given log-linear model by enumeration.
pub fn sample_from_model(p: &LabelModelParams, m: usize, seed: u64) -> Vec<Vec<i8>> {
    let states: Vec<(Vec<i8>, f64)> = all_rows(p.n)
        .into_iter()
        .map(|r| {
            let w = brute_log_joint(p, &r, 0).exp() + brute_log_joint(p, &r, 1).exp();
            (r, w)
        })
        .collect();
    let total: f64 = states.iter().map(|s| s.1).sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..m)
        .map(|_| {
            let mut u = rng.random::<f64>() * total;
            for (r, w) in &states {
                if u < *w {
                    return r.clone();
                }
                u -= w;
            }
            states.last().unwrap().0.clone()
        })
        .collect()
}

fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).unwrap());
    let mut r = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0;
        for k in i..=j {
            r[idx[k]] = avg;
        }
        i = j + 1;
    }
    r
}

pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (ranks(a), ranks(b));
    let n = ra.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

/// Macro F1 by explicit per-class counting.
pub fn brute_f1_macro(preds: &[u8], labels: &[u8]) -> f64 {
    let mut total = 0.0;
    for class in [0u8, 1] {
        let mut tp = 0.0;
        let mut fp = 0.0;
        let mut fn_ = 0.0;
        for (&p, &l) in preds.iter().zip(labels) {
            match (p == class, l == class) {
                (true, true) => tp += 1.0,
                (true, false) => fp += 1.0,
                (false, true) => fn_ += 1.0,
                _ => {}
            }
        }
        total += if tp + fp + fn_ == 0.0 {
            1.0
        } else {
            2.0 * tp / (2.0 * tp + fp + fn_)
        };
    }
    total / 2.0
}

/// Total-variation distance between two Bernoulli conditionals.
pub fn tv(a: f64, b: f64) -> f64 {
    (a - b).abs()
}
