use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{
    exact_step, positive_phase, ExactNegative, LabelModelParams, RowTable, MAX_ENUMERATION,
};
use super::votes::{CorrelationSet, VoteMatrix, ABSTAIN};
use super::LabelModelError;

/// Factor applied to the exact-mode step after each accepted step.
const STEP_GROWTH: f64 = 1.2;
const MAX_STEP: f64 = 1e3;

/// Heavy-ball coefficient for sampled fits, which cannot adapt their step.
const MOMENTUM: f64 = 0.9;

/// Largest number of coupled labeling functions `Auto` still enumerates.
pub const AUTO_EXACT_LIMIT: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitMode {
    /// Exact when the coupled block is small enough, Gibbs otherwise.
    #[default]
    Auto,
    Exact,
    Gibbs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub epochs: usize,
    pub step_size: f64,
    pub seed: u64,
    pub mode: FitMode,
    pub chains: usize,
    pub sweeps: usize,
    pub prior: f64,
    pub init_accuracy: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            epochs: 500,
            step_size: 1.0,
            seed: 0,
            mode: FitMode::Auto,
            chains: 20,
            sweeps: 5,
            prior: 0.5,
            init_accuracy: 0.7,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<(), LabelModelError> {
        let bad = |m: String| Err(LabelModelError::Config(m));
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return bad(format!("step_size {} must be positive", self.step_size));
        }
        if !(self.prior > 0.0 && self.prior < 1.0) {
            return bad(format!("prior {} not in (0, 1)", self.prior));
        }
        if !self.init_accuracy.is_finite() {
            return bad("init_accuracy must be finite".into());
        }
        if self.chains == 0 || self.sweeps == 0 {
            return bad("chains and sweeps must be >= 1".into());
        }
        Ok(())
    }
}

/// Minimises the mean negative log marginal likelihood of `vm` by gradient
/// descent. Exact fits halve the step whenever a step would raise the
/// objective, so the recorded trace never increases. Gibbs fits use a fixed
/// step and return the average of the second half of the iterates.
pub fn fit(
    vm: &VoteMatrix,
    c: &CorrelationSet,
    cfg: &FitConfig,
) -> Result<LabelModelParams, LabelModelError> {
    cfg.validate()?;
    c.check_width(vm.n())?;
    if vm.m() == 0 || vm.n() == 0 {
        return Err(LabelModelError::Shape("empty vote matrix".into()));
    }
    if vm.all_abstain() {
        return Err(LabelModelError::AllAbstain);
    }
    let mut p = LabelModelParams::init(vm.n(), c.clone(), cfg.prior, cfg.init_accuracy);
    p.epochs = cfg.epochs;
    p.seed = cfg.seed;
    let neg = ExactNegative::new(c);
    let exact = match cfg.mode {
        FitMode::Exact if neg.coupled() > MAX_ENUMERATION => {
            return Err(LabelModelError::TooLarge {
                n: neg.coupled(),
                max: MAX_ENUMERATION,
            })
        }
        FitMode::Exact => true,
        FitMode::Gibbs => false,
        FitMode::Auto => neg.coupled() <= AUTO_EXACT_LIMIT,
    };
    let rows = RowTable::new(vm);
    if exact {
        fit_exact(&rows, p, cfg, &neg)
    } else {
        fit_gibbs(&rows, p, cfg)
    }
}

fn fit_exact(
    vm: &RowTable,
    mut p: LabelModelParams,
    cfg: &FitConfig,
    neg: &ExactNegative,
) -> Result<LabelModelParams, LabelModelError> {
    let (mut obj, mut grad) = exact_step(&p, vm, neg);
    if !obj.is_finite() {
        return Err(LabelModelError::Diverged {
            epoch: 0,
            last: Box::new(p),
        });
    }
    p.objective_trace.push(obj);
    let mut step = cfg.step_size;
    let mut trial = p.clone();
    'epochs: for _ in 0..cfg.epochs {
        loop {
            for ((t, w), g) in trial.weights.iter_mut().zip(&p.weights).zip(&grad) {
                *t = w - step * g;
            }
            let (o, g) = exact_step(&trial, vm, neg);
            if o.is_finite() && o <= obj {
                std::mem::swap(&mut p.weights, &mut trial.weights);
                obj = o;
                grad = g;
                p.objective_trace.push(obj);
                step = (step * STEP_GROWTH).min(MAX_STEP);
                break;
            }
            step *= 0.5;
            if step < 1e-12 {
                // No usable descent step left: converged.
                break 'epochs;
            }
        }
    }
    Ok(p)
}

struct Chains {
    y: Vec<u8>,
    lambda: Vec<i8>,
    n: usize,
    rng: ChaCha8Rng,
}

impl Chains {
    fn new(count: usize, n: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y = (0..count).map(|_| rng.random_range(0..=1)).collect();
        let lambda = (0..count * n).map(|_| rng.random_range(-1..=1)).collect();
        Self { y, lambda, n, rng }
    }

    fn categorical(&mut self, logits: &[f64]) -> usize {
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let probs: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let mut u = self.rng.random::<f64>() * probs.iter().sum::<f64>();
        for (i, p) in probs.iter().enumerate() {
            if u < *p {
                return i;
            }
            u -= p;
        }
        probs.len() - 1
    }

    /// One systematic sweep over y then every λ_j, for each chain. Feature
    /// expectations are accumulated into `acc` Rao-Blackwellised: each λ_j
    /// contributes its conditional distribution at the time it is resampled.
    fn sweep(&mut self, p: &LabelModelParams, partners: &[Vec<(usize, usize)>], acc: &mut [f64]) {
        let n = self.n;
        let w = &p.weights;
        let (o0, o1) = (p.class_offset(0), p.class_offset(1));
        const VALUES: [i8; 3] = [ABSTAIN, 0, 1];
        for c in 0..self.y.len() {
            let base = c * n;
            let mut delta = o1 - o0;
            for j in 0..n {
                match self.lambda[base + j] {
                    1 => delta += w[j],
                    0 => delta -= w[j],
                    _ => {}
                }
            }
            let y = self.categorical(&[0.0, delta]) as u8;
            self.y[c] = y;
            for j in 0..n {
                let mut logits = [0.0f64; 3];
                for (slot, v) in VALUES.into_iter().enumerate() {
                    let mut s = 0.0;
                    if v != ABSTAIN {
                        s += w[n + j];
                        if v == y as i8 {
                            s += w[j];
                        }
                    }
                    for &(other, t) in &partners[j] {
                        if self.lambda[base + other] == v {
                            s += w[2 * n + t];
                        }
                    }
                    logits[slot] = s;
                }
                let probs = softmax3(logits);
                acc[j] += probs[1 + y as usize];
                acc[n + j] += probs[1] + probs[2];
                for &(other, t) in &partners[j] {
                    // Each pair is credited once, when its higher index moves.
                    if other < j {
                        let v = self.lambda[base + other];
                        acc[2 * n + t] += probs[(v + 1) as usize];
                    }
                }
                self.lambda[base + j] = VALUES[self.categorical(&logits)];
            }
        }
    }
}

fn softmax3(l: [f64; 3]) -> [f64; 3] {
    let max = l[0].max(l[1]).max(l[2]);
    let e = l.map(|x| (x - max).exp());
    let s = e[0] + e[1] + e[2];
    e.map(|x| x / s)
}

fn fit_gibbs(
    vm: &RowTable,
    mut p: LabelModelParams,
    cfg: &FitConfig,
) -> Result<LabelModelParams, LabelModelError> {
    let n = p.n;
    let mut partners = vec![Vec::new(); n];
    for (t, &(a, b)) in p.correlations.pairs().iter().enumerate() {
        partners[a].push((b, t));
        partners[b].push((a, t));
    }
    let mut chains = Chains::new(cfg.chains, n, cfg.seed);
    let dim = p.dim();
    let mut pos = vec![0.0; dim];
    let mut neg = vec![0.0; dim];
    let mut avg = vec![0.0; dim];
    let mut velocity = vec![0.0; dim];
    let burn = cfg.epochs / 2;
    let mut averaged = 0usize;
    let samples = (cfg.chains * cfg.sweeps) as f64;
    for epoch in 0..cfg.epochs {
        positive_phase(&p, vm, &mut pos);
        neg.fill(0.0);
        for _ in 0..cfg.sweeps {
            chains.sweep(&p, &partners, &mut neg);
        }
        for ((v, ng), ps) in velocity.iter_mut().zip(&neg).zip(&pos) {
            *v = MOMENTUM * *v - cfg.step_size * (ng / samples - ps);
        }
        let next: Vec<f64> = p
            .weights
            .iter()
            .zip(&velocity)
            .map(|(w, v)| w + v)
            .collect();
        if next.iter().any(|w| !w.is_finite()) {
            return Err(LabelModelError::Diverged {
                epoch,
                last: Box::new(p),
            });
        }
        p.weights = next;
        if epoch >= burn {
            averaged += 1;
            for (a, w) in avg.iter_mut().zip(&p.weights) {
                *a += (w - *a) / averaged as f64;
            }
        }
    }
    if averaged > 0 {
        p.weights = avg;
    }
    Ok(p)
}
