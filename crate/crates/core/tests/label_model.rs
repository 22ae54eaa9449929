mod common;

use common::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use veracity::label_model::*;

fn random_params(rng: &mut ChaCha8Rng, n: usize, c: CorrelationSet) -> LabelModelParams {
    let mut p = LabelModelParams::init(n, c, rng.random_range(0.2..0.8), 0.0);
    for w in &mut p.weights {
        *w = rng.random_range(-1.5..1.5);
    }
    p
}

fn random_votes(rng: &mut ChaCha8Rng, m: usize, n: usize) -> VoteMatrix {
    let rows: Vec<Vec<i8>> = (0..m)
        .map(|_| (0..n).map(|_| rng.random_range(-1..=1)).collect())
        .collect();
    let mut vm = VoteMatrix::from_rows(&rows).unwrap();
    if vm.all_abstain() {
        let mut r = rows;
        r[0][0] = 1;
        vm = VoteMatrix::from_rows(&r).unwrap();
    }
    vm
}

fn maybe_pair(rng: &mut ChaCha8Rng, n: usize) -> CorrelationSet {
    if n >= 2 && rng.random_bool(0.5) {
        let j = rng.random_range(0..n);
        let k = (j + rng.random_range(1..n)) % n;
        CorrelationSet::new([(j, k)]).unwrap()
    } else {
        CorrelationSet::empty()
    }
}

#[test]
fn log_partition_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..20 {
        let n = rng.random_range(1..=4);
        let c = maybe_pair(&mut rng, n);
        let p = random_params(&mut rng, n, c);
        let a = log_partition_exact(&p).unwrap();
        let b = brute_log_z(&p);
        assert!((a - b).abs() < 1e-10, "{a} vs {b}");
    }
}

#[test]
fn posterior_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..30 {
        let n = rng.random_range(1..=4);
        let c = maybe_pair(&mut rng, n);
        let p = random_params(&mut rng, n, c);
        let vm = random_votes(&mut rng, 6, n);
        let wl = predict_proba(&p, &vm).unwrap();
        for i in 0..vm.m() {
            assert!((wl.proba[i] - brute_conditional(&p, vm.row(i))).abs() < 1e-10);
        }
    }
}

#[test]
fn objective_matches_brute_force_and_gradient_matches_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..25 {
        let n = rng.random_range(1..=4);
        let c = maybe_pair(&mut rng, n);
        let p = random_params(&mut rng, n, c);
        let vm = random_votes(&mut rng, 8, n);
        let (obj, grad) = objective_and_gradient(&p, &vm).unwrap();
        assert!((obj - brute_nll(&p, &vm)).abs() < 1e-10);
        let h = 1e-5;
        for k in 0..p.dim() {
            let mut plus = p.clone();
            plus.weights[k] += h;
            let mut minus = p.clone();
            minus.weights[k] -= h;
            let fd = (brute_nll(&plus, &vm) - brute_nll(&minus, &vm)) / (2.0 * h);
            let tol = 1e-6 * grad[k].abs().max(fd.abs()).max(1.0);
            assert!((grad[k] - fd).abs() <= tol, "k={k}: {} vs {fd}", grad[k]);
        }
    }
}

#[test]
fn fitted_model_recovers_generating_conditional() {
    let truth = {
        let mut p = LabelModelParams::init(3, CorrelationSet::empty(), 0.5, 0.0);
        p.weights = vec![1.5, 1.0, 0.6, 0.5, -0.3, 0.9];
        p
    };
    let rows = sample_from_model(&truth, 200_000, 4);
    let vm = VoteMatrix::from_rows(&rows).unwrap();
    let p = fit(&vm, &CorrelationSet::empty(), &FitConfig::default()).unwrap();
    let fitted = predict_proba(&p, &vm).unwrap();
    for i in 0..vm.m() {
        let t = brute_conditional(&truth, vm.row(i));
        assert!(
            tv(fitted.proba[i], t) <= 0.02,
            "{:?}: {} vs {t}; {:?}",
            vm.row(i),
            fitted.proba[i],
            p.weights
        );
    }
}

#[test]
fn planted_column_gets_largest_accuracy() {
    // Pure coin-flip columns would make all three columns identically
    // distributed, so the noisy columns carry a faint signal.
    for seed in 0..20 {
        let mut data = synthetic(400, &[1.0, 0.6, 0.6], &[1.0, 1.0, 1.0], seed);
        let vm = std::mem::replace(&mut data.votes, VoteMatrix::from_rows(&[vec![0]]).unwrap());
        let p = fit(
            &vm,
            &CorrelationSet::empty(),
            &FitConfig {
                seed,
                ..Default::default()
            },
        )
        .unwrap();
        let a = p.accuracy();
        assert!(a[0] > a[1] && a[0] > a[2], "seed {seed}: {a:?}");
    }
}

#[test]
fn single_abstaining_column_is_an_error() {
    let vm = VoteMatrix::from_rows(&[vec![-1], vec![-1], vec![-1]]).unwrap();
    assert!(matches!(
        fit(&vm, &CorrelationSet::empty(), &FitConfig::default()),
        Err(LabelModelError::AllAbstain)
    ));
}

#[test]
fn gibbs_agrees_with_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for seed in 0..10u64 {
        // Fewer voters leave the accuracies weakly identified, where sampled
        // and exact fits settle at visibly different points of a flat valley.
        let n = 4;
        let c = if seed % 2 == 0 {
            CorrelationSet::new([(0, n - 1)]).unwrap()
        } else {
            CorrelationSet::empty()
        };
        let mut truth = LabelModelParams::init(n, c.clone(), 0.5, 0.0);
        for (k, w) in truth.weights.iter_mut().enumerate() {
            *w = if k < n {
                rng.random_range(0.5..2.0)
            } else {
                rng.random_range(-0.5..1.0)
            };
        }
        let vm = VoteMatrix::from_rows(&sample_from_model(&truth, 2000, seed)).unwrap();
        let exact = fit(
            &vm,
            &c,
            &FitConfig {
                mode: FitMode::Exact,
                seed,
                ..Default::default()
            },
        )
        .unwrap();
        let gibbs = fit(
            &vm,
            &c,
            &FitConfig {
                mode: FitMode::Gibbs,
                seed,
                ..Default::default()
            },
        )
        .unwrap();
        let pe = predict_proba(&exact, &vm).unwrap();
        let pg = predict_proba(&gibbs, &vm).unwrap();
        for i in 0..vm.m() {
            assert!(
                tv(pe.proba[i], pg.proba[i]) <= 0.05,
                "seed {seed} row {:?}",
                vm.row(i)
            );
        }
    }
}

#[test]
fn equal_accuracy_model_reduces_to_majority_vote() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..50 {
        let n = rng.random_range(1..=7);
        let vm = random_votes(&mut rng, 30, n);
        let p = LabelModelParams::init(n, CorrelationSet::empty(), 0.5, rng.random_range(0.1..3.0));
        let lm = predict_proba(&p, &vm).unwrap();
        let mv = majority_vote(&vm);
        for i in 0..vm.m() {
            if mv.proba[i] != 0.5 {
                assert_eq!(lm.predictions[i], mv.predictions[i]);
            }
        }
    }
}

fn small_fit_cfg() -> FitConfig {
    FitConfig {
        epochs: 60,
        ..Default::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn permuting_columns_permutes_weights(seed in 0u64..1000, n in 2usize..=4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vm = random_votes(&mut rng, 12, n);
        let c = maybe_pair(&mut rng, n);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.reverse();
        perm.rotate_left(seed as usize % n);
        // Column perm[j] of the original becomes column j.
        let inverse = {
            let mut inv = vec![0; n];
            for (j, &o) in perm.iter().enumerate() { inv[o] = j; }
            inv
        };
        let vp = vm.select_columns(&perm);
        let cp = c.remap(|o| inverse[o]).unwrap();
        let a = fit(&vm, &c, &small_fit_cfg()).unwrap();
        let b = fit(&vp, &cp, &small_fit_cfg()).unwrap();
        for (j, &o) in perm.iter().enumerate() {
            prop_assert!((a.accuracy()[o] - b.accuracy()[j]).abs() < 1e-7);
            prop_assert!((a.propensity()[o] - b.propensity()[j]).abs() < 1e-7);
        }
        let pa = predict_proba(&a, &vm).unwrap();
        let pb = predict_proba(&b, &vp).unwrap();
        for i in 0..vm.m() {
            prop_assert!((pa.proba[i] - pb.proba[i]).abs() < 1e-7);
        }
    }

    #[test]
    fn flipping_votes_and_prior_flips_posterior(seed in 0u64..1000, n in 1usize..=4, prior in 0.2f64..0.8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vm = random_votes(&mut rng, 10, n);
        let c = maybe_pair(&mut rng, n);
        let flipped: Vec<Vec<i8>> = vm
            .rows()
            .map(|r| r.iter().map(|&v| if v == -1 { -1 } else { 1 - v }).collect())
            .collect();
        let vf = VoteMatrix::from_rows(&flipped).unwrap();
        let a = fit(&vm, &c, &FitConfig { prior, ..small_fit_cfg() }).unwrap();
        let b = fit(&vf, &c, &FitConfig { prior: 1.0 - prior, ..small_fit_cfg() }).unwrap();
        let pa = predict_proba(&a, &vm).unwrap();
        let pb = predict_proba(&b, &vf).unwrap();
        for i in 0..vm.m() {
            prop_assert!((pa.proba[i] - (1.0 - pb.proba[i])).abs() < 1e-7);
        }
    }

    #[test]
    fn exact_objective_never_increases(seed in 0u64..1000, n in 1usize..=5, step in 0.05f64..20.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vm = random_votes(&mut rng, 15, n);
        let c = maybe_pair(&mut rng, n);
        let p = fit(&vm, &c, &FitConfig { mode: FitMode::Exact, step_size: step, ..small_fit_cfg() }).unwrap();
        prop_assert!(p.objective_trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn weak_labels_respect_tie_rule(q in 0.0f64..=1.0) {
        prop_assert_eq!(discretize(q), u8::from(q > 0.5));
    }

    #[test]
    fn encoding_alphabet(yes in any::<bool>(), unsure in any::<bool>()) {
        use veracity::signals::AnswerValue;
        let a = match (yes, unsure) {
            (_, true) => AnswerValue::Unsure,
            (true, false) => AnswerValue::Yes,
            (false, false) => AnswerValue::No,
        };
        prop_assert!([1i8, 0, -1].contains(&answer_to_vote(a)));
    }
}

#[test]
fn beats_majority_vote_on_planted_sources() {
    let (mut lm_sum, mut mv_sum, mut rho_sum) = (0.0, 0.0, 0.0);
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let acc: Vec<f64> = (0..10).map(|_| rng.random_range(0.55..0.9)).collect();
        let prop: Vec<f64> = (0..10).map(|_| rng.random_range(0.4..0.9)).collect();
        let data = synthetic(1000, &acc, &prop, seed);
        let p = fit(
            &data.votes,
            &CorrelationSet::empty(),
            &FitConfig {
                seed,
                ..Default::default()
            },
        )
        .unwrap();
        let lm = brute_f1_macro(
            &predict_proba(&p, &data.votes).unwrap().predictions,
            &data.labels,
        );
        let mv = brute_f1_macro(&majority_vote(&data.votes).predictions, &data.labels);
        assert!(lm >= mv - 0.01, "seed {seed}: {lm} vs {mv}");
        lm_sum += lm;
        mv_sum += mv;
        rho_sum += spearman(p.accuracy(), &acc);
    }
    assert!(lm_sum > mv_sum);
    assert!(rho_sum / 20.0 >= 0.8, "mean spearman {}", rho_sum / 20.0);
}
