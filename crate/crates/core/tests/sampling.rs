mod common;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};
use warmup_core::scheduler::{
    effective_size, max_effective_size, min_effective_size, sampling_probs, solve_temperature,
    solve_tolerance, CumulativeTable, InitialSize, Phase, SamplerState, Temperature,
    WarmupSchedule,
};
use warmup_core::Exec;

fn random_scores(r: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| r.random::<f64>()).collect()
}

#[test]
fn effective_size_agrees_with_monte_carlo() {
    let mut r = common::rng(11);
    for case in 0..6 {
        let n = [8, 30, 120][case % 3];
        let scores = random_scores(&mut r, n);
        let tau = 10f64.powf(r.random_range(-1.5..1.0));
        let p = sampling_probs(&scores, Temperature::Finite(tau)).unwrap();
        let (mean, se) = common::mc_distinct(&p, 4000, 100 + case as u64);
        let e = effective_size(&p);
        assert!(
            (e - mean).abs() <= 4.0 * se,
            "case {case}: {e} vs {mean} ± {se}"
        );
    }
}

#[test]
fn table_draws_pass_chi_square() {
    let mut r = common::rng(5);
    let scores = random_scores(&mut r, 20);
    let p = sampling_probs(&scores, Temperature::Finite(0.3)).unwrap();
    let table = CumulativeTable::new(&p);
    let draws = 200_000;
    let mut counts = [0usize; 20];
    for _ in 0..draws {
        counts[table.draw(&mut r)] += 1;
    }
    let stat: f64 = counts
        .iter()
        .zip(&p)
        .map(|(&c, &pi)| {
            let e = pi * draws as f64;
            (c as f64 - e).powi(2) / e
        })
        .sum();
    let critical = ChiSquared::new(19.0).unwrap().inverse_cdf(0.999);
    assert!(stat < critical, "chi-square {stat} >= {critical}");
}

#[test]
fn uniform_phase_counts_within_four_sigma() {
    let n = 50;
    let scores: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
    let sched = WarmupSchedule::new(n, 10, InitialSize::Absolute(5.0))
        .unwrap()
        .with_seed(8);
    let mut s = SamplerState::new(&scores, sched, Exec::Sequential).unwrap();
    s.set_iteration(11).unwrap();
    assert_eq!(s.phase(), Phase::Uniform);
    let mut counts = vec![0usize; n];
    let batches = 400;
    for _ in 0..batches {
        for i in s.sample_batch(250).unwrap() {
            counts[i] += 1;
        }
    }
    let m = (batches * 250) as f64;
    let (mu, sd) = (
        m / n as f64,
        (m * (1.0 / n as f64) * (1.0 - 1.0 / n as f64)).sqrt(),
    );
    for (i, &c) in counts.iter().enumerate() {
        assert!(
            (c as f64 - mu).abs() <= 4.0 * sd,
            "index {i}: {c} vs {mu} ± {sd}"
        );
    }
}

#[test]
fn effective_size_is_monotone_in_temperature() {
    let mut r = common::rng(21);
    let taus: Vec<f64> = (0..40)
        .map(|k| 10f64.powf(-3.0 + 6.0 * k as f64 / 39.0))
        .collect();
    for v in 0..1000 {
        let n = r.random_range(2..60);
        let scores = random_scores(&mut r, n);
        let sizes: Vec<f64> = taus
            .iter()
            .map(|&t| effective_size(&sampling_probs(&scores, Temperature::Finite(t)).unwrap()))
            .collect();
        for w in sizes.windows(2) {
            assert!(
                w[1] >= w[0] * (1.0 - 1e-12),
                "vector {v}: {} then {}",
                w[0],
                w[1]
            );
        }
        assert!(sizes[0] >= min_effective_size(&scores) * (1.0 - 1e-12));
        assert!(*sizes.last().unwrap() <= max_effective_size(n) * (1.0 + 1e-12));
    }
}

#[test]
fn schedule_is_tracked_at_every_step() {
    let mut r = common::rng(4);
    let scores = random_scores(&mut r, 400);
    let sched = WarmupSchedule::new(400, 300, InitialSize::Fraction(0.05)).unwrap();
    let mut s = SamplerState::new(&scores, sched, Exec::Parallel).unwrap();
    for _ in 0..320 {
        s.advance().unwrap();
        let t = s.iteration();
        let target = s.schedule().target(t);
        assert!(
            (s.achieved() - target).abs() <= solve_tolerance(target),
            "t = {t}"
        );
        if s.phase() == Phase::Warmup && !s.temperature().is_infinite() {
            let p = s.probabilities();
            assert!((effective_size(p) - target).abs() <= solve_tolerance(target));
        }
    }
}

#[test]
fn inverse_mode_reverses_preference_order() {
    let mut r = common::rng(9);
    let mut scores: Vec<f64> = (0..60).map(|i| i as f64 / 59.0).collect();
    scores.shuffle(&mut r);
    let probs = |inverse: bool| {
        let sched = WarmupSchedule::new(60, 50, InitialSize::Absolute(15.0))
            .unwrap()
            .with_inverse(inverse);
        let mut s = SamplerState::new(&scores, sched, Exec::Sequential).unwrap();
        s.advance().unwrap();
        s.probabilities().to_vec()
    };
    let (fwd, inv) = (probs(false), probs(true));
    let order = |key: &dyn Fn(usize) -> f64| {
        let mut idx: Vec<usize> = (0..60).collect();
        idx.sort_by(|&a, &b| key(a).total_cmp(&key(b)));
        idx
    };
    let by_score = order(&|i| scores[i]);
    let mut by_fwd_desc = order(&|i| fwd[i]);
    by_fwd_desc.reverse();
    let by_inv_asc = order(&|i| inv[i]);
    assert_eq!(by_score, by_fwd_desc);
    assert_eq!(by_score, by_inv_asc);
}

#[test]
fn tied_minimum_bounds_the_narrowest_distribution() {
    let scores = [0.0, 0.0, 0.0, 0.4, 0.9, 1.0];
    let floor = min_effective_size(&scores);
    let expected = 3.0 * (1.0 - (2.0f64 / 3.0).powi(6));
    assert!((floor - expected).abs() < 1e-12);
    let p = sampling_probs(&scores, Temperature::Finite(1e-4)).unwrap();
    assert!((effective_size(&p) - floor).abs() < 1e-9);
    assert!(solve_temperature(&scores, floor * 0.99).is_err());
}

proptest! {
    #[test]
    fn probabilities_form_a_distribution(
        scores in proptest::collection::vec(0.0f64..=1.0, 1..80),
        log_tau in -2.0f64..3.0,
    ) {
        let p = sampling_probs(&scores, Temperature::Finite(10f64.powf(log_tau))).unwrap();
        let total: f64 = p.iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|&x| x > 0.0 && x <= 1.0));
        // Lower score, higher probability.
        for i in 0..scores.len() {
            for j in 0..scores.len() {
                if scores[i] < scores[j] {
                    prop_assert!(p[i] >= p[j]);
                }
            }
        }
    }

    #[test]
    fn probabilities_follow_permutations(
        scores in proptest::collection::vec(0.0f64..=1.0, 2..40),
        seed in any::<u64>(),
        log_tau in -2.0f64..2.0,
    ) {
        let tau = Temperature::Finite(10f64.powf(log_tau));
        let mut perm: Vec<usize> = (0..scores.len()).collect();
        perm.shuffle(&mut common::rng(seed));
        let permuted: Vec<f64> = perm.iter().map(|&i| scores[i]).collect();
        let p = sampling_probs(&scores, tau).unwrap();
        let q = sampling_probs(&permuted, tau).unwrap();
        for (k, &i) in perm.iter().enumerate() {
            prop_assert!((q[k] - p[i]).abs() <= 1e-15);
        }
    }

    #[test]
    fn equal_score_multisets_get_equal_mass(
        base in proptest::collection::vec(0.0f64..=1.0, 1..30),
        seed in any::<u64>(),
        log_tau in -2.0f64..1.0,
    ) {
        let mut other = base.clone();
        other.shuffle(&mut common::rng(seed));
        let all: Vec<f64> = base.iter().chain(&other).copied().collect();
        let p = sampling_probs(&all, Temperature::Finite(10f64.powf(log_tau))).unwrap();
        let a: f64 = p[..base.len()].iter().sum();
        let b: f64 = p[base.len()..].iter().sum();
        prop_assert!((a - b).abs() <= 1e-12);
    }
}
