mod common;

use common::*;
use dts_core::mdp::{DeterministicPolicy, StochasticPolicy};
use dts_core::posterior::{
    posterior_weight, DirichletPosterior, PolicyKey, PosteriorSnapshot, VisitCounters, W_MIN,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

fn key_of(actions: &[usize], n_actions: usize) -> PolicyKey {
    PolicyKey::from_deterministic(&DeterministicPolicy::new(actions.to_vec(), n_actions).unwrap())
}

#[test]
fn conjugate_update_two_outcomes() {
    let mut post = DirichletPosterior::uniform_prior(1, 1, 1.0).unwrap();
    // Binary rows are modeled with a 2-state space.
    let mut post2 = DirichletPosterior::uniform_prior(2, 1, 1.0).unwrap();
    post2.bayes_update(0, 0, 0).unwrap();
    let mean = post2.mean_row(0, 0);
    assert!((mean[0] - 2.0 / 3.0).abs() < 1e-15 && (mean[1] - 1.0 / 3.0).abs() < 1e-15);
    post2.bayes_update(0, 0, 1).unwrap();
    post2.bayes_update(0, 0, 1).unwrap();
    // alpha = (2, 3) now; a fresh two-update row gives (1/4, 3/4).
    let mut fresh = DirichletPosterior::uniform_prior(2, 1, 1.0).unwrap();
    fresh.bayes_update(0, 0, 1).unwrap();
    fresh.bayes_update(0, 0, 1).unwrap();
    let mean = fresh.mean_row(0, 0);
    assert!((mean[0] - 0.25).abs() < 1e-15 && (mean[1] - 0.75).abs() < 1e-15);
    // Single-state posterior stays a point mass.
    post.bayes_update(0, 0, 0).unwrap();
    assert_eq!(post.mean_row(0, 0), vec![1.0]);
}

#[test]
fn conjugacy_matches_grid_bayes_oracle() {
    let mut rng = ChaCha12Rng::seed_from_u64(71);
    for _ in 0..100 {
        let mut post = DirichletPosterior::uniform_prior(3, 1, 1.0).unwrap();
        let mut counts = [0u64; 3];
        let n: usize = rng.random_range(0..12);
        for _ in 0..n {
            let o = rng.random_range(0..3);
            post.bayes_update(0, 0, o).unwrap();
            counts[o] += 1;
        }
        let mean = post.mean_row(0, 0);
        let oracle = grid_bayes_mean_3(&counts, 800);
        for i in 0..3 {
            assert!(
                (mean[i] - oracle[i]).abs() < 1e-3,
                "counts {counts:?}: {mean:?} vs {oracle:?}"
            );
        }
    }
}

#[test]
fn conjugacy_closed_form_property() {
    let mut rng = ChaCha12Rng::seed_from_u64(9);
    let alpha0 = 0.5;
    let mut post = DirichletPosterior::uniform_prior(4, 2, alpha0).unwrap();
    let mut counts = vec![0u64; 4 * 2 * 4];
    for _ in 0..500 {
        let (s, a, s2) = (
            rng.random_range(0..4),
            rng.random_range(0..2),
            rng.random_range(0..4),
        );
        post.bayes_update(s, a, s2).unwrap();
        counts[(s * 2 + a) * 4 + s2] += 1;
    }
    for s in 0..4 {
        for a in 0..2 {
            let row_counts = &counts[(s * 2 + a) * 4..(s * 2 + a + 1) * 4];
            let n: u64 = row_counts.iter().sum();
            let mean = post.mean_row(s, a);
            for s2 in 0..4 {
                let expect = (alpha0 + row_counts[s2] as f64) / (4.0 * alpha0 + n as f64);
                assert!((mean[s2] - expect).abs() < 1e-14);
            }
        }
    }
}

#[test]
fn sampling_is_deterministic_and_concentrated() {
    let mut post = DirichletPosterior::uniform_prior(2, 1, 1.0).unwrap();
    // Concentration: alpha ~ (2e5, 1).
    let mut heavy = DirichletPosterior::uniform_prior(2, 1, 1.0).unwrap();
    for _ in 0..200_000 {
        heavy.bayes_update(0, 0, 0).unwrap();
    }
    let mut rng = ChaCha12Rng::seed_from_u64(3);
    let t = heavy.sample_transition(&mut rng);
    assert!(t[0] > 0.99, "sampled p(0) = {}", t[0]);

    let mut rng_a = ChaCha12Rng::seed_from_u64(11);
    let mut rng_b = ChaCha12Rng::seed_from_u64(11);
    post.bayes_update(0, 0, 0).unwrap();
    assert_eq!(
        post.sample_transition(&mut rng_a),
        post.sample_transition(&mut rng_b)
    );
}

#[test]
fn sample_mean_matches_dirichlet_mean() {
    // alpha row (2, 1): mean (2/3, 1/3).
    let mut post = DirichletPosterior::uniform_prior(2, 1, 1.0).unwrap();
    post.bayes_update(0, 0, 0).unwrap();
    let mut rng = ChaCha12Rng::seed_from_u64(17);
    let mut acc = [0.0f64; 2];
    let n = 10_000;
    for _ in 0..n {
        let t = post.sample_transition(&mut rng);
        acc[0] += t[0];
        acc[1] += t[1];
    }
    assert!((acc[0] / n as f64 - 0.667).abs() < 0.01);
    assert!((acc[1] / n as f64 - 0.333).abs() < 0.01);
}

#[test]
fn sampled_rows_are_stochastic() {
    let mut rng = ChaCha12Rng::seed_from_u64(5);
    let mut post = DirichletPosterior::uniform_prior(5, 3, 0.3).unwrap();
    for _ in 0..50 {
        post.bayes_update(
            rng.random_range(0..5),
            rng.random_range(0..3),
            rng.random_range(0..5),
        )
        .unwrap();
    }
    let t = post.sample_transition(&mut rng);
    for sa in 0..15 {
        let sum: f64 = t[sa * 5..(sa + 1) * 5].iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        assert!(t[sa * 5..(sa + 1) * 5].iter().all(|&p| p >= 0.0));
    }
}

#[test]
fn record_step_tracks_all_counters() {
    let mut counters = VisitCounters::new(3, 2);
    let key = key_of(&[1, 0, 1], 2);
    counters.record_step(0, 1, key, 0, 1, 2).unwrap();
    assert_eq!(counters.n_sa(0, 1), 1);
    assert_eq!(counters.n_sas(0, 1, 2), 1);
    assert_eq!(counters.pair_table(&key).unwrap()[2], 1); // H[key](0, 2)
    assert_eq!(counters.pair_total(&key), 1);
    assert_eq!(counters.steps_of(&key), 1);
    assert_eq!(counters.epochs_of(&key), 1);
    // Time must strictly increase.
    assert!(counters.record_step(0, 1, key, 0, 0, 0).is_err());
}

#[test]
fn record_step_count_consistency() {
    let mut rng = ChaCha12Rng::seed_from_u64(23);
    let mut counters = VisitCounters::new(4, 2);
    let key = key_of(&[0, 1, 0, 1], 2);
    for t in 0..1000u64 {
        counters
            .record_step(
                t,
                1 + t / 100,
                key,
                rng.random_range(0..4),
                rng.random_range(0..2),
                rng.random_range(0..4),
            )
            .unwrap();
    }
    for s in 0..4 {
        for a in 0..2 {
            let total: u64 = (0..4).map(|s2| counters.n_sas(s, a, s2)).sum();
            assert_eq!(total, counters.n_sa(s, a));
        }
    }
    assert_eq!(counters.total_steps(), 1000);
    assert_eq!(counters.epochs_of(&key), 10);
    assert_eq!(counters.total_epochs(), 10);
}

#[test]
fn empirical_frequency_envelope_on_known_chain() {
    // Assumption-3-style envelope: on a known 2-state chain the gap between
    // H(s1,s2)/k and d(s1) * theta(s2|s1) stays within rho(k)/sqrt(k) on
    // at least 95% of seeds.
    let p = [0.7, 0.3, 0.4, 0.6];
    let d = [4.0 / 7.0, 3.0 / 7.0]; // stationary of p
    let k = 10_000u64;
    let mut pass = 0;
    let seeds = 40;
    for seed in 0..seeds {
        let mut rng = ChaCha12Rng::seed_from_u64(400 + seed);
        let mut counters = VisitCounters::new(2, 1);
        let key = key_of(&[0, 0], 1);
        let mut s = 0usize;
        for t in 0..k {
            let s2 = sample_index(&p[s * 2..s * 2 + 2], &mut rng);
            counters.record_step(t, 1, key, s, 0, s2).unwrap();
            s = s2;
        }
        let envelope = dts_core::lab::bounds::rho(k as f64) / (k as f64).sqrt();
        let table = counters.pair_table(&key).unwrap();
        let ok = (0..2).all(|s1| {
            (0..2).all(|s2| {
                let freq = table[s1 * 2 + s2] as f64 / k as f64;
                (freq - d[s1] * p[s1 * 2 + s2]).abs() <= envelope
            })
        });
        if ok {
            pass += 1;
        }
    }
    assert!(pass * 100 >= seeds * 95, "only {pass}/{seeds} within envelope");
}

#[test]
fn weight_is_one_at_equal_returns() {
    let counters = VisitCounters::new(2, 2);
    let key = key_of(&[0, 0], 2);
    let w = posterior_weight(&counters, &key, 0.4, 0.4).unwrap();
    assert_eq!(w.w, 1.0);
    assert_eq!(w.neg_log_w, 0.0);
}

#[test]
fn weight_closed_form_three_counts() {
    let mut counters = VisitCounters::new(2, 2);
    let key = key_of(&[0, 0], 2);
    for t in 0..3 {
        counters.record_step(t, 1, key, 0, 0, 1).unwrap();
    }
    let j_star = 0.5;
    let j_current = 0.5 * (-1.0f64).exp(); // ratio e^-1
    let w = posterior_weight(&counters, &key, j_current, j_star).unwrap();
    assert!((w.neg_log_w - 3.0).abs() < 1e-12);
    assert!((w.w - (-3.0f64).exp()).abs() < 1e-12);
}

#[test]
fn weight_clamps_and_rejects() {
    let mut counters = VisitCounters::new(2, 2);
    let key = key_of(&[0, 0], 2);
    for t in 0..1000 {
        counters.record_step(t, 1, key, 0, 0, 1).unwrap();
    }
    let w = posterior_weight(&counters, &key, 0.01, 0.5).unwrap();
    assert_eq!(w.w, W_MIN);
    assert!(w.clamped);
    assert!(posterior_weight(&counters, &key, 0.0, 0.5).is_err());
    assert!(posterior_weight(&counters, &key, -0.1, 0.5).is_err());
    // Ratio clipped at zero: j_current above j_star still gives w = 1.
    let w = posterior_weight(&counters, &key, 0.6, 0.5).unwrap();
    assert_eq!(w.w, 1.0);
}

#[test]
fn snapshot_roundtrip() {
    let mut post = DirichletPosterior::uniform_prior(2, 2, 1.0).unwrap();
    let mut counters = VisitCounters::new(2, 2);
    let key = key_of(&[1, 0], 2);
    post.bayes_update(0, 1, 1).unwrap();
    counters.record_step(0, 1, key, 0, 1, 1).unwrap();
    let snap = PosteriorSnapshot::capture(&post, 1, &counters);
    let text = serde_json::to_string(&snap).unwrap();
    let value: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert!(value["alpha"].is_array());
    assert_eq!(value["t"], 1);
    assert!(value["counters"].is_object());
    let back: PosteriorSnapshot = serde_json::from_str(&text).unwrap();
    let restored = back.restore().unwrap();
    assert_eq!(restored.alpha_row(0, 1), post.alpha_row(0, 1));
}

#[test]
fn policy_key_discriminates_and_canonicalizes() {
    let a = key_of(&[0, 1, 1], 2);
    let b = key_of(&[1, 1, 0], 2);
    assert_ne!(a.raw(), b.raw());
    // A stochastic policy hashes through its argmax rows.
    let det = DeterministicPolicy::new(vec![0, 1, 1], 2).unwrap();
    let stoch = StochasticPolicy::from_deterministic(&det, 2);
    assert_eq!(PolicyKey::from_stochastic(&stoch).raw(), a.raw());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn weight_monotone_in_count_mass(extra in 1u64..50, ratio in 0.1f64..0.99) {
        let key = key_of(&[0, 0], 2);
        let j_star = 0.5;
        let j_current = ratio * j_star;
        let mut counters = VisitCounters::new(2, 2);
        for t in 0..5u64 {
            counters.record_step(t, 1, key, 0, 0, 1).unwrap();
        }
        let before = posterior_weight(&counters, &key, j_current, j_star).unwrap();
        for t in 5..5 + extra {
            counters.record_step(t, 1, key, 0, 0, 1).unwrap();
        }
        let after = posterior_weight(&counters, &key, j_current, j_star).unwrap();
        prop_assert!(after.w <= before.w + 1e-15);
        prop_assert!(after.w >= W_MIN && after.w <= 1.0);
        prop_assert!((after.w - (-after.neg_log_w).exp()).abs() <= 1e-12 || after.clamped);
    }

    #[test]
    fn posterior_mean_rows_sum_to_one(seed in 0u64..5_000) {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut post = DirichletPosterior::uniform_prior(3, 2, 1.0).unwrap();
        for _ in 0..20 {
            post.bayes_update(
                rng.random_range(0..3),
                rng.random_range(0..2),
                rng.random_range(0..3),
            ).unwrap();
        }
        for s in 0..3 {
            for a in 0..2 {
                let sum: f64 = post.mean_row(s, a).iter().sum();
                prop_assert!((sum - 1.0).abs() < 1e-12);
            }
        }
    }
}
