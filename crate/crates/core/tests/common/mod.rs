//! Shared fixtures and independent oracles for the integration tests. The
//! oracles deliberately avoid the library's own solvers: power iteration for
//! stationary distributions, Monte-Carlo rollouts for gains and hitting
//! times, exhaustive policy enumeration for optima, and a grid-Bayes update
//! over the simplex for conjugacy.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use dts_core::mdp::{DeterministicPolicy, StochasticPolicy, TabularMdp};

/// Reward floor standing in for the "zero" rewards in textbook examples.
pub const R_TINY: f64 = 1e-9;

pub fn mdp_from_rows(
    n_states: usize,
    n_actions: usize,
    reward: &[f64],
    transition: &[f64],
    discount: f64,
) -> TabularMdp {
    TabularMdp::new(
        n_states,
        n_actions,
        reward.to_vec(),
        transition.to_vec(),
        discount,
    )
    .expect("valid test model")
}

/// Single-action wrapper around a state-to-state chain.
pub fn chain_mdp(p: &[f64], reward_per_state: &[f64], discount: f64) -> TabularMdp {
    let n = reward_per_state.len();
    assert_eq!(p.len(), n * n);
    mdp_from_rows(n, 1, reward_per_state, p, discount)
}

pub fn single_action_policy(n_states: usize) -> StochasticPolicy {
    StochasticPolicy::uniform(n_states, 1)
}

/// Random irreducible-ish test model (rows strictly positive).
pub fn random_mdp(n_states: usize, n_actions: usize, seed: u64, discount: f64) -> TabularMdp {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut reward = Vec::new();
    for _ in 0..n_states * n_actions {
        reward.push(0.01 + 0.99 * rng.random::<f64>());
    }
    let mut transition = Vec::new();
    for _ in 0..n_states * n_actions {
        let mut row: Vec<f64> = (0..n_states)
            .map(|_| 0.05 + rng.random::<f64>())
            .collect();
        let total: f64 = row.iter().sum();
        for v in row.iter_mut() {
            *v /= total;
        }
        transition.extend(row);
    }
    mdp_from_rows(n_states, n_actions, &reward, &transition, discount)
}

/// Stationary distribution by power iteration on the induced chain.
pub fn power_iterate_stationary(mdp: &TabularMdp, policy: &StochasticPolicy, iters: usize) -> Vec<f64> {
    let n = mdp.n_states();
    let p = mdp.induced_transition(policy).unwrap();
    let mut d = vec![1.0 / n as f64; n];
    for _ in 0..iters {
        let mut next = vec![0.0; n];
        for s in 0..n {
            for s2 in 0..n {
                next[s2] += d[s] * p[s * n + s2];
            }
        }
        // Damping handles periodic chains.
        for s in 0..n {
            d[s] = 0.5 * d[s] + 0.5 * next[s];
        }
    }
    let total: f64 = d.iter().sum();
    d.iter().map(|v| v / total).collect()
}

/// Monte-Carlo rollout estimate of the gamma-scaled long-run average
/// reward under a stochastic policy.
pub fn mc_gain(mdp: &TabularMdp, policy: &StochasticPolicy, steps: usize, seed: u64) -> f64 {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let n = mdp.n_states();
    let mut s = 0usize;
    let mut total = 0.0;
    for _ in 0..steps {
        let a = sample_index(policy.row(s), &mut rng);
        total += mdp.reward(s, a);
        s = sample_index(mdp.transition_row(s, a), &mut rng);
        let _ = n;
    }
    mdp.discount() * total / steps as f64
}

/// Monte-Carlo mean hitting time from `source` to `target`.
pub fn mc_hitting_time(
    mdp: &TabularMdp,
    policy: &StochasticPolicy,
    source: usize,
    target: usize,
    episodes: usize,
    seed: u64,
) -> f64 {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut total = 0u64;
    for _ in 0..episodes {
        let mut s = source;
        let mut steps = 0u64;
        while s != target {
            let a = sample_index(policy.row(s), &mut rng);
            s = sample_index(mdp.transition_row(s, a), &mut rng);
            steps += 1;
            assert!(steps < 10_000_000, "hitting time runaway");
        }
        total += steps;
    }
    total as f64 / episodes as f64
}

pub fn sample_index<R: Rng>(row: &[f64], rng: &mut R) -> usize {
    let x: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in row.iter().enumerate() {
        acc += p;
        if x < acc {
            return i;
        }
    }
    row.len() - 1
}

/// Best gain over every deterministic policy, by exhaustive enumeration.
pub fn brute_force_best_gain(mdp: &TabularMdp) -> f64 {
    let (s_n, a_n) = (mdp.n_states(), mdp.n_actions());
    let mut best = f64::NEG_INFINITY;
    let mut actions = vec![0usize; s_n];
    loop {
        let det = DeterministicPolicy::new(actions.clone(), a_n).unwrap();
        let policy = StochasticPolicy::from_deterministic(&det, a_n);
        if let Ok(j) = dts_core::mdp::gain(mdp, &policy) {
            best = best.max(j);
        }
        // Odometer increment over the policy space.
        let mut i = 0;
        loop {
            if i == s_n {
                return best;
            }
            actions[i] += 1;
            if actions[i] < a_n {
                break;
            }
            actions[i] = 0;
            i += 1;
        }
    }
}

/// Discrete-grid Bayes posterior mean for a 3-outcome row under a uniform
/// (Dirichlet(1,1,1)) prior: enumerates simplex points (i,j,k)/g and
/// reweighs by the observation likelihood.
pub fn grid_bayes_mean_3(counts: &[u64; 3], grid: usize) -> [f64; 3] {
    let g = grid as f64;
    let mut num = [0.0f64; 3];
    let mut den = 0.0f64;
    for i in 0..=grid {
        for j in 0..=(grid - i) {
            let k = grid - i - j;
            let p = [i as f64 / g, j as f64 / g, k as f64 / g];
            // log-likelihood of the counts at this grid point
            let mut ll = 0.0;
            let mut dead = false;
            for o in 0..3 {
                if counts[o] > 0 {
                    if p[o] == 0.0 {
                        dead = true;
                        break;
                    }
                    ll += counts[o] as f64 * p[o].ln();
                }
            }
            if dead {
                continue;
            }
            let w = ll.exp();
            den += w;
            for o in 0..3 {
                num[o] += w * p[o];
            }
        }
    }
    [num[0] / den, num[1] / den, num[2] / den]
}
