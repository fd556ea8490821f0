//! Ground-truth environments with construction-time validation: every
//! shipped environment is irreducible under the uniform policy and keeps
//! rewards inside [r_min, 1] so log return ratios stay finite.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::mdp::TabularMdp;

/// Reward floor applied at construction.
pub const DEFAULT_R_MIN: f64 = 1e-3;

const MAX_CONSTRUCTION_ATTEMPTS: usize = 100;

/// A simulatable environment wrapping the true model (hidden from agents).
pub struct Environment {
    mdp: TabularMdp,
    state: usize,
    rng: ChaCha12Rng,
}

impl Environment {
    /// Wraps a model after verifying every state is reachable from every
    /// other under the uniform policy.
    pub fn new(mdp: TabularMdp, seed: u64) -> Result<Self> {
        if !is_irreducible_under_uniform(&mdp) {
            return Err(Error::SingularChain);
        }
        Ok(Self {
            mdp,
            state: 0,
            rng: ChaCha12Rng::seed_from_u64(seed),
        })
    }

    /// The true model; for the simulator and the lab's checkers only.
    pub fn mdp(&self) -> &TabularMdp {
        &self.mdp
    }

    pub fn state(&self) -> usize {
        self.state
    }

    /// Restarts the rollout with a fresh generator, back at state 0.
    pub fn reseed(&mut self, seed: u64) {
        self.rng = ChaCha12Rng::seed_from_u64(seed);
        self.state = 0;
    }

    /// Draws `s' ~ theta*(.|s,a)` and returns `(s', r(s,a))`.
    pub fn step(&mut self, a: usize) -> Result<(usize, f64)> {
        if a >= self.mdp.n_actions() {
            return Err(Error::IndexOutOfRange(format!(
                "action {a} with A={}",
                self.mdp.n_actions()
            )));
        }
        let s = self.state;
        let row = self.mdp.transition_row(s, a);
        let x: f64 = self.rng.random();
        let mut acc = 0.0;
        let mut next = row.len() - 1;
        for (s2, &p) in row.iter().enumerate() {
            acc += p;
            if x < acc {
                next = s2;
                break;
            }
        }
        self.state = next;
        Ok((next, self.mdp.reward(s, a)))
    }
}

/// Strong connectivity of the positive-probability edge union over actions
/// (the support of the uniform-policy chain).
fn is_irreducible_under_uniform(mdp: &TabularMdp) -> bool {
    let n = mdp.n_states();
    if n == 1 {
        return true;
    }
    let edge = |s: usize, s2: usize| -> bool {
        (0..mdp.n_actions()).any(|a| mdp.transition_row(s, a)[s2] > 0.0)
    };
    let reaches_all = |start: usize, forward: bool| -> bool {
        let mut seen = vec![false; n];
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(s) = stack.pop() {
            for s2 in 0..n {
                if seen[s2] {
                    continue;
                }
                let connected = if forward { edge(s, s2) } else { edge(s2, s) };
                if connected {
                    seen[s2] = true;
                    stack.push(s2);
                }
            }
        }
        seen.iter().all(|&v| v)
    };
    reaches_all(0, true) && reaches_all(0, false)
}

/// Random test-bed model: transition rows uniform on the simplex
/// (`Dirichlet(1,...,1)`), rewards uniform in `[r_min, 1]`, rejection-
/// resampled until irreducible under the uniform policy.
pub fn make_random_mdp(
    n_states: usize,
    n_actions: usize,
    seed: u64,
    r_min: f64,
    gamma: f64,
) -> Result<Environment> {
    if n_states == 0 || n_actions == 0 {
        return Err(Error::InvalidModel("need S >= 1 and A >= 1".into()));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    for _ in 0..MAX_CONSTRUCTION_ATTEMPTS {
        let mut reward = Vec::with_capacity(n_states * n_actions);
        for _ in 0..n_states * n_actions {
            reward.push(r_min + (1.0 - r_min) * rng.random::<f64>());
        }
        let mut transition = Vec::with_capacity(n_states * n_actions * n_states);
        for _ in 0..n_states * n_actions {
            // Dirichlet(1) row via normalized Exp(1) draws.
            let mut row: Vec<f64> = (0..n_states)
                .map(|_| -(1.0 - rng.random::<f64>()).ln())
                .collect();
            let total: f64 = row.iter().sum();
            for v in row.iter_mut() {
                *v /= total;
            }
            transition.extend(row);
        }
        let mdp = TabularMdp::new(n_states, n_actions, reward, transition, gamma)?;
        if is_irreducible_under_uniform(&mdp) {
            return Environment::new(mdp, seed ^ 0x9e3779b97f4a7c15);
        }
    }
    Err(Error::ConstructionFailed(MAX_CONSTRUCTION_ATTEMPTS))
}

/// The classic two-action swim-upstream chain. Action 0 (left) moves left
/// deterministically; action 1 (right) pushes forward 0.35 / stays 0.6 /
/// slips back 0.05 at interior states. A small reward at the left end under
/// left, reward 1 at the right end under right, everything else at the
/// floor.
pub fn make_riverswim(n: usize, r_min: f64, gamma: f64, seed: u64) -> Result<Environment> {
    if n < 2 {
        return Err(Error::InvalidModel("riverswim needs n >= 2".into()));
    }
    let n_actions = 2;
    let mut reward = vec![r_min; n * n_actions];
    reward[0] = r_min + 0.005; // (s=0, left)
    reward[(n - 1) * n_actions + 1] = 1.0; // (s=n-1, right)

    let mut transition = vec![0.0; n * n_actions * n];
    let mut set = |s: usize, a: usize, s2: usize, p: f64| {
        transition[(s * n_actions + a) * n + s2] = p;
    };
    for s in 0..n {
        // Left: deterministic move left.
        set(s, 0, s.saturating_sub(1), 1.0);
        // Right.
        if s == 0 {
            set(s, 1, 0, 0.65);
            set(s, 1, 1, 0.35);
        } else if s == n - 1 {
            set(s, 1, n - 1, 0.6);
            set(s, 1, n - 2, 0.4);
        } else {
            set(s, 1, s - 1, 0.05);
            set(s, 1, s, 0.6);
            set(s, 1, s + 1, 0.35);
        }
    }
    let mdp = TabularMdp::new(n, n_actions, reward, transition, gamma)?;
    Environment::new(mdp, seed)
}

/// Deterministic chain analog: a directed cycle. Action 0 stays, action 1
/// advances (wrapping), with reward 1 for advancing from the last state.
pub fn make_chain(n: usize, r_min: f64, gamma: f64, seed: u64) -> Result<Environment> {
    if n < 2 {
        return Err(Error::InvalidModel("chain needs n >= 2".into()));
    }
    let n_actions = 2;
    let mut reward = vec![r_min; n * n_actions];
    reward[(n - 1) * n_actions + 1] = 1.0;
    let mut transition = vec![0.0; n * n_actions * n];
    for s in 0..n {
        transition[(s * n_actions) * n + s] = 1.0; // stay
        transition[(s * n_actions + 1) * n + (s + 1) % n] = 1.0; // advance
    }
    let mdp = TabularMdp::new(n, n_actions, reward, transition, gamma)?;
    Environment::new(mdp, seed)
}
