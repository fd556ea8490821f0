//! Belief state over the unknown transition model: per-(s,a) Dirichlet
//! posteriors, the visit/epoch counters, and the count-based posterior
//! weight that drives the policy mixing step.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{DeterministicPolicy, StochasticPolicy};

/// Floor applied to the posterior weight so the mixing step never freezes.
pub const W_MIN: f64 = 1e-6;

/// Stable identity for a policy when indexing per-policy counters. Built
/// from the deterministic action vector (stochastic policies use their
/// argmax rows, ties toward the lowest action index).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PolicyKey(u64);

impl PolicyKey {
    pub fn from_deterministic(policy: &DeterministicPolicy) -> Self {
        // FNV-1a over the action indices; stable across platforms.
        let mut h: u64 = 0xcbf29ce484222325;
        for &a in policy.actions() {
            h ^= a as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        PolicyKey(h)
    }

    pub fn from_stochastic(policy: &StochasticPolicy) -> Self {
        Self::from_deterministic(&policy.argmax())
    }

    pub fn raw(&self) -> u64 {
        self.0
    }
}

/// Per-(s,a) Dirichlet pseudo-counts over successor states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirichletPosterior {
    n_states: usize,
    n_actions: usize,
    /// `alpha[(s * A + a) * S + s2]`, all entries > 0.
    alpha: Vec<f64>,
}

impl DirichletPosterior {
    /// Symmetric prior `Dirichlet(alpha0, ..., alpha0)` for every row.
    pub fn uniform_prior(n_states: usize, n_actions: usize, alpha0: f64) -> Result<Self> {
        if alpha0 <= 0.0 {
            return Err(Error::InvalidModel(format!("alpha0 = {alpha0} must be > 0")));
        }
        Ok(Self {
            n_states,
            n_actions,
            alpha: vec![alpha0; n_states * n_actions * n_states],
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn alpha_row(&self, s: usize, a: usize) -> &[f64] {
        let sa = s * self.n_actions + a;
        &self.alpha[sa * self.n_states..(sa + 1) * self.n_states]
    }

    /// Conjugate increment for one observed transition: `alpha(s,a,s') += 1`.
    pub fn bayes_update(&mut self, s: usize, a: usize, s_next: usize) -> Result<()> {
        if s >= self.n_states || a >= self.n_actions || s_next >= self.n_states {
            return Err(Error::IndexOutOfRange(format!(
                "observation ({s}, {a}, {s_next}) with S={}, A={}",
                self.n_states, self.n_actions
            )));
        }
        let sa = s * self.n_actions + a;
        self.alpha[sa * self.n_states + s_next] += 1.0;
        Ok(())
    }

    /// Posterior mean row `alpha / sum(alpha)`.
    pub fn mean_row(&self, s: usize, a: usize) -> Vec<f64> {
        let row = self.alpha_row(s, a);
        let total: f64 = row.iter().sum();
        row.iter().map(|&x| x / total).collect()
    }

    /// Posterior-mean transition tensor.
    pub fn mean_transition(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.alpha.len());
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                out.extend(self.mean_row(s, a));
            }
        }
        out
    }

    /// Draws a full transition tensor, each row independently from its
    /// Dirichlet. Deterministic given the generator state.
    pub fn sample_transition<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.alpha.len());
        let mut draws = vec![0.0; self.n_states];
        for sa in 0..self.n_states * self.n_actions {
            let row = &self.alpha[sa * self.n_states..(sa + 1) * self.n_states];
            let mut total = 0.0;
            for (i, &a) in row.iter().enumerate() {
                let g = Gamma::new(a, 1.0).expect("alpha > 0");
                let x: f64 = g.sample(rng);
                draws[i] = x;
                total += x;
            }
            if total <= 0.0 {
                // All-zero draw is possible only for tiny alpha; fall back to
                // the posterior mean for this row.
                let mean_total: f64 = row.iter().sum();
                out.extend(row.iter().map(|&a| a / mean_total));
                continue;
            }
            out.extend(draws.iter().map(|&x| x / total));
        }
        out
    }
}

/// All run counters: visit counts, transition-pair tables per policy, and
/// the time/epoch bookkeeping the weight and the bound checkers need.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VisitCounters {
    n_states: usize,
    n_actions: usize,
    /// `N_t(s,a)`.
    n_sa: Vec<u64>,
    /// Transition occurrences per (s,a,s').
    n_sas: Vec<u64>,
    /// Per-policy S x S state-pair tables.
    h_pair: BTreeMap<PolicyKey, Vec<u64>>,
    /// Per-policy time-instant counts.
    n_pi_t: BTreeMap<PolicyKey, u64>,
    /// Per-policy completed-epoch counts.
    n_pi_k: BTreeMap<PolicyKey, u64>,
    /// Epoch index per time instant, in recording order.
    epoch_of_t: Vec<u64>,
    last_t: Option<u64>,
    last_epoch: Option<u64>,
}

impl VisitCounters {
    pub fn new(n_states: usize, n_actions: usize) -> Self {
        Self {
            n_states,
            n_actions,
            n_sa: vec![0; n_states * n_actions],
            n_sas: vec![0; n_states * n_actions * n_states],
            ..Default::default()
        }
    }

    pub fn n_sa(&self, s: usize, a: usize) -> u64 {
        self.n_sa[s * self.n_actions + a]
    }

    pub fn n_sa_table(&self) -> &[u64] {
        &self.n_sa
    }

    pub fn n_sas(&self, s: usize, a: usize, s_next: usize) -> u64 {
        self.n_sas[(s * self.n_actions + a) * self.n_states + s_next]
    }

    pub fn pair_table(&self, key: &PolicyKey) -> Option<&[u64]> {
        self.h_pair.get(key).map(|v| v.as_slice())
    }

    /// Total pair-count mass recorded for a policy key.
    pub fn pair_total(&self, key: &PolicyKey) -> u64 {
        self.h_pair
            .get(key)
            .map(|v| v.iter().sum())
            .unwrap_or(0)
    }

    pub fn steps_of(&self, key: &PolicyKey) -> u64 {
        self.n_pi_t.get(key).copied().unwrap_or(0)
    }

    pub fn epochs_of(&self, key: &PolicyKey) -> u64 {
        self.n_pi_k.get(key).copied().unwrap_or(0)
    }

    pub fn total_epochs(&self) -> u64 {
        self.n_pi_k.values().sum()
    }

    pub fn epoch_of_t(&self) -> &[u64] {
        &self.epoch_of_t
    }

    pub fn total_steps(&self) -> u64 {
        self.epoch_of_t.len() as u64
    }

    /// Records one observed step. `t` must be strictly increasing across
    /// calls; the per-policy epoch count bumps on the first step of a new
    /// epoch.
    pub fn record_step(
        &mut self,
        t: u64,
        epoch: u64,
        policy_key: PolicyKey,
        s: usize,
        a: usize,
        s_next: usize,
    ) -> Result<()> {
        if let Some(last) = self.last_t {
            if t <= last {
                return Err(Error::NonMonotoneTime { t, last });
            }
        }
        if s >= self.n_states || a >= self.n_actions || s_next >= self.n_states {
            return Err(Error::IndexOutOfRange(format!(
                "step ({s}, {a}, {s_next}) with S={}, A={}",
                self.n_states, self.n_actions
            )));
        }
        self.last_t = Some(t);
        self.n_sa[s * self.n_actions + a] += 1;
        self.n_sas[(s * self.n_actions + a) * self.n_states + s_next] += 1;
        let n2 = self.n_states * self.n_states;
        let pair = self
            .h_pair
            .entry(policy_key)
            .or_insert_with(|| vec![0; n2]);
        pair[s * self.n_states + s_next] += 1;
        *self.n_pi_t.entry(policy_key).or_insert(0) += 1;
        if self.last_epoch != Some(epoch) {
            *self.n_pi_k.entry(policy_key).or_insert(0) += 1;
            self.last_epoch = Some(epoch);
        }
        self.epoch_of_t.push(epoch);
        Ok(())
    }
}

/// The count-based mixing weight `W = exp(-neg_log_w)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PosteriorWeight {
    pub w: f64,
    pub neg_log_w: f64,
    /// True when the `W_MIN` floor was active.
    pub clamped: bool,
}

impl PosteriorWeight {
    pub fn one() -> Self {
        Self {
            w: 1.0,
            neg_log_w: 0.0,
            clamped: false,
        }
    }

    pub fn zero_clamped() -> Self {
        Self {
            w: W_MIN,
            neg_log_w: -W_MIN.ln(),
            clamped: true,
        }
    }
}

/// Posterior weight for a policy: the total pair-count mass recorded under
/// the key times the log return ratio, exponentiated. The log ratio is
/// clipped at 0 (the current return cannot exceed the optimum) and the
/// weight is floored at `W_MIN`.
pub fn posterior_weight(
    counters: &VisitCounters,
    policy_key: &PolicyKey,
    j_current: f64,
    j_star: f64,
) -> Result<PosteriorWeight> {
    if j_current <= 0.0 {
        return Err(Error::NonPositiveReturn(j_current));
    }
    if j_star <= 0.0 {
        return Err(Error::NonPositiveReturn(j_star));
    }
    let count = counters.pair_total(policy_key) as f64;
    let log_ratio = (j_star / j_current).ln().max(0.0);
    let neg_log_w = count * log_ratio;
    let w = (-neg_log_w).exp();
    if w < W_MIN {
        Ok(PosteriorWeight::zero_clamped())
    } else {
        Ok(PosteriorWeight {
            w,
            neg_log_w,
            clamped: false,
        })
    }
}

/// Checkpoint of the belief state plus counters, for resuming experiments.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PosteriorSnapshot {
    pub alpha: Vec<Vec<Vec<f64>>>,
    pub t: u64,
    pub counters: VisitCounters,
}

impl PosteriorSnapshot {
    pub fn capture(posterior: &DirichletPosterior, t: u64, counters: &VisitCounters) -> Self {
        let alpha = (0..posterior.n_states())
            .map(|s| {
                (0..posterior.n_actions())
                    .map(|a| posterior.alpha_row(s, a).to_vec())
                    .collect()
            })
            .collect();
        Self {
            alpha,
            t,
            counters: counters.clone(),
        }
    }

    pub fn restore(&self) -> Result<DirichletPosterior> {
        let n_states = self.alpha.len();
        let n_actions = self.alpha.first().map(|v| v.len()).unwrap_or(0);
        if n_states == 0 || n_actions == 0 {
            return Err(Error::InvalidModel("empty posterior snapshot".into()));
        }
        let mut flat = Vec::with_capacity(n_states * n_actions * n_states);
        for per_state in &self.alpha {
            for row in per_state {
                if row.len() != n_states || row.iter().any(|&x| x <= 0.0) {
                    return Err(Error::InvalidModel("bad alpha row in snapshot".into()));
                }
                flat.extend_from_slice(row);
            }
        }
        Ok(DirichletPosterior {
            n_states,
            n_actions,
            alpha: flat,
        })
    }
}
