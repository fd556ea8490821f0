//! Posterior policy iteration: greedy improvement on the sampled model plus
//! a W-weighted convex mixing of the policy posterior, stopped by marginal
//! KL tolerance.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{self, DeterministicPolicy, StochasticPolicy, TabularMdp};
use crate::posterior::{posterior_weight, PolicyKey, PosteriorWeight, VisitCounters};

/// Improvement threshold: an action must beat the incumbent by this much
/// before a policy-iteration sweep switches to it. Keeps the sweep from
/// cycling on floating-point ties.
const IMPROVE_TOL: f64 = 1e-12;
const MAX_PI_ROUNDS: usize = 10_000;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PpiConfig {
    /// Return-units optimality tolerance.
    pub epsilon: f64,
    /// Iteration cap N.
    pub max_iterations: usize,
    /// Marginal-KL stopping tolerance.
    pub kl_tolerance: f64,
    /// Upper return bound; `gamma * 1` by construction since rewards <= 1.
    pub gamma_big: f64,
}

impl PpiConfig {
    pub fn new(epsilon: f64, max_iterations: usize, kl_tolerance: f64, gamma: f64) -> Result<Self> {
        if epsilon <= 0.0 || kl_tolerance <= 0.0 || max_iterations == 0 {
            return Err(Error::Config(format!(
                "need epsilon > 0, kl_tolerance > 0, max_iterations >= 1 \
                 (got {epsilon}, {kl_tolerance}, {max_iterations})"
            )));
        }
        Ok(Self {
            epsilon,
            max_iterations,
            kl_tolerance,
            gamma_big: gamma,
        })
    }
}

/// Output of one PPI run on a sampled model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PpiResult {
    /// Final policy posterior.
    pub policy: StochasticPolicy,
    /// Greedy-stable deterministic policy of the sampled model.
    pub greedy: DeterministicPolicy,
    pub iterations: usize,
    /// Gain of the mixture at each iteration; nondecreasing within 1e-10.
    pub j_trace: Vec<f64>,
    pub converged: bool,
    /// Marginal KL between the greedy one-hot policy and the final mixture.
    pub kl_final: f64,
}

/// One greedy sweep with respect to a bias vector. The incumbent action is
/// kept unless some action improves on it by more than `IMPROVE_TOL`; among
/// improvers the lowest index wins.
fn greedy_sweep(mdp: &TabularMdp, bias: &[f64], incumbent: &[usize]) -> Vec<usize> {
    let gamma = mdp.discount();
    (0..mdp.n_states())
        .map(|s| {
            let q = |a: usize| -> f64 {
                gamma * mdp.reward(s, a)
                    + mdp
                        .transition_row(s, a)
                        .iter()
                        .zip(bias)
                        .map(|(p, b)| p * b)
                        .sum::<f64>()
            };
            let cur = incumbent[s];
            let cur_q = q(cur);
            let mut best = cur;
            let mut best_q = cur_q;
            for a in 0..mdp.n_actions() {
                let qa = q(a);
                if qa > best_q + IMPROVE_TOL || (qa > best_q && a < best) {
                    best = a;
                    best_q = qa;
                }
            }
            if best_q > cur_q + IMPROVE_TOL {
                best
            } else {
                cur
            }
        })
        .collect()
}

/// Gain-optimal deterministic policy by average-reward policy iteration.
pub fn solve_optimal_policy(mdp: &TabularMdp) -> Result<DeterministicPolicy> {
    let mut actions = vec![0usize; mdp.n_states()];
    for _ in 0..MAX_PI_ROUNDS {
        let policy = DeterministicPolicy::new(actions.clone(), mdp.n_actions())?;
        let stochastic = StochasticPolicy::from_deterministic(&policy, mdp.n_actions());
        let sol = mdp::solve_gain_bias(mdp, &stochastic)?;
        let improved = greedy_sweep(mdp, &sol.bias, &actions);
        if improved == actions {
            return Ok(policy);
        }
        actions = improved;
    }
    Err(Error::NoConvergence(MAX_PI_ROUNDS))
}

/// Rowwise convex combination `w * mu_prev + (1 - w) * onehot(greedy)`.
/// Row sums are forced back to exactly 1 by folding the rounding residual
/// into the greedy entry.
pub fn ppi_step(
    mu_prev: &StochasticPolicy,
    greedy: &DeterministicPolicy,
    w: &PosteriorWeight,
) -> Result<StochasticPolicy> {
    if mu_prev.n_states() != greedy.n_states() {
        return Err(Error::ShapeMismatch(format!(
            "mixture over {} states, greedy over {}",
            mu_prev.n_states(),
            greedy.n_states()
        )));
    }
    let mut out = mu_prev.clone();
    for s in 0..out.n_states() {
        let g = greedy.action(s);
        let row = out.row_mut(s);
        for p in row.iter_mut() {
            *p *= w.w;
        }
        row[g] += 1.0 - w.w;
        // Compensated row sum, residual folded into the greedy entry.
        let mut sum = 0.0;
        let mut c = 0.0;
        for &p in row.iter() {
            let y = p - c;
            let t = sum + y;
            c = (t - sum) - y;
            sum = t;
        }
        row[g] += 1.0 - sum;
    }
    Ok(out)
}

/// Stationary-weighted per-state KL between two policies, with the weights
/// taken from the sampled model's chain under `p`:
/// `sum_s d(s) * KL(p(.|s) || q(.|s))`.
pub fn marginal_kl(
    mdp_sampled: &TabularMdp,
    p: &StochasticPolicy,
    q: &StochasticPolicy,
) -> Result<f64> {
    if p.n_states() != q.n_states() || p.n_actions() != q.n_actions() {
        return Err(Error::ShapeMismatch(
            "policy shapes disagree in marginal KL".into(),
        ));
    }
    let d = mdp::stationary_distribution(mdp_sampled, p)?;
    let mut total = 0.0;
    for s in 0..p.n_states() {
        if d[s] == 0.0 {
            continue;
        }
        let mut kl = 0.0;
        for a in 0..p.n_actions() {
            let pa = p.prob(s, a);
            if pa == 0.0 {
                continue;
            }
            let qa = q.prob(s, a);
            if qa == 0.0 {
                return Err(Error::SupportViolation { s, a });
            }
            kl += pa * (pa / qa).ln();
        }
        total += d[s] * kl;
    }
    Ok(total.max(0.0))
}

/// Runs the posterior policy iteration loop on a sampled model.
///
/// Each iteration evaluates the current mixture, takes the greedy policy of
/// the mixture's bias (so each mixing step is a true policy-improvement
/// step and the gain trace is monotone), recomputes the posterior weight
/// from the counters, and mixes. Stops when the marginal KL between the
/// greedy one-hot policy and the mixture drops below the tolerance.
pub fn run_ppi(
    mdp_sampled: &TabularMdp,
    mu_init: &StochasticPolicy,
    counters: &VisitCounters,
    cfg: &PpiConfig,
) -> Result<PpiResult> {
    let optimal = solve_optimal_policy(mdp_sampled)?;
    let j_star = mdp::gain(
        mdp_sampled,
        &StochasticPolicy::from_deterministic(&optimal, mdp_sampled.n_actions()),
    )?;

    let mut mu = mu_init.clone();
    let mut j_trace = Vec::new();
    let mut converged = false;
    let mut kl_final = f64::INFINITY;
    let mut greedy = optimal.clone();
    let mut iterations = 0;

    for _ in 0..cfg.max_iterations {
        iterations += 1;
        let sol = mdp::solve_gain_bias(mdp_sampled, &mu)?;
        j_trace.push(sol.gain);
        greedy = DeterministicPolicy::new(
            greedy_sweep(mdp_sampled, &sol.bias, mu.argmax().actions()),
            mdp_sampled.n_actions(),
        )?;
        let greedy_onehot = StochasticPolicy::from_deterministic(&greedy, mdp_sampled.n_actions());
        // After many epochs the off-greedy mass of the mixture can underflow
        // to exact zero; a greedy action landing there reads as infinite KL
        // (not converged) and the loop keeps mixing mass back in.
        kl_final = match marginal_kl(mdp_sampled, &greedy_onehot, &mu) {
            Ok(kl) => kl,
            Err(Error::SupportViolation { .. }) => f64::INFINITY,
            Err(e) => return Err(e),
        };
        if kl_final <= cfg.kl_tolerance {
            converged = true;
            break;
        }
        let key = PolicyKey::from_stochastic(&mu);
        let w = posterior_weight(counters, &key, sol.gain.max(f64::MIN_POSITIVE), j_star)?;
        if w.w >= 1.0 {
            // Mixing is frozen (no recorded evidence against the current
            // mixture); further iterations are identical.
            break;
        }
        mu = ppi_step(&mu, &greedy, &w)?;
    }

    Ok(PpiResult {
        policy: mu,
        greedy,
        iterations,
        j_trace,
        converged,
        kl_final,
    })
}
