//! Exact representations and evaluators for finite average-reward MDPs:
//! gain, bias vector, span, stationary distributions, hitting times and
//! per-policy diameters.
//!
//! The gain of a policy is evaluated as `J = gamma * (long-run average
//! reward)`, and the Bellman identity is stated over the gamma-scaled
//! reward: `J + b(s) = gamma*r(s,pi) + sum_s' P(s'|s) b(s')` with the bias
//! normalized so `b(0) = 0`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Row-sum tolerance for probability rows.
pub const ROW_SUM_TOL: f64 = 1e-12;
/// Maximum acceptable Bellman residual for a direct gain/bias solve.
pub const BELLMAN_TOL: f64 = 1e-8;
/// Sweep budget for the iterative fallback evaluator.
const MAX_SWEEPS: usize = 100_000;

/// Ground-truth tabular model: reward table `r(s,a)` and transition tensor
/// `theta(s'|s,a)` over a finite state/action space, plus a discount factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MdpJson", into = "MdpJson")]
pub struct TabularMdp {
    n_states: usize,
    n_actions: usize,
    /// `reward[s * A + a]`, each entry in (0, 1].
    reward: Vec<f64>,
    /// `transition[(s * A + a) * S + s2]`, rows sum to 1.
    transition: Vec<f64>,
    discount: f64,
}

impl TabularMdp {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        reward: Vec<f64>,
        transition: Vec<f64>,
        discount: f64,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(Error::InvalidModel("need S >= 1 and A >= 1".into()));
        }
        if !(0.0 < discount && discount < 1.0) {
            return Err(Error::InvalidModel(format!(
                "discount must lie in (0,1), got {discount}"
            )));
        }
        if reward.len() != n_states * n_actions {
            return Err(Error::ShapeMismatch(format!(
                "reward table has {} entries, expected {}",
                reward.len(),
                n_states * n_actions
            )));
        }
        if transition.len() != n_states * n_actions * n_states {
            return Err(Error::ShapeMismatch(format!(
                "transition tensor has {} entries, expected {}",
                transition.len(),
                n_states * n_actions * n_states
            )));
        }
        for (i, &r) in reward.iter().enumerate() {
            if !(r > 0.0 && r <= 1.0) {
                return Err(Error::InvalidModel(format!(
                    "reward[{i}] = {r} outside (0, 1]"
                )));
            }
        }
        for sa in 0..n_states * n_actions {
            let row = &transition[sa * n_states..(sa + 1) * n_states];
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL * (n_states as f64) {
                return Err(Error::InvalidModel(format!(
                    "transition row {sa} sums to {sum}"
                )));
            }
            if row.iter().any(|&p| p < 0.0) {
                return Err(Error::InvalidModel(format!(
                    "transition row {sa} has a negative entry"
                )));
            }
        }
        Ok(Self {
            n_states,
            n_actions,
            reward,
            transition,
            discount,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.reward[s * self.n_actions + a]
    }

    pub fn reward_table(&self) -> &[f64] {
        &self.reward
    }

    /// Transition row `theta(. | s, a)`.
    pub fn transition_row(&self, s: usize, a: usize) -> &[f64] {
        let sa = s * self.n_actions + a;
        &self.transition[sa * self.n_states..(sa + 1) * self.n_states]
    }

    /// Replaces the transition tensor, keeping rewards and discount. Used to
    /// assemble sampled models from the belief state (rewards are known).
    pub fn with_transition(&self, transition: Vec<f64>) -> Result<Self> {
        Self::new(
            self.n_states,
            self.n_actions,
            self.reward.clone(),
            transition,
            self.discount,
        )
    }

    /// State-to-state matrix `P_pi(s'|s)` induced by a stochastic policy.
    pub fn induced_transition(&self, policy: &StochasticPolicy) -> Result<Vec<f64>> {
        self.check_policy_shape(policy)?;
        let s_n = self.n_states;
        let mut p = vec![0.0; s_n * s_n];
        for s in 0..s_n {
            for a in 0..self.n_actions {
                let w = policy.prob(s, a);
                if w == 0.0 {
                    continue;
                }
                let row = self.transition_row(s, a);
                for s2 in 0..s_n {
                    p[s * s_n + s2] += w * row[s2];
                }
            }
        }
        Ok(p)
    }

    /// Expected reward `r(s, pi)` per state under a stochastic policy.
    pub fn induced_reward(&self, policy: &StochasticPolicy) -> Result<Vec<f64>> {
        self.check_policy_shape(policy)?;
        Ok((0..self.n_states)
            .map(|s| {
                (0..self.n_actions)
                    .map(|a| policy.prob(s, a) * self.reward(s, a))
                    .sum()
            })
            .collect())
    }

    fn check_policy_shape(&self, policy: &StochasticPolicy) -> Result<()> {
        if policy.n_states() != self.n_states || policy.n_actions() != self.n_actions {
            return Err(Error::ShapeMismatch(format!(
                "policy is {}x{}, model is {}x{}",
                policy.n_states(),
                policy.n_actions(),
                self.n_states,
                self.n_actions
            )));
        }
        Ok(())
    }
}

/// JSON document shape: row-major reward `[s][a]`, transitions `[s][a][s']`.
#[derive(Serialize, Deserialize)]
struct MdpJson {
    n_states: usize,
    n_actions: usize,
    discount: f64,
    reward: Vec<Vec<f64>>,
    transition: Vec<Vec<Vec<f64>>>,
}

impl From<TabularMdp> for MdpJson {
    fn from(m: TabularMdp) -> Self {
        let reward = (0..m.n_states)
            .map(|s| (0..m.n_actions).map(|a| m.reward(s, a)).collect())
            .collect();
        let transition = (0..m.n_states)
            .map(|s| {
                (0..m.n_actions)
                    .map(|a| m.transition_row(s, a).to_vec())
                    .collect()
            })
            .collect();
        MdpJson {
            n_states: m.n_states,
            n_actions: m.n_actions,
            discount: m.discount,
            reward,
            transition,
        }
    }
}

impl TryFrom<MdpJson> for TabularMdp {
    type Error = Error;

    fn try_from(j: MdpJson) -> Result<Self> {
        let mut reward = Vec::with_capacity(j.n_states * j.n_actions);
        for row in &j.reward {
            reward.extend_from_slice(row);
        }
        let mut transition = Vec::with_capacity(j.n_states * j.n_actions * j.n_states);
        for per_state in &j.transition {
            for row in per_state {
                transition.extend_from_slice(row);
            }
        }
        TabularMdp::new(j.n_states, j.n_actions, reward, transition, j.discount)
    }
}

/// Deterministic stationary policy: one action per state.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DeterministicPolicy {
    actions: Vec<usize>,
}

impl DeterministicPolicy {
    pub fn new(actions: Vec<usize>, n_actions: usize) -> Result<Self> {
        if actions.is_empty() {
            return Err(Error::InvalidModel("policy over zero states".into()));
        }
        if let Some(&a) = actions.iter().find(|&&a| a >= n_actions) {
            return Err(Error::IndexOutOfRange(format!(
                "action {a} >= {n_actions}"
            )));
        }
        Ok(Self { actions })
    }

    pub fn action(&self, s: usize) -> usize {
        self.actions[s]
    }

    pub fn actions(&self) -> &[usize] {
        &self.actions
    }

    pub fn n_states(&self) -> usize {
        self.actions.len()
    }
}

/// Row-stochastic S x A policy matrix; also used as the policy posterior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StochasticPolicy {
    n_states: usize,
    n_actions: usize,
    probs: Vec<f64>,
}

impl StochasticPolicy {
    pub fn new(n_states: usize, n_actions: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != n_states * n_actions {
            return Err(Error::ShapeMismatch(format!(
                "policy matrix has {} entries, expected {}",
                probs.len(),
                n_states * n_actions
            )));
        }
        for s in 0..n_states {
            let row = &probs[s * n_actions..(s + 1) * n_actions];
            if row.iter().any(|&p| p < 0.0) {
                return Err(Error::InvalidModel(format!("negative probability in row {s}")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL * (n_actions as f64) {
                return Err(Error::InvalidModel(format!("policy row {s} sums to {sum}")));
            }
        }
        Ok(Self {
            n_states,
            n_actions,
            probs,
        })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self {
            n_states,
            n_actions,
            probs: vec![1.0 / n_actions as f64; n_states * n_actions],
        }
    }

    pub fn from_deterministic(policy: &DeterministicPolicy, n_actions: usize) -> Self {
        let n_states = policy.n_states();
        let mut probs = vec![0.0; n_states * n_actions];
        for s in 0..n_states {
            probs[s * n_actions + policy.action(s)] = 1.0;
        }
        Self {
            n_states,
            n_actions,
            probs,
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s * self.n_actions + a]
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub(crate) fn row_mut(&mut self, s: usize) -> &mut [f64] {
        &mut self.probs[s * self.n_actions..(s + 1) * self.n_actions]
    }

    /// Argmax action per state, ties broken toward the lowest index.
    pub fn argmax(&self) -> DeterministicPolicy {
        let actions = (0..self.n_states)
            .map(|s| {
                let row = self.row(s);
                let mut best = 0;
                for (a, &p) in row.iter().enumerate() {
                    if p > row[best] {
                        best = a;
                    }
                }
                best
            })
            .collect();
        DeterministicPolicy { actions }
    }
}

/// Gain and bias of a policy on a model, normalized so `bias[0] = 0`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GainBiasSolution {
    pub gain: f64,
    pub bias: Vec<f64>,
    /// Max Bellman residual (diagnostic, <= 1e-8 on successful solve).
    pub residual: f64,
}

/// Stationary distribution of the chain induced by `policy`: solves
/// `d P = d, sum d = 1` via the normal equations of `(P^T - I)` with the
/// normalization row appended.
pub fn stationary_distribution(mdp: &TabularMdp, policy: &StochasticPolicy) -> Result<Vec<f64>> {
    let p = mdp.induced_transition(policy)?;
    stationary_of_matrix(&p, mdp.n_states())
}

/// Same as [`stationary_distribution`] but over a raw S x S chain matrix.
pub fn stationary_of_matrix(p: &[f64], n: usize) -> Result<Vec<f64>> {
    if n == 1 {
        return Ok(vec![1.0]);
    }
    // Rows 0..n of A are (P^T - I); row n is the all-ones normalization row
    // with rhs 1. Solve the least-squares system A^T A x = A^T b.
    let m = n + 1;
    let mut a = vec![0.0; m * n];
    for i in 0..n {
        for j in 0..n {
            a[i * n + j] = p[j * n + i] - if i == j { 1.0 } else { 0.0 };
        }
    }
    for j in 0..n {
        a[n * n + j] = 1.0;
    }
    let mut ata = vec![0.0; n * n];
    let mut atb = vec![0.0; n];
    for i in 0..n {
        for j in 0..n {
            let mut acc = 0.0;
            for k in 0..m {
                acc += a[k * n + i] * a[k * n + j];
            }
            ata[i * n + j] = acc;
        }
        // b is zero except b[n] = 1, and A[n][i] = 1.
        atb[i] = 1.0;
    }
    let mut d = linalg::solve(ata, atb).ok_or(Error::SingularChain)?;
    for v in d.iter_mut() {
        if *v < -1e-8 {
            return Err(Error::SingularChain);
        }
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    let total: f64 = d.iter().sum();
    if total <= 0.0 {
        return Err(Error::SingularChain);
    }
    for v in d.iter_mut() {
        *v /= total;
    }
    Ok(d)
}

/// Gain `J = gamma * sum_s d(s) r(s, pi)` of a policy.
pub fn gain(mdp: &TabularMdp, policy: &StochasticPolicy) -> Result<f64> {
    let d = stationary_distribution(mdp, policy)?;
    let r = mdp.induced_reward(policy)?;
    Ok(mdp.discount() * d.iter().zip(&r).map(|(di, ri)| di * ri).sum::<f64>())
}

/// Solves the average-reward Bellman equation for `(J, b)` with `b(0) = 0`.
pub fn solve_gain_bias(mdp: &TabularMdp, policy: &StochasticPolicy) -> Result<GainBiasSolution> {
    let n = mdp.n_states();
    let p = mdp.induced_transition(policy)?;
    let r: Vec<f64> = mdp
        .induced_reward(policy)?
        .iter()
        .map(|ri| mdp.discount() * ri)
        .collect();

    if n == 1 {
        return Ok(GainBiasSolution {
            gain: r[0],
            bias: vec![0.0],
            residual: 0.0,
        });
    }

    // Unknowns x = [J, b(1), ..., b(n-1)] with b(0) fixed at 0.
    // Row s: J + b(s) - sum_{s'} P(s'|s) b(s') = r(s).
    let mut a = vec![0.0; n * n];
    for s in 0..n {
        a[s * n] = 1.0;
        for j in 1..n {
            let mut c = -p[s * n + j];
            if s == j {
                c += 1.0;
            }
            a[s * n + j] = c;
        }
    }
    let solution = linalg::solve(a, r.clone());
    let (j, bias) = match solution {
        Some(x) => {
            let mut bias = vec![0.0; n];
            bias[1..n].copy_from_slice(&x[1..n]);
            (x[0], bias)
        }
        None => iterative_gain_bias(&p, &r, n)?,
    };
    let residual = bellman_residual(j, &bias, &p, &r, n);
    if residual > BELLMAN_TOL {
        // Direct solve was numerically poor; retry iteratively before failing.
        let (j2, b2) = iterative_gain_bias(&p, &r, n)?;
        let res2 = bellman_residual(j2, &b2, &p, &r, n);
        if res2 > BELLMAN_TOL {
            return Err(Error::NoConvergence(MAX_SWEEPS));
        }
        return Ok(GainBiasSolution {
            gain: j2,
            bias: b2,
            residual: res2,
        });
    }
    Ok(GainBiasSolution {
        gain: j,
        bias,
        residual,
    })
}

fn bellman_residual(j: f64, bias: &[f64], p: &[f64], r: &[f64], n: usize) -> f64 {
    let mut worst = 0.0_f64;
    for s in 0..n {
        let pb: f64 = (0..n).map(|s2| p[s * n + s2] * bias[s2]).sum();
        worst = worst.max((j + bias[s] - r[s] - pb).abs());
    }
    worst
}

/// Damped relative value iteration fallback. Damping keeps periodic chains
/// from oscillating.
fn iterative_gain_bias(p: &[f64], r: &[f64], n: usize) -> Result<(f64, Vec<f64>)> {
    let mut v = vec![0.0; n];
    let mut next = vec![0.0; n];
    for _ in 0..MAX_SWEEPS {
        for s in 0..n {
            let pv: f64 = (0..n).map(|s2| p[s * n + s2] * v[s2]).sum();
            next[s] = 0.5 * v[s] + 0.5 * (r[s] + pv);
        }
        let base = next[0];
        for x in next.iter_mut() {
            *x -= base;
        }
        let delta = v
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0_f64, f64::max);
        std::mem::swap(&mut v, &mut next);
        if delta < 1e-13 {
            // Gain from one undamped application at the reference state.
            let pv: f64 = (0..n).map(|s2| p[s2] * v[s2]).sum();
            let j = r[0] + pv - v[0];
            return Ok((j, v));
        }
    }
    Err(Error::NoConvergence(MAX_SWEEPS))
}

/// `sp(b) = max(b) - min(b)`.
pub fn span(bias: &[f64]) -> f64 {
    let max = bias.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = bias.iter().cloned().fold(f64::INFINITY, f64::min);
    max - min
}

/// Expected number of steps to first reach `target` from `source` under the
/// chain induced by `policy`: solves `h(s) = 1 + sum_{s' != target} P(s'|s) h(s')`.
pub fn expected_hitting_time(
    mdp: &TabularMdp,
    policy: &StochasticPolicy,
    source: usize,
    target: usize,
) -> Result<f64> {
    let n = mdp.n_states();
    if source >= n || target >= n {
        return Err(Error::IndexOutOfRange(format!(
            "hitting time states ({source}, {target}) with S={n}"
        )));
    }
    if source == target {
        return Ok(0.0);
    }
    let p = mdp.induced_transition(policy)?;
    // Truncated system over states other than target: (I - Q) h = 1.
    let others: Vec<usize> = (0..n).filter(|&s| s != target).collect();
    let m = others.len();
    let mut a = vec![0.0; m * m];
    for (i, &si) in others.iter().enumerate() {
        for (jx, &sj) in others.iter().enumerate() {
            let mut c = -p[si * n + sj];
            if si == sj {
                c += 1.0;
            }
            a[i * m + jx] = c;
        }
    }
    let h = linalg::solve(a, vec![1.0; m]).ok_or(Error::Unreachable { origin: source, target })?;
    let idx = others.iter().position(|&s| s == source).unwrap();
    let value = h[idx];
    if !value.is_finite() || value < 0.0 {
        return Err(Error::Unreachable { origin: source, target });
    }
    Ok(value)
}

/// Max over ordered state pairs of the expected hitting time under `policy`.
pub fn diameter_estimate(mdp: &TabularMdp, policy: &StochasticPolicy) -> Result<f64> {
    let n = mdp.n_states();
    let mut worst = 0.0_f64;
    for s in 0..n {
        for s2 in 0..n {
            if s == s2 {
                continue;
            }
            worst = worst.max(expected_hitting_time(mdp, policy, s, s2)?);
        }
    }
    Ok(worst)
}
