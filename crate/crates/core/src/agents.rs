//! Online agents over the environment interface: the double-Thompson-
//! sampling agent (posterior sampling of the transition model plus a
//! posterior-weighted policy mixture), its no-mixing variant, and the
//! epsilon-greedy / random / oracle baselines.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::mdp::{self, DeterministicPolicy, StochasticPolicy, TabularMdp};
use crate::posterior::{posterior_weight, DirichletPosterior, PolicyKey, VisitCounters};
use crate::ppi::{self, PpiConfig};

/// Weight drift that forces a gain refresh and a fresh mixing step.
const W_REFRESH_TOL: f64 = 1e-4;

/// Epoch bookkeeping: start time, previous length, visit snapshot and the
/// two stopping rules (length growth and visit-count doubling).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpisodeSchedule {
    /// Start time of the current epoch.
    pub t_k: u64,
    /// Previous epoch length `T_{k-1}` (0 before the first epoch, which
    /// makes the first epoch one step long).
    pub t_prev_len: u64,
    /// Snapshot of `N_{t_k}(s,a)` at epoch start.
    pub n_at_start: Vec<u64>,
    /// Epoch index; 0 until the first epoch begins.
    pub k: u64,
    /// Set when either stopping rule fired; the next
    /// `begin_epoch_if_needed` call starts a new epoch.
    pub needs_new_epoch: bool,
    /// The pending epoch switch was caused by the doubling rule.
    pub pending_doubling: bool,
}

impl EpisodeSchedule {
    fn new(n_pairs: usize) -> Self {
        Self {
            t_k: 0,
            t_prev_len: 0,
            n_at_start: vec![0; n_pairs],
            k: 0,
            needs_new_epoch: false,
            pending_doubling: false,
        }
    }
}

/// Per-epoch record kept for the regret decomposition and diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub k: u64,
    pub t_start: u64,
    pub doubling_triggered: bool,
    /// The model the epoch acts on (sampled for posterior agents).
    pub model: TabularMdp,
    pub w_at_start: f64,
    pub ppi_iterations: usize,
    pub kl_at_stop: f64,
    pub ppi_converged: bool,
}

/// Common interface the experiment runner drives.
pub trait Agent {
    /// Starts a new epoch when the stopping rules fired (or at `t = 0`).
    fn begin_epoch_if_needed(&mut self, t: u64) -> Result<()>;
    fn act(&mut self, s: usize) -> usize;
    fn observe(&mut self, s: usize, a: usize, r: f64, s_next: usize, t: u64) -> Result<()>;
    fn current_policy(&self) -> StochasticPolicy;
    /// Bumps whenever `current_policy` changes; lets the runner snapshot
    /// policies only on change.
    fn policy_version(&self) -> u64;
    fn epoch(&self) -> u64;
    fn last_w(&self) -> f64;
    fn epoch_log(&self) -> &[EpochRecord];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PosteriorMode {
    /// Full mixing update.
    Dts,
    /// Mixing disabled: the epoch policy is the greedy policy of the
    /// sampled model (the W -> 0 limit).
    Tsde,
}

/// Posterior-sampling agent. Rewards and the discount are known; only the
/// transition tensor is learned.
pub struct DtsAgent {
    n_states: usize,
    n_actions: usize,
    reward: Vec<f64>,
    discount: f64,
    cfg: PpiConfig,
    mode: PosteriorMode,
    strict_per_step: bool,

    pub posterior: DirichletPosterior,
    pub counters: VisitCounters,
    pub mu_policy: StochasticPolicy,
    pub schedule: EpisodeSchedule,
    rng: ChaCha12Rng,

    // Per-epoch cache.
    epoch_model: Option<TabularMdp>,
    epoch_greedy: Option<DeterministicPolicy>,
    j_star: f64,
    j_current: f64,
    w_last: f64,
    policy_key: PolicyKey,
    version: u64,
    epochs: Vec<EpochRecord>,
}

impl DtsAgent {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        n_states: usize,
        n_actions: usize,
        reward: Vec<f64>,
        discount: f64,
        cfg: PpiConfig,
        mode: PosteriorMode,
        strict_per_step: bool,
        alpha0: f64,
        seed: u64,
    ) -> Result<Self> {
        let mu = StochasticPolicy::uniform(n_states, n_actions);
        Ok(Self {
            n_states,
            n_actions,
            reward,
            discount,
            cfg,
            mode,
            strict_per_step,
            posterior: DirichletPosterior::uniform_prior(n_states, n_actions, alpha0)?,
            counters: VisitCounters::new(n_states, n_actions),
            policy_key: PolicyKey::from_stochastic(&mu),
            mu_policy: mu,
            schedule: EpisodeSchedule::new(n_states * n_actions),
            rng: ChaCha12Rng::seed_from_u64(seed),
            epoch_model: None,
            epoch_greedy: None,
            j_star: 0.0,
            j_current: 0.0,
            w_last: 1.0,
            version: 0,
            epochs: Vec::new(),
        })
    }

    fn sampled_model(&mut self) -> Result<TabularMdp> {
        let transition = self.posterior.sample_transition(&mut self.rng);
        TabularMdp::new(
            self.n_states,
            self.n_actions,
            self.reward.clone(),
            transition,
            self.discount,
        )
    }

    fn set_policy(&mut self, mu: StochasticPolicy) {
        self.policy_key = PolicyKey::from_stochastic(&mu);
        self.mu_policy = mu;
        self.version += 1;
    }

    /// Runs the mixing loop (or the greedy shortcut) for a fresh epoch.
    fn refresh_epoch_policy(&mut self, model: &TabularMdp) -> Result<(f64, usize, f64, bool)> {
        match self.mode {
            PosteriorMode::Tsde => {
                let greedy = ppi::solve_optimal_policy(model)?;
                let onehot = StochasticPolicy::from_deterministic(&greedy, self.n_actions);
                self.j_star = mdp::gain(model, &onehot)?;
                self.j_current = self.j_star;
                self.epoch_greedy = Some(greedy);
                self.set_policy(onehot);
                self.w_last = 0.0;
                Ok((0.0, 0, 0.0, true))
            }
            PosteriorMode::Dts => {
                let result = ppi::run_ppi(model, &self.mu_policy, &self.counters, &self.cfg)?;
                self.j_star = mdp::gain(
                    model,
                    &StochasticPolicy::from_deterministic(&result.greedy, self.n_actions),
                )?;
                self.j_current = mdp::gain(model, &result.policy)?;
                self.epoch_greedy = Some(result.greedy.clone());
                self.set_policy(result.policy.clone());
                let w = posterior_weight(
                    &self.counters,
                    &self.policy_key,
                    self.j_current.max(f64::MIN_POSITIVE),
                    self.j_star,
                )?;
                self.w_last = w.w;
                Ok((w.w, result.iterations, result.kl_final, result.converged))
            }
        }
    }

    /// Per-step re-mix: recompute W from the counters with cached gains and
    /// only re-mix (and refresh the current gain) when the weight moved.
    fn remix_if_needed(&mut self) -> Result<()> {
        let model = match (&self.epoch_model, &self.epoch_greedy) {
            (Some(m), Some(_)) => m.clone(),
            _ => return Ok(()),
        };
        if self.strict_per_step {
            let (w, _, _, _) = self.refresh_epoch_policy(&model)?;
            self.w_last = w;
            return Ok(());
        }
        if self.mode == PosteriorMode::Tsde {
            return Ok(());
        }
        let probe = posterior_weight(
            &self.counters,
            &self.policy_key,
            self.j_current.max(f64::MIN_POSITIVE),
            self.j_star,
        )?;
        if (probe.w - self.w_last).abs() <= W_REFRESH_TOL {
            return Ok(());
        }
        self.j_current = mdp::gain(&model, &self.mu_policy)?;
        let w = posterior_weight(
            &self.counters,
            &self.policy_key,
            self.j_current.max(f64::MIN_POSITIVE),
            self.j_star,
        )?;
        let greedy = self.epoch_greedy.clone().expect("epoch cache");
        let mixed = ppi::ppi_step(&self.mu_policy, &greedy, &w)?;
        self.set_policy(mixed);
        self.w_last = w.w;
        Ok(())
    }
}

impl Agent for DtsAgent {
    fn begin_epoch_if_needed(&mut self, t: u64) -> Result<()> {
        let first = self.schedule.k == 0 && t == 0;
        if !first && !self.schedule.needs_new_epoch {
            return Ok(());
        }
        let doubling = self.schedule.pending_doubling;
        self.schedule.t_prev_len = t - self.schedule.t_k;
        self.schedule.t_k = t;
        self.schedule.k += 1;
        self.schedule.n_at_start.copy_from_slice(self.counters.n_sa_table());
        self.schedule.needs_new_epoch = false;
        self.schedule.pending_doubling = false;

        let model = self.sampled_model()?;
        let (w, iters, kl, conv) = self.refresh_epoch_policy(&model)?;
        self.epochs.push(EpochRecord {
            k: self.schedule.k,
            t_start: t,
            doubling_triggered: doubling,
            model: model.clone(),
            w_at_start: w,
            ppi_iterations: iters,
            kl_at_stop: kl,
            ppi_converged: conv,
        });
        self.epoch_model = Some(model);
        Ok(())
    }

    fn act(&mut self, s: usize) -> usize {
        let row = self.mu_policy.row(s);
        let x: f64 = self.rng.random();
        let mut acc = 0.0;
        for (a, &p) in row.iter().enumerate() {
            acc += p;
            if x < acc {
                return a;
            }
        }
        row.len() - 1
    }

    fn observe(&mut self, s: usize, a: usize, _r: f64, s_next: usize, t: u64) -> Result<()> {
        self.posterior.bayes_update(s, a, s_next)?;
        self.counters
            .record_step(t, self.schedule.k, self.policy_key, s, a, s_next)?;
        self.remix_if_needed()?;
        // Stopping rules, evaluated for the next time instant.
        if t + 1 > self.schedule.t_k + self.schedule.t_prev_len {
            self.schedule.needs_new_epoch = true;
        }
        let pair = s * self.n_actions + a;
        if self.counters.n_sa(s, a) > 2 * self.schedule.n_at_start[pair] {
            self.schedule.needs_new_epoch = true;
            self.schedule.pending_doubling = true;
        }
        Ok(())
    }

    fn current_policy(&self) -> StochasticPolicy {
        self.mu_policy.clone()
    }

    fn policy_version(&self) -> u64 {
        self.version
    }

    fn epoch(&self) -> u64 {
        self.schedule.k
    }

    fn last_w(&self) -> f64 {
        self.w_last
    }

    fn epoch_log(&self) -> &[EpochRecord] {
        &self.epochs
    }
}

/// Tabular Q-learning with fixed exploration; a sanity floor, not tuned.
pub struct EpsilonGreedyAgent {
    n_actions: usize,
    q: Vec<f64>,
    epsilon: f64,
    learning_rate: f64,
    discount: f64,
    rng: ChaCha12Rng,
    policy: StochasticPolicy,
    version: u64,
}

impl EpsilonGreedyAgent {
    pub fn new(n_states: usize, n_actions: usize, discount: f64, seed: u64) -> Self {
        Self {
            n_actions,
            q: vec![0.0; n_states * n_actions],
            epsilon: 0.1,
            learning_rate: 0.1,
            discount,
            rng: ChaCha12Rng::seed_from_u64(seed),
            policy: StochasticPolicy::uniform(n_states, n_actions),
            version: 0,
        }
    }

    fn greedy_action(&self, s: usize) -> usize {
        let row = &self.q[s * self.n_actions..(s + 1) * self.n_actions];
        let mut best = 0;
        for (a, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = a;
            }
        }
        best
    }

    fn rebuild_policy(&mut self) {
        let n_states = self.q.len() / self.n_actions;
        let explore = self.epsilon / self.n_actions as f64;
        let mut probs = vec![explore; n_states * self.n_actions];
        for s in 0..n_states {
            probs[s * self.n_actions + self.greedy_action(s)] += 1.0 - self.epsilon;
        }
        let next = StochasticPolicy::new(n_states, self.n_actions, probs).expect("valid rows");
        if next != self.policy {
            self.policy = next;
            self.version += 1;
        }
    }
}

impl Agent for EpsilonGreedyAgent {
    fn begin_epoch_if_needed(&mut self, _t: u64) -> Result<()> {
        Ok(())
    }

    fn act(&mut self, s: usize) -> usize {
        if self.rng.random::<f64>() < self.epsilon {
            self.rng.random_range(0..self.n_actions)
        } else {
            self.greedy_action(s)
        }
    }

    fn observe(&mut self, s: usize, a: usize, r: f64, s_next: usize, _t: u64) -> Result<()> {
        let best_next = self.greedy_action(s_next);
        let target = r + self.discount * self.q[s_next * self.n_actions + best_next];
        let cell = &mut self.q[s * self.n_actions + a];
        *cell += self.learning_rate * (target - *cell);
        self.rebuild_policy();
        Ok(())
    }

    fn current_policy(&self) -> StochasticPolicy {
        self.policy.clone()
    }

    fn policy_version(&self) -> u64 {
        self.version
    }

    fn epoch(&self) -> u64 {
        1
    }

    fn last_w(&self) -> f64 {
        1.0
    }

    fn epoch_log(&self) -> &[EpochRecord] {
        &[]
    }
}

pub struct RandomAgent {
    n_actions: usize,
    rng: ChaCha12Rng,
    policy: StochasticPolicy,
}

impl RandomAgent {
    pub fn new(n_states: usize, n_actions: usize, seed: u64) -> Self {
        Self {
            n_actions,
            rng: ChaCha12Rng::seed_from_u64(seed),
            policy: StochasticPolicy::uniform(n_states, n_actions),
        }
    }
}

impl Agent for RandomAgent {
    fn begin_epoch_if_needed(&mut self, _t: u64) -> Result<()> {
        Ok(())
    }

    fn act(&mut self, _s: usize) -> usize {
        self.rng.random_range(0..self.n_actions)
    }

    fn observe(&mut self, _s: usize, _a: usize, _r: f64, _s_next: usize, _t: u64) -> Result<()> {
        Ok(())
    }

    fn current_policy(&self) -> StochasticPolicy {
        self.policy.clone()
    }

    fn policy_version(&self) -> u64 {
        0
    }

    fn epoch(&self) -> u64 {
        1
    }

    fn last_w(&self) -> f64 {
        1.0
    }

    fn epoch_log(&self) -> &[EpochRecord] {
        &[]
    }
}

/// Plays the argmax policy of the true model. Only constructible inside the
/// simulator, where the truth is available.
pub struct OracleAgent {
    optimal: DeterministicPolicy,
    policy: StochasticPolicy,
}

impl OracleAgent {
    pub fn new(true_mdp: &TabularMdp) -> Result<Self> {
        let optimal = ppi::solve_optimal_policy(true_mdp)?;
        let policy = StochasticPolicy::from_deterministic(&optimal, true_mdp.n_actions());
        Ok(Self { optimal, policy })
    }
}

impl Agent for OracleAgent {
    fn begin_epoch_if_needed(&mut self, _t: u64) -> Result<()> {
        Ok(())
    }

    fn act(&mut self, s: usize) -> usize {
        self.optimal.action(s)
    }

    fn observe(&mut self, _s: usize, _a: usize, _r: f64, _s_next: usize, _t: u64) -> Result<()> {
        Ok(())
    }

    fn current_policy(&self) -> StochasticPolicy {
        self.policy.clone()
    }

    fn policy_version(&self) -> u64 {
        0
    }

    fn epoch(&self) -> u64 {
        1
    }

    fn last_w(&self) -> f64 {
        1.0
    }

    fn epoch_log(&self) -> &[EpochRecord] {
        &[]
    }
}
