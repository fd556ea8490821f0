//! Seeded run execution and the batch experiment driver.
//!
//! A run is one (agent, horizon, seed) cell: it simulates the environment,
//! keeps a shadow Dirichlet posterior so the terminal posterior-mean model
//! is defined for every agent, snapshots policies only when they change,
//! and finishes with the regret decomposition. Runs are independent and the
//! driver schedules them on a bounded rayon pool; aggregation is a single
//! reduce after all runs complete.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agents::{Agent, DtsAgent, EpsilonGreedyAgent, OracleAgent, PosteriorMode, RandomAgent};
use crate::error::{Error, Result};
use crate::mdp::{StochasticPolicy, TabularMdp};
use crate::posterior::DirichletPosterior;
use crate::ppi::PpiConfig;

use super::bounds::{self, BoundReport, EpisodeBoundCheck};
use super::config::{AgentKind, EnvSpec, ExperimentConfig};
use super::trace::{self, EpochSummary, RegretTrace};

/// splitmix64 finalizer; used to derive independent sub-seeds from a run
/// seed without correlated streams.
fn mix_seed(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Everything needed to reproduce one run.
#[derive(Debug, Clone)]
pub struct RunSpec {
    pub agent: AgentKind,
    pub env: EnvSpec,
    pub horizon: u64,
    /// Logical seed (already offset by the seed base).
    pub seed: u64,
    pub gamma: f64,
    pub epsilon: f64,
    pub kl_tolerance: f64,
    pub r_min: f64,
    pub alpha0: f64,
    pub ppi_max_iterations: usize,
    pub strict_per_step: bool,
}

impl RunSpec {
    pub fn from_config(cfg: &ExperimentConfig, agent: AgentKind, horizon: u64, seed: u64) -> Result<Self> {
        Ok(Self {
            agent,
            env: cfg.env_spec()?,
            horizon,
            seed: cfg.seed_base.wrapping_add(seed),
            gamma: cfg.gamma,
            epsilon: cfg.epsilon,
            kl_tolerance: cfg.kl_tolerance,
            r_min: cfg.r_min,
            alpha0: cfg.alpha0,
            ppi_max_iterations: cfg.ppi_max_iterations,
            strict_per_step: cfg.strict_per_step,
        })
    }
}

/// One simulated step as recorded for the trace CSV.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: u64,
    pub epoch: u64,
    pub s: usize,
    pub a: usize,
    pub r: f64,
    pub s_next: usize,
    /// Posterior weight in force when the step was taken (1 for agents
    /// without a weight).
    pub w: f64,
    /// Version of the policy that chose the action.
    pub policy_version: u64,
}

/// Full record of a completed run; sufficient input for every bound
/// checker.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub agent: String,
    pub env: String,
    pub horizon: u64,
    pub seed: u64,
    pub true_mdp: TabularMdp,
    pub steps: Vec<StepRecord>,
    /// Policy snapshots keyed by version; every version that appears in
    /// `steps` is present.
    pub policies: BTreeMap<u64, StochasticPolicy>,
    /// Sampled model per epoch (posterior agents only).
    pub epoch_models: BTreeMap<u64, TabularMdp>,
    /// Terminal posterior-mean model from the shadow posterior.
    pub posterior_mean: TabularMdp,
    pub trace: RegretTrace,
}

impl RunRecord {
    pub fn final_policy(&self) -> &StochasticPolicy {
        let last = self.steps.last().expect("nonempty run");
        &self.policies[&last.policy_version]
    }
}

fn build_agent(spec: &RunSpec, true_mdp: &TabularMdp, agent_seed: u64) -> Result<Box<dyn Agent>> {
    let s = true_mdp.n_states();
    let a = true_mdp.n_actions();
    Ok(match spec.agent {
        AgentKind::Dts | AgentKind::Tsde => {
            let mode = if spec.agent == AgentKind::Dts {
                PosteriorMode::Dts
            } else {
                PosteriorMode::Tsde
            };
            let cfg = PpiConfig::new(
                spec.epsilon,
                spec.ppi_max_iterations,
                spec.kl_tolerance,
                spec.gamma,
            )?;
            Box::new(DtsAgent::new(
                s,
                a,
                true_mdp.reward_table().to_vec(),
                spec.gamma,
                cfg,
                mode,
                spec.strict_per_step,
                spec.alpha0,
                agent_seed,
            )?)
        }
        AgentKind::Egreedy => Box::new(EpsilonGreedyAgent::new(s, a, spec.gamma, agent_seed)),
        AgentKind::Random => Box::new(RandomAgent::new(s, a, agent_seed)),
        AgentKind::Oracle => Box::new(OracleAgent::new(true_mdp)?),
    })
}

/// Simulates one run end to end and computes its decomposition.
pub fn execute_run(spec: &RunSpec) -> Result<RunRecord> {
    if spec.horizon == 0 {
        return Err(Error::Config("horizon must be >= 1".into()));
    }
    let construction_seed = mix_seed(spec.seed ^ 0x1);
    let rollout_seed = mix_seed(spec.seed ^ 0x2);
    let agent_seed = mix_seed(spec.seed ^ 0x3);

    let mut env = spec.env.build(construction_seed, spec.r_min, spec.gamma)?;
    env.reseed(rollout_seed);
    let true_mdp = env.mdp().clone();
    let mut agent = build_agent(spec, &true_mdp, agent_seed)?;

    // Shadow posterior: defines the terminal posterior-mean model uniformly
    // across agents (the posterior agents keep their own identical copy).
    let mut shadow = DirichletPosterior::uniform_prior(
        true_mdp.n_states(),
        true_mdp.n_actions(),
        spec.alpha0,
    )?;

    let mut steps = Vec::with_capacity(spec.horizon as usize);
    let mut policies: BTreeMap<u64, StochasticPolicy> = BTreeMap::new();

    for t in 0..spec.horizon {
        agent.begin_epoch_if_needed(t)?;
        let version = agent.policy_version();
        policies
            .entry(version)
            .or_insert_with(|| agent.current_policy());
        let s = env.state();
        let a = agent.act(s);
        let (s_next, r) = env.step(a)?;
        let record = StepRecord {
            t,
            epoch: agent.epoch(),
            s,
            a,
            r,
            s_next,
            w: agent.last_w(),
            policy_version: version,
        };
        agent.observe(s, a, r, s_next, t)?;
        shadow.bayes_update(s, a, s_next)?;
        steps.push(record);
    }
    // The final mixture may have changed after the last observe.
    let final_version = agent.policy_version();
    policies
        .entry(final_version)
        .or_insert_with(|| agent.current_policy());

    let posterior_mean = TabularMdp::new(
        true_mdp.n_states(),
        true_mdp.n_actions(),
        true_mdp.reward_table().to_vec(),
        shadow.mean_transition(),
        spec.gamma,
    )?;

    let mut epoch_models = BTreeMap::new();
    let mut epoch_summaries = Vec::new();
    for rec in agent.epoch_log() {
        epoch_models.insert(rec.k, rec.model.clone());
        epoch_summaries.push(EpochSummary {
            k: rec.k,
            t_start: rec.t_start,
            doubling_triggered: rec.doubling_triggered,
            w_at_start: rec.w_at_start,
            ppi_iterations: rec.ppi_iterations,
            kl_at_stop: rec.kl_at_stop,
            ppi_converged: rec.ppi_converged,
        });
    }

    let final_policy = policies[&final_version].clone();
    let trace = trace::compute_decomposition(
        &true_mdp,
        &steps,
        &policies,
        &epoch_models,
        &posterior_mean,
        &final_policy,
        epoch_summaries,
    )?;

    Ok(RunRecord {
        agent: spec.agent.name().to_string(),
        env: spec.env.label(),
        horizon: spec.horizon,
        seed: spec.seed,
        true_mdp,
        steps,
        policies,
        epoch_models,
        posterior_mean,
        trace,
    })
}

/// Lightweight per-run result retained after the full record is dropped.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub agent: String,
    pub env: String,
    pub horizon: u64,
    pub seed: u64,
    pub final_regret: f64,
    pub final_reg1: f64,
    pub final_reg2: f64,
    pub final_reg3: f64,
    pub terminal_gap: f64,
    pub identity_violation: f64,
    pub n_epochs: u64,
    pub episode_bounds: Option<EpisodeBoundCheck>,
    pub confidence_violation_frac: Option<f64>,
}

fn summarize(record: &RunRecord, delta: f64) -> RunSummary {
    let t = &record.trace;
    let last = t.reg_total.len() - 1;
    let is_posterior = record.agent == "dts" || record.agent == "tsde";
    let episode_bounds = if is_posterior {
        Some(bounds::check_episode_bounds(record))
    } else {
        None
    };
    let confidence_violation_frac = if is_posterior {
        Some(bounds::check_confidence_set(record, delta).violation_frac)
    } else {
        None
    };
    RunSummary {
        agent: record.agent.clone(),
        env: record.env.clone(),
        horizon: record.horizon,
        seed: record.seed,
        final_regret: t.reg_total[last],
        final_reg1: t.reg1[last],
        final_reg2: t.reg2[last],
        final_reg3: t.reg3[last],
        terminal_gap: t.terminal_gap,
        identity_violation: t.max_identity_violation(),
        n_epochs: t.epochs.len() as u64,
        episode_bounds,
        confidence_violation_frac,
    }
}

/// Batch output: per-run summaries, per-agent mean-regret curves and the
/// aggregate bound report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentOutcome {
    pub summaries: Vec<RunSummary>,
    /// agent -> sorted (horizon, mean final regret, stderr).
    pub curves: BTreeMap<String, Vec<(u64, f64, f64)>>,
    pub report: BoundReport,
}

impl ExperimentOutcome {
    /// True when every theorem-grade check passed (episode bounds on all
    /// posterior runs, decomposition identity on all runs).
    pub fn theorems_hold(&self) -> bool {
        self.summaries.iter().all(|s| {
            s.identity_violation <= 0.0
                && s.episode_bounds.as_ref().map(|b| b.ok()).unwrap_or(true)
        })
    }
}

fn trace_file_name(record: &RunRecord) -> String {
    format!(
        "trace_{}_{}_T{}_s{}.csv",
        record.env, record.agent, record.horizon, record.seed
    )
}

/// Runs the full (agent x horizon x seed) grid from a config, writing
/// per-run trace CSVs, optional full run records, and the aggregate JSON
/// into `out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let agents = cfg.agent_kinds()?;
    std::fs::create_dir_all(&cfg.out_dir)?;

    let mut specs = Vec::new();
    for &agent in &agents {
        for &horizon in &cfg.horizons {
            for seed in 0..cfg.seeds {
                specs.push(RunSpec::from_config(cfg, agent, horizon, seed)?);
            }
        }
    }

    let out_dir = cfg.out_dir.clone();
    let delta = cfg.delta;
    let save_runs = cfg.save_runs;
    let run_one = |spec: &RunSpec| -> Result<RunSummary> {
        let record = execute_run(spec)?;
        let csv_path = out_dir.join(trace_file_name(&record));
        trace::write_trace_csv(&csv_path, &record.steps, &record.trace)?;
        if save_runs {
            let json_path = csv_path.with_extension("json");
            let file = std::fs::File::create(json_path)?;
            serde_json::to_writer(std::io::BufWriter::new(file), &record)?;
        }
        Ok(summarize(&record, delta))
    };

    let summaries: Vec<RunSummary> = if cfg.workers == 1 {
        specs.iter().map(run_one).collect::<Result<_>>()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?;
        pool.install(|| {
            use rayon::prelude::*;
            specs.par_iter().map(run_one).collect::<Result<_>>()
        })?
    };

    let mut curves: BTreeMap<String, Vec<(u64, f64, f64)>> = BTreeMap::new();
    for &agent in &agents {
        let mut points = Vec::new();
        for &horizon in &cfg.horizons {
            let cell: Vec<f64> = summaries
                .iter()
                .filter(|s| s.agent == agent.name() && s.horizon == horizon)
                .map(|s| s.final_regret)
                .collect();
            let n = cell.len() as f64;
            let mean = cell.iter().sum::<f64>() / n;
            let var = cell.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n.max(1.0);
            let stderr = (var / n).sqrt();
            points.push((horizon, mean, stderr));
        }
        points.sort_by_key(|p| p.0);
        curves.insert(agent.name().to_string(), points);
    }

    let report = bounds::aggregate_report(&summaries, &curves);
    let outcome = ExperimentOutcome {
        summaries,
        curves,
        report,
    };

    let agg_path = cfg.out_dir.join("aggregate.json");
    let file = std::fs::File::create(&agg_path)?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(file), &outcome)?;
    Ok(outcome)
}

/// Re-checks bounds on a previously saved full run record.
pub fn check_bounds_file(path: &Path, delta: f64) -> Result<(RunSummary, Option<bounds::MartingaleStats>)> {
    let text = std::fs::read_to_string(path)?;
    let record: RunRecord = serde_json::from_str(&text)?;
    let summary = summarize(&record, delta);
    let stats = if record.epoch_models.is_empty() {
        None
    } else {
        Some(bounds::check_martingale(&record, delta)?)
    };
    Ok((summary, stats))
}
