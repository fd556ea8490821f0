//! Experiment configuration: a human-editable TOML document plus the env
//! and agent selectors shared with the CLI.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::envs::{self, Environment};
use crate::error::{Error, Result};
use crate::mdp::TabularMdp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentKind {
    Dts,
    Tsde,
    Egreedy,
    Random,
    Oracle,
}

impl AgentKind {
    pub fn name(&self) -> &'static str {
        match self {
            AgentKind::Dts => "dts",
            AgentKind::Tsde => "tsde",
            AgentKind::Egreedy => "egreedy",
            AgentKind::Random => "random",
            AgentKind::Oracle => "oracle",
        }
    }
}

impl FromStr for AgentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dts" => Ok(AgentKind::Dts),
            "tsde" => Ok(AgentKind::Tsde),
            "egreedy" => Ok(AgentKind::Egreedy),
            "random" => Ok(AgentKind::Random),
            "oracle" => Ok(AgentKind::Oracle),
            other => Err(Error::Config(format!(
                "unknown agent '{other}' (expected dts|tsde|egreedy|random|oracle)"
            ))),
        }
    }
}

/// Environment selector: a named preset (`riverswim<N>`, `chain<N>`,
/// `random`) or a path to a model JSON document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EnvSpec {
    RiverSwim(usize),
    Chain(usize),
    Random { n_states: usize, n_actions: usize },
    ModelFile(PathBuf),
}

impl EnvSpec {
    pub fn parse(name: &str, n_states: usize, n_actions: usize) -> Result<Self> {
        if let Some(n) = name.strip_prefix("riverswim") {
            let n: usize = n
                .parse()
                .map_err(|_| Error::Config(format!("bad riverswim size in '{name}'")))?;
            return Ok(EnvSpec::RiverSwim(n));
        }
        if let Some(n) = name.strip_prefix("chain") {
            let n: usize = n
                .parse()
                .map_err(|_| Error::Config(format!("bad chain size in '{name}'")))?;
            return Ok(EnvSpec::Chain(n));
        }
        if name == "random" {
            return Ok(EnvSpec::Random {
                n_states,
                n_actions,
            });
        }
        if name.ends_with(".json") {
            return Ok(EnvSpec::ModelFile(PathBuf::from(name)));
        }
        Err(Error::Config(format!(
            "unknown env '{name}' (expected riverswim<N>, chain<N>, random, or a .json model path)"
        )))
    }

    pub fn label(&self) -> String {
        match self {
            EnvSpec::RiverSwim(n) => format!("riverswim{n}"),
            EnvSpec::Chain(n) => format!("chain{n}"),
            EnvSpec::Random { n_states, n_actions } => format!("random{n_states}x{n_actions}"),
            EnvSpec::ModelFile(p) => p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "model".into()),
        }
    }

    /// Builds the environment. `construction_seed` only matters for the
    /// random preset; named presets are fixed models.
    pub fn build(
        &self,
        construction_seed: u64,
        r_min: f64,
        gamma: f64,
    ) -> Result<Environment> {
        match self {
            EnvSpec::RiverSwim(n) => envs::make_riverswim(*n, r_min, gamma, construction_seed),
            EnvSpec::Chain(n) => envs::make_chain(*n, r_min, gamma, construction_seed),
            EnvSpec::Random { n_states, n_actions } => {
                envs::make_random_mdp(*n_states, *n_actions, construction_seed, r_min, gamma)
            }
            EnvSpec::ModelFile(path) => {
                let text = std::fs::read_to_string(path)?;
                let mdp: TabularMdp = serde_json::from_str(&text)?;
                Environment::new(mdp, construction_seed)
            }
        }
    }
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}
fn default_env() -> String {
    "riverswim6".into()
}
fn default_env_states() -> usize {
    6
}
fn default_env_actions() -> usize {
    2
}
fn default_gamma() -> f64 {
    0.99
}
fn default_epsilon() -> f64 {
    1e-3
}
fn default_kl_tolerance() -> f64 {
    1e-6
}
fn default_delta() -> f64 {
    0.05
}
fn default_r_min() -> f64 {
    envs::DEFAULT_R_MIN
}
fn default_alpha0() -> f64 {
    1.0
}
fn default_ppi_max_iterations() -> usize {
    200
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default = "default_env")]
    pub env: String,
    /// State count for the `random` env preset.
    #[serde(default = "default_env_states")]
    pub env_states: usize,
    /// Action count for the `random` env preset.
    #[serde(default = "default_env_actions")]
    pub env_actions: usize,
    pub agents: Vec<String>,
    pub horizons: Vec<u64>,
    /// Number of seeds per (agent, horizon) cell.
    pub seeds: u64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_kl_tolerance")]
    pub kl_tolerance: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_r_min")]
    pub r_min: f64,
    #[serde(default = "default_alpha0")]
    pub alpha0: f64,
    #[serde(default = "default_ppi_max_iterations")]
    pub ppi_max_iterations: usize,
    #[serde(default)]
    pub strict_per_step: bool,
    /// 0 = one worker per core.
    #[serde(default)]
    pub workers: usize,
    #[serde(default)]
    pub seed_base: u64,
    /// Also write full per-run JSON records (large).
    #[serde(default)]
    pub save_runs: bool,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.agents.is_empty() {
            return Err(Error::Config("agent list is empty".into()));
        }
        for a in &self.agents {
            a.parse::<AgentKind>()?;
        }
        if self.horizons.is_empty() {
            return Err(Error::Config("horizon list is empty".into()));
        }
        if self.seeds == 0 {
            return Err(Error::Config("need at least one seed".into()));
        }
        if !(0.0 < self.gamma && self.gamma < 1.0) {
            return Err(Error::Config(format!("gamma = {} outside (0,1)", self.gamma)));
        }
        if !(0.0 < self.r_min && self.r_min < 1.0) {
            return Err(Error::Config(format!("r_min = {} outside (0,1)", self.r_min)));
        }
        if !(0.0 < self.delta && self.delta < 1.0) {
            return Err(Error::Config(format!("delta = {} outside (0,1)", self.delta)));
        }
        if self.epsilon <= 0.0 || self.kl_tolerance <= 0.0 {
            return Err(Error::Config(
                "epsilon and kl_tolerance must be positive".into(),
            ));
        }
        if self.alpha0 <= 0.0 {
            return Err(Error::Config("alpha0 must be positive".into()));
        }
        EnvSpec::parse(&self.env, self.env_states, self.env_actions)?;
        Ok(())
    }

    pub fn env_spec(&self) -> Result<EnvSpec> {
        EnvSpec::parse(&self.env, self.env_states, self.env_actions)
    }

    pub fn agent_kinds(&self) -> Result<Vec<AgentKind>> {
        self.agents.iter().map(|a| a.parse()).collect()
    }
}
