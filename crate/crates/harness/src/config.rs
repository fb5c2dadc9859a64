//! Experiment configuration files.
//!
//! A config is a TOML document. Unknown keys are rejected with the full key
//! path, every omitted key takes the agent crate's default, and
//! [`ExperimentConfig::resolved_toml`] writes back the complete set of values
//! that a run actually used.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use nnrl::agent_nnac::NnacConfig;
use nnrl::agent_soft::{BetaSchedule, DeltaTiming, SoftNnConfig};
use nnrl::agent_ucrl::UcrlConfig;
use nnrl::baseline::{BaseAlgo, LiteConfig};
use nnrl::envs::{CartPole, LipschitzChain, Reacher1d};
use nnrl::metric_space::MetricSpec;

use crate::error::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    UcrlFa,
    Nnac,
    SoftDdpg,
    SoftTd3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Budget {
    Steps(usize),
    Episodes(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvSection {
    Cartpole {
        #[serde(default = "cartpole_horizon")]
        horizon: usize,
        #[serde(default)]
        continuous: bool,
    },
    Chain {
        #[serde(default = "chain_step")]
        step: f64,
        #[serde(default = "chain_horizon")]
        horizon: usize,
        #[serde(default = "chain_peak")]
        peak: f64,
        #[serde(default = "chain_start_cells")]
        start_cells: usize,
    },
    Reacher1d {
        #[serde(default = "reacher_dt")]
        dt: f64,
        #[serde(default = "reacher_horizon")]
        horizon: usize,
        #[serde(default = "reacher_target")]
        target: f64,
        #[serde(default = "reacher_start_spread")]
        start_spread: f64,
    },
}

fn cartpole_horizon() -> usize {
    CartPole::default().horizon
}
fn chain_step() -> f64 {
    LipschitzChain::default().step
}
fn chain_horizon() -> usize {
    LipschitzChain::default().horizon
}
fn chain_peak() -> f64 {
    LipschitzChain::default().peak
}
fn chain_start_cells() -> usize {
    LipschitzChain::default().start_cells
}
fn reacher_dt() -> f64 {
    Reacher1d::default().dt
}
fn reacher_horizon() -> usize {
    Reacher1d::default().horizon
}
fn reacher_target() -> f64 {
    Reacher1d::default().target
}
fn reacher_start_spread() -> f64 {
    Reacher1d::default().start_spread
}

/// Observations pass through a random map into `target_dim` coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LiftSection {
    pub target_dim: usize,
    /// `1` is an isometry; `c` scales all distances by `c`.
    #[serde(default = "one")]
    pub scale: f64,
    #[serde(default)]
    pub seed: u64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UcrlSection {
    pub lipschitz: f64,
    pub state_weight: f64,
    pub action_weight: f64,
    pub incremental: bool,
    pub full_refresh_every: usize,
    /// Grid resolution of the chain's dynamic-programming oracle.
    pub oracle_grid: usize,
}

impl Default for UcrlSection {
    fn default() -> Self {
        let chain = LipschitzChain::default();
        UcrlSection {
            lipschitz: chain.declared_l1(1.0, 1.0),
            state_weight: 1.0,
            action_weight: 1.0,
            incremental: false,
            full_refresh_every: 0,
            oracle_grid: 1001,
        }
    }
}

impl UcrlSection {
    pub fn to_core(&self, obs_dim: usize, action_dim: usize) -> Result<UcrlConfig, HarnessError> {
        Ok(UcrlConfig {
            lipschitz: self.lipschitz,
            metric: MetricSpec::state_action(obs_dim, self.state_weight, action_dim, self.action_weight)?,
            incremental: self.incremental,
            full_refresh_every: self.full_refresh_every,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NnacSection {
    pub m: usize,
    pub lipschitz: f64,
    pub gamma: f64,
    pub planning_horizon: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub hidden: usize,
    pub init_bound: f64,
    pub tanh_logits: bool,
    pub neg_delta_scale: f64,
    pub grad_clip: f64,
    pub state_weight: f64,
    pub action_weight: f64,
    pub empty_step_value: f64,
    pub zero_input_layer: bool,
    pub row_shared_adam: bool,
}

impl Default for NnacSection {
    fn default() -> Self {
        let c = NnacConfig::default();
        NnacSection {
            m: c.m,
            lipschitz: c.lipschitz,
            gamma: c.gamma,
            planning_horizon: c.planning_horizon,
            batch_size: c.batch_size,
            lr: c.lr,
            hidden: c.hidden,
            init_bound: c.init_bound,
            tanh_logits: c.tanh_logits,
            neg_delta_scale: c.neg_delta_scale,
            grad_clip: c.grad_clip,
            state_weight: c.state_weight,
            action_weight: c.action_weight,
            empty_step_value: c.empty_step_value,
            zero_input_layer: c.zero_input_layer,
            row_shared_adam: c.row_shared_adam,
        }
    }
}

impl NnacSection {
    pub fn to_core(&self, eval_every: usize, eval_episodes: usize, seed: u64) -> NnacConfig {
        NnacConfig {
            m: self.m,
            lipschitz: self.lipschitz,
            gamma: self.gamma,
            planning_horizon: self.planning_horizon,
            batch_size: self.batch_size,
            lr: self.lr,
            hidden: self.hidden,
            init_bound: self.init_bound,
            tanh_logits: self.tanh_logits,
            neg_delta_scale: self.neg_delta_scale,
            grad_clip: self.grad_clip,
            state_weight: self.state_weight,
            action_weight: self.action_weight,
            empty_step_value: self.empty_step_value,
            zero_input_layer: self.zero_input_layer,
            row_shared_adam: self.row_shared_adam,
            eval_every,
            eval_episodes,
            seed,
        }
    }
}

/// Base DDPG-lite / TD3-lite hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LiteSection {
    pub hidden: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub gamma: f64,
    pub tau: f64,
    pub expl_sigma: f64,
    pub target_sigma: f64,
    pub noise_clip: f64,
    pub policy_freq: usize,
    pub batch_size: usize,
    pub warmup_steps: usize,
    pub init_bound: f64,
    pub reward_scale: f64,
}

impl Default for LiteSection {
    fn default() -> Self {
        let c = LiteConfig::default();
        LiteSection {
            hidden: c.hidden,
            actor_lr: c.actor_lr,
            critic_lr: c.critic_lr,
            gamma: c.gamma,
            tau: c.tau,
            expl_sigma: c.expl_sigma,
            target_sigma: c.target_sigma,
            noise_clip: c.noise_clip,
            policy_freq: c.policy_freq,
            batch_size: c.batch_size,
            warmup_steps: c.warmup_steps,
            init_bound: c.init_bound,
            reward_scale: c.reward_scale,
        }
    }
}

impl LiteSection {
    pub fn to_core(&self, algo: BaseAlgo, eval_every: usize, eval_episodes: usize, seed: u64) -> LiteConfig {
        LiteConfig {
            algo,
            hidden: self.hidden,
            actor_lr: self.actor_lr,
            critic_lr: self.critic_lr,
            gamma: self.gamma,
            tau: self.tau,
            expl_sigma: self.expl_sigma,
            target_sigma: self.target_sigma,
            noise_clip: self.noise_clip,
            policy_freq: self.policy_freq,
            batch_size: self.batch_size,
            warmup_steps: self.warmup_steps,
            init_bound: self.init_bound,
            reward_scale: self.reward_scale,
            eval_every,
            eval_episodes,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum BetaSection {
    Geometric(f64),
    Piecewise { switch_episode: usize },
}

impl From<BetaSchedule> for BetaSection {
    fn from(b: BetaSchedule) -> Self {
        match b {
            BetaSchedule::Geometric(v) => BetaSection::Geometric(v),
            BetaSchedule::Piecewise { switch_episode } => BetaSection::Piecewise { switch_episode },
        }
    }
}

impl From<BetaSection> for BetaSchedule {
    fn from(b: BetaSection) -> Self {
        match b {
            BetaSection::Geometric(v) => BetaSchedule::Geometric(v),
            BetaSection::Piecewise { switch_episode } => BetaSchedule::Piecewise { switch_episode },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeltaTimingSection {
    Batch,
    Insertion,
}

impl From<DeltaTiming> for DeltaTimingSection {
    fn from(t: DeltaTiming) -> Self {
        match t {
            DeltaTiming::Batch => DeltaTimingSection::Batch,
            DeltaTiming::Insertion => DeltaTimingSection::Insertion,
        }
    }
}

impl From<DeltaTimingSection> for DeltaTiming {
    fn from(t: DeltaTimingSection) -> Self {
        match t {
            DeltaTimingSection::Batch => DeltaTiming::Batch,
            DeltaTimingSection::Insertion => DeltaTiming::Insertion,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SoftSection {
    pub alpha0: f64,
    pub beta: BetaSection,
    pub epsilon: f64,
    pub tau_nn: f64,
    pub neg_delta_scale: f64,
    pub grad_clip: f64,
    pub lipschitz: f64,
    pub m: usize,
    pub planning_horizon: usize,
    pub gamma: f64,
    pub state_weight: f64,
    pub action_weight: f64,
    pub empty_step_value: f64,
    pub delta_timing: DeltaTimingSection,
}

impl Default for SoftSection {
    fn default() -> Self {
        let c = SoftNnConfig::default();
        SoftSection {
            alpha0: c.alpha0,
            beta: c.beta.into(),
            epsilon: c.epsilon,
            tau_nn: c.tau_nn,
            neg_delta_scale: c.neg_delta_scale,
            grad_clip: c.grad_clip,
            lipschitz: c.lipschitz,
            m: c.m,
            planning_horizon: c.planning_horizon,
            gamma: c.gamma,
            state_weight: c.state_weight,
            action_weight: c.action_weight,
            empty_step_value: c.empty_step_value,
            delta_timing: c.delta_timing.into(),
        }
    }
}

impl SoftSection {
    pub fn to_core(&self) -> SoftNnConfig {
        SoftNnConfig {
            alpha0: self.alpha0,
            beta: self.beta.into(),
            epsilon: self.epsilon,
            tau_nn: self.tau_nn,
            neg_delta_scale: self.neg_delta_scale,
            grad_clip: self.grad_clip,
            lipschitz: self.lipschitz,
            m: self.m,
            planning_horizon: self.planning_horizon,
            gamma: self.gamma,
            state_weight: self.state_weight,
            action_weight: self.action_weight,
            empty_step_value: self.empty_step_value,
            delta_timing: self.delta_timing.into(),
        }
    }
}

fn default_eval_every() -> usize {
    1000
}

fn default_eval_episodes() -> usize {
    5
}

fn default_window() -> usize {
    500
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub agent: AgentKind,
    pub seeds: Vec<u64>,
    pub budget: Budget,
    /// Greedy evaluation period in environment steps (0: never).
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
    #[serde(default = "default_eval_episodes")]
    pub eval_episodes: usize,
    /// Moving-average window applied by `analyze`, in environment steps.
    #[serde(default = "default_window")]
    pub smoothing_window: usize,
    pub env: EnvSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lift: Option<LiftSection>,
    #[serde(default)]
    pub ucrl: UcrlSection,
    #[serde(default)]
    pub nnac: NnacSection,
    #[serde(default)]
    pub lite: LiteSection,
    #[serde(default)]
    pub soft: SoftSection,
}

impl ExperimentConfig {
    /// Parse a config; errors name the offending key path.
    pub fn from_toml_str(text: &str) -> Result<Self, HarnessError> {
        let de = toml::Deserializer::new(text);
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| HarnessError::Config {
            path: e.path().to_string(),
            message: e.inner().message().trim().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self, HarnessError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    fn validate(&self) -> Result<(), HarnessError> {
        let bad = |path: &str, message: &str| {
            Err(HarnessError::Config {
                path: path.to_string(),
                message: message.to_string(),
            })
        };
        if self.eval_episodes == 0 {
            return bad("eval_episodes", "must be >= 1");
        }
        if self.smoothing_window == 0 {
            return bad("smoothing_window", "must be >= 1");
        }
        match (self.agent, &self.env) {
            (AgentKind::UcrlFa | AgentKind::Nnac, EnvSection::Reacher1d { .. })
            | (AgentKind::UcrlFa | AgentKind::Nnac, EnvSection::Cartpole { continuous: true, .. }) => {
                return bad("env", "this agent needs a finite action set");
            }
            (AgentKind::SoftDdpg | AgentKind::SoftTd3, EnvSection::Chain { .. })
            | (AgentKind::SoftDdpg | AgentKind::SoftTd3, EnvSection::Cartpole { continuous: false, .. }) => {
                return bad("env", "this agent needs a continuous action box");
            }
            _ => {}
        }
        match (self.agent, self.budget) {
            (AgentKind::UcrlFa, Budget::Steps(_)) => bad("budget", "ucrl_fa runs a number of episodes"),
            (AgentKind::Nnac, Budget::Episodes(_)) => bad("budget", "nnac runs a number of steps"),
            _ => Ok(()),
        }
    }

    /// Every value the run uses, defaults included.
    pub fn resolved_toml(&self) -> Result<String, HarnessError> {
        toml::to_string(self).map_err(|e| HarnessError::Config {
            path: String::new(),
            message: e.to_string(),
        })
    }

    /// SHA-256 of [`ExperimentConfig::resolved_toml`], hex encoded.
    pub fn hash(&self) -> Result<String, HarnessError> {
        Ok(hex::encode(Sha256::digest(self.resolved_toml()?.as_bytes())))
    }
}
