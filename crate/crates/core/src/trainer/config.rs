use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::dqn::DqnConfig;
use crate::knowledge_store::{RetrievalParams, DEFAULT_EMBEDDING_DIM, MIN_EMBEDDING_DIM};
use crate::ppo::PpoConfig;
use crate::qe_env::{ExecutionModel, ProjectConfig};
use crate::rewards::{RewardWeights, SeverityWeights};
use crate::rl_core::RlCoreConfig;

use super::TrainerError;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationFlags {
    #[serde(default)]
    pub disable_ppo: bool,
    #[serde(default)]
    pub disable_dqn: bool,
    #[serde(default)]
    pub scalar_reward: bool,
    #[serde(default)]
    pub no_feedback: bool,
}

impl AblationFlags {
    /// Policy frozen at initialization, static KB parameters, no KB evolution.
    pub fn frozen() -> Self {
        Self {
            disable_ppo: true,
            disable_dqn: true,
            scalar_reward: false,
            no_feedback: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[derive(Default)]
pub struct RewardConfig {
    pub weights: RewardWeights,
    pub severity: SeverityWeights,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvConfig {
    pub project: ProjectConfig,
    pub execution: ExecutionModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KbConfig {
    pub retrieval: RetrievalParams,
    pub embedding_dim: usize,
    /// EMA rate of edge and usefulness reinforcement.
    pub edge_learning_rate: f64,
    /// Cap on generated tests kept in the store; the least useful go first.
    pub max_generated_tests: usize,
}

impl Default for KbConfig {
    fn default() -> Self {
        Self {
            retrieval: RetrievalParams::default(),
            embedding_dim: DEFAULT_EMBEDDING_DIM,
            edge_learning_rate: 0.1,
            max_generated_tests: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentsConfig {
    pub n_tests: usize,
    pub tracker_window: usize,
}

impl Default for AgentsConfig {
    fn default() -> Self {
        Self {
            n_tests: 1,
            tracker_window: crate::agents::DEFAULT_TRACKER_WINDOW,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub episode_count: usize,
    pub tests_per_episode: usize,
    /// Test slots between DQN knowledge-store actions.
    pub kb_action_interval: usize,
    /// Episodes in the final-window and smoothing averages.
    pub smoothing_window: usize,
    pub rl: RlCoreConfig,
    pub ppo: PpoConfig,
    pub dqn: DqnConfig,
    pub rewards: RewardConfig,
    pub env: EnvConfig,
    pub kb: KbConfig,
    pub agents: AgentsConfig,
    pub ablation: AblationFlags,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            episode_count: 300,
            tests_per_episode: 48,
            kb_action_interval: 4,
            smoothing_window: 30,
            rl: RlCoreConfig::default(),
            ppo: PpoConfig::default(),
            dqn: DqnConfig::default(),
            rewards: RewardConfig::default(),
            env: EnvConfig::default(),
            kb: KbConfig::default(),
            agents: AgentsConfig::default(),
            ablation: AblationFlags::default(),
            output_dir: None,
        }
    }
}

fn invalid(key: &str, message: impl ToString) -> TrainerError {
    TrainerError::Validation {
        key: key.to_string(),
        message: message.to_string(),
    }
}

impl RunConfig {
    /// Check every bound; the error names the offending key.
    pub fn validate(&self) -> Result<(), TrainerError> {
        if self.episode_count == 0 {
            return Err(invalid("episode_count", "must be positive"));
        }
        if self.tests_per_episode == 0 {
            return Err(invalid("tests_per_episode", "must be positive"));
        }
        if self.kb_action_interval == 0 {
            return Err(invalid("kb_action_interval", "must be positive"));
        }
        if self.smoothing_window == 0 {
            return Err(invalid("smoothing_window", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.rl.discount_factor) {
            return Err(invalid("rl.discount_factor", "must be in [0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.rl.gae_lambda) {
            return Err(invalid("rl.gae_lambda", "must be in [0, 1]"));
        }
        let (lo, hi) = crate::ppo::LEARNING_RATE_RANGE;
        if !self.ppo.allow_out_of_range_learning_rate
            && !(lo..=hi).contains(&self.ppo.learning_rate)
        {
            return Err(invalid(
                "ppo.learning_rate",
                format!(
                    "{} outside [{lo}, {hi}]; set ppo.allow_out_of_range_learning_rate to override",
                    self.ppo.learning_rate
                ),
            ));
        }
        if !(self.ppo.clip_epsilon > 0.0 && self.ppo.clip_epsilon < 1.0) {
            return Err(invalid("ppo.clip_epsilon", "must be in (0, 1)"));
        }
        self.ppo.validate().map_err(|e| invalid("ppo", e))?;
        self.dqn.validate().map_err(|e| invalid("dqn", e))?;
        self.rewards
            .weights
            .validate()
            .map_err(|e| invalid("rewards.weights", e))?;
        self.rewards
            .severity
            .validate()
            .map_err(|e| invalid("rewards.severity", e))?;
        self.env
            .project
            .validate()
            .map_err(|e| invalid("env.project", e))?;
        self.env
            .execution
            .validate()
            .map_err(|e| invalid("env.execution", e))?;
        if self.kb.embedding_dim < MIN_EMBEDDING_DIM {
            return Err(invalid(
                "kb.embedding_dim",
                format!("must be at least {MIN_EMBEDDING_DIM}"),
            ));
        }
        if !(0.0..=1.0).contains(&self.kb.edge_learning_rate) {
            return Err(invalid("kb.edge_learning_rate", "must be in [0, 1]"));
        }
        if !self.kb.retrieval.in_bounds() {
            return Err(invalid(
                "kb.retrieval",
                "retrieval parameters out of bounds",
            ));
        }
        if self.agents.n_tests == 0 {
            return Err(invalid("agents.n_tests", "must be positive"));
        }
        if self.agents.tracker_window == 0 {
            return Err(invalid("agents.tracker_window", "must be positive"));
        }
        Ok(())
    }

    /// Slots per episode and the test count of the last (possibly short) slot.
    pub fn slot_plan(&self) -> Vec<usize> {
        let n = self.agents.n_tests;
        let full = self.tests_per_episode / n;
        let mut plan = vec![n; full];
        if !self.tests_per_episode.is_multiple_of(n) {
            plan.push(self.tests_per_episode % n);
        }
        plan
    }
}
