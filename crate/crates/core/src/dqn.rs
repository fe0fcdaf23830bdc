//! Deep Q-Network controller for the knowledge store's retrieval knobs.
//!
//! Vanilla DQN: uniform replay, a periodically synced target network and
//! linear ε-greedy decay counted in action-selection steps.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::knowledge_store::{EdgeType, RetrievalParams, DEPTH_MAX, TOP_K_MAX};
use crate::rl_core::{argmax, Adam, ExperienceBuffer, MlpParams, RlError, RngStream, Transition};

/// Dimension of the knowledge-store state vector fed to the Q-network.
pub const KB_STATE_DIM: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DqnError {
    #[error("replay holds {have} transitions, batch needs {need}")]
    InsufficientReplay { have: usize, need: usize },
    #[error("invalid DQN configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Rl(#[from] RlError),
}

/// Closed set of knowledge-store adjustments; the integer encoding is stable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum KbAction {
    RaiseThreshold,
    LowerThreshold,
    IncreaseTopK,
    DecreaseTopK,
    BoostEdgeType(EdgeType),
    DecayEdgeType(EdgeType),
    NoOp,
}

impl KbAction {
    pub const COUNT: usize = 4 + 2 * EdgeType::ALL.len() + 1;

    pub fn index(self) -> usize {
        let n = EdgeType::ALL.len();
        match self {
            KbAction::RaiseThreshold => 0,
            KbAction::LowerThreshold => 1,
            KbAction::IncreaseTopK => 2,
            KbAction::DecreaseTopK => 3,
            KbAction::BoostEdgeType(t) => 4 + t.index(),
            KbAction::DecayEdgeType(t) => 4 + n + t.index(),
            KbAction::NoOp => 4 + 2 * n,
        }
    }

    pub fn from_index(index: usize) -> Option<Self> {
        let n = EdgeType::ALL.len();
        Some(match index {
            0 => KbAction::RaiseThreshold,
            1 => KbAction::LowerThreshold,
            2 => KbAction::IncreaseTopK,
            3 => KbAction::DecreaseTopK,
            i if (4..4 + n).contains(&i) => KbAction::BoostEdgeType(EdgeType::ALL[i - 4]),
            i if (4 + n..4 + 2 * n).contains(&i) => {
                KbAction::DecayEdgeType(EdgeType::ALL[i - 4 - n])
            }
            i if i == 4 + 2 * n => KbAction::NoOp,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DqnConfig {
    pub replay_capacity: usize,
    pub batch_size: usize,
    /// Counted in gradient steps.
    pub target_sync_interval: u64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Counted in action-selection steps.
    pub epsilon_decay_steps: u64,
    pub learning_rate: f64,
    /// Gradient steps taken per environment transition once replay is warm.
    #[serde(default = "default_train_steps")]
    pub train_steps_per_action: usize,
}

fn default_train_steps() -> usize {
    1
}

impl Default for DqnConfig {
    fn default() -> Self {
        Self {
            replay_capacity: 50_000,
            batch_size: 64,
            target_sync_interval: 1_000,
            epsilon_start: 0.9,
            epsilon_end: 0.05,
            epsilon_decay_steps: 100_000,
            learning_rate: 1e-3,
            train_steps_per_action: 1,
        }
    }
}

impl DqnConfig {
    pub fn validate(&self) -> Result<(), DqnError> {
        let bad = |m: String| Err(DqnError::InvalidConfig(m));
        if !(self.epsilon_start > self.epsilon_end && self.epsilon_end >= 0.0)
            || self.epsilon_start > 1.0
        {
            return bad(format!(
                "need 1 >= epsilon_start > epsilon_end >= 0, got {} / {}",
                self.epsilon_start, self.epsilon_end
            ));
        }
        if self.replay_capacity == 0 || self.batch_size == 0 {
            return bad("replay_capacity and batch_size must be positive".into());
        }
        if self.batch_size > self.replay_capacity {
            return bad("batch_size exceeds replay_capacity".into());
        }
        if self.target_sync_interval == 0 || self.epsilon_decay_steps == 0 {
            return bad("target_sync_interval and epsilon_decay_steps must be positive".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            ));
        }
        Ok(())
    }
}

/// `[threshold, top_k/64, depth/4, four edge-type weights,
/// 0.5 + 0.5 tanh(mean reward), FP rate, hit rate]`, each in `[0, 1]`.
pub fn kb_state(
    params: &RetrievalParams,
    mean_reward: f64,
    fp_rate: f64,
    hit_rate: f64,
) -> Vec<f64> {
    let mut v = Vec::with_capacity(KB_STATE_DIM);
    v.push(params.similarity_threshold);
    v.push(params.top_k as f64 / TOP_K_MAX as f64);
    v.push(params.traversal_depth as f64 / DEPTH_MAX as f64);
    v.extend(EdgeType::ALL.iter().map(|&t| params.edge_type_weight(t)));
    v.push(0.5 + 0.5 * mean_reward.tanh());
    v.extend([fp_rate, hit_rate]);
    v.into_iter()
        .map(|x| {
            if x.is_finite() {
                x.clamp(0.0, 1.0)
            } else {
                0.0
            }
        })
        .collect()
}

/// Linear decay from `epsilon_start` at step 0 to `epsilon_end` at
/// `epsilon_decay_steps`, constant afterwards.
pub fn epsilon_at(step: u64, config: &DqnConfig) -> f64 {
    if step >= config.epsilon_decay_steps {
        return config.epsilon_end;
    }
    let frac = step as f64 / config.epsilon_decay_steps as f64;
    let eps = config.epsilon_start + (config.epsilon_end - config.epsilon_start) * frac;
    eps.clamp(config.epsilon_end, config.epsilon_start)
}

/// ε-greedy over Q-values: a uniform draw decides exploration, a second draw
/// picks the random action. Greedy ties go to the lowest index.
pub fn select_action_epsilon(
    state: &[f64],
    qnet: &MlpParams,
    epsilon: f64,
    rng: &mut RngStream,
) -> Result<usize, RlError> {
    let q = qnet.forward(state)?;
    if rng.uniform() < epsilon {
        Ok(((rng.uniform() * q.len() as f64) as usize).min(q.len() - 1))
    } else {
        Ok(argmax(&q))
    }
}

pub fn select_kb_action(
    state: &[f64],
    qnet: &MlpParams,
    step: u64,
    config: &DqnConfig,
    rng: &mut RngStream,
) -> Result<KbAction, RlError> {
    let idx = select_action_epsilon(state, qnet, epsilon_at(step, config), rng)?;
    Ok(KbAction::from_index(idx).unwrap_or(KbAction::NoOp))
}

/// `y = r` for terminal transitions, else `r + γ max_a' Q_target(s', a')`.
pub fn td_targets<'a>(
    batch: impl IntoIterator<Item = &'a Transition>,
    target_net: &MlpParams,
    gamma: f64,
) -> Result<Vec<f64>, RlError> {
    batch
        .into_iter()
        .map(|t| {
            if t.done || gamma == 0.0 {
                Ok(t.reward)
            } else {
                let q = target_net.forward(&t.next_state)?;
                let max = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                Ok(t.reward + gamma * max)
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DqnTrainReport {
    pub loss: f64,
    pub mean_q: f64,
    pub synced: bool,
}

/// Online network, target network, optimizer and replay, owned by one
/// learner thread.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DqnLearner {
    pub config: DqnConfig,
    pub gamma: f64,
    pub qnet: MlpParams,
    pub target: MlpParams,
    optimizer: Adam,
    pub replay: ExperienceBuffer,
    /// Action-selection steps taken (drives ε).
    pub action_steps: u64,
    /// Gradient steps taken (drives target syncs).
    pub train_steps: u64,
}

impl DqnLearner {
    pub fn new(config: DqnConfig, gamma: f64, qnet: MlpParams) -> Self {
        let optimizer = Adam::new(config.learning_rate, qnet.len());
        Self {
            replay: ExperienceBuffer::new(config.replay_capacity),
            target: qnet.clone(),
            qnet,
            optimizer,
            gamma,
            action_steps: 0,
            train_steps: 0,
            config,
        }
    }

    pub fn epsilon(&self) -> f64 {
        epsilon_at(self.action_steps, &self.config)
    }

    /// ε-greedy action for `state`; advances the action-step counter.
    pub fn act(&mut self, state: &[f64], rng: &mut RngStream) -> Result<usize, RlError> {
        let a = select_action_epsilon(state, &self.qnet, self.epsilon(), rng)?;
        self.action_steps += 1;
        Ok(a)
    }

    pub fn greedy(&self, state: &[f64]) -> Result<usize, RlError> {
        Ok(argmax(&self.qnet.forward(state)?))
    }

    pub fn observe(&mut self, t: Transition) {
        self.replay.push(t);
    }

    /// One Adam step on the mean squared TD error of a uniform minibatch.
    pub fn train_step(&mut self, rng: &mut RngStream) -> Result<DqnTrainReport, DqnError> {
        let b = self.config.batch_size;
        if self.replay.len() < b {
            return Err(DqnError::InsufficientReplay {
                have: self.replay.len(),
                need: b,
            });
        }
        let idx = self.replay.sample_indices(b, rng);
        let batch: Vec<&Transition> = idx.iter().filter_map(|&i| self.replay.get(i)).collect();
        let targets = td_targets(batch.iter().copied(), &self.target, self.gamma)?;
        let mut grad = MlpParams::zeros(self.qnet.sizes());
        let mut loss = 0.0;
        let mut q_sum = 0.0;
        let n_out = self.qnet.n_out();
        for (t, y) in batch.iter().zip(&targets) {
            let cache = self.qnet.forward_cached(&t.state)?;
            let out = cache.output();
            if t.action >= n_out {
                return Err(RlError::DimensionMismatch {
                    expected: n_out,
                    got: t.action + 1,
                }
                .into());
            }
            let err = out[t.action] - y;
            loss += err * err;
            q_sum += out.iter().sum::<f64>() / n_out as f64;
            let mut og = vec![0.0; n_out];
            og[t.action] = 2.0 * err / b as f64;
            self.qnet.backward_accumulate(&cache, &og, &mut grad)?;
        }
        self.optimizer.step(&mut self.qnet, &grad)?;
        self.train_steps += 1;
        let synced = self
            .train_steps
            .is_multiple_of(self.config.target_sync_interval);
        if synced {
            self.target = self.qnet.clone();
        }
        Ok(DqnTrainReport {
            loss: loss / b as f64,
            mean_q: q_sum / b as f64,
            synced,
        })
    }

    /// Run `train_steps_per_action` steps if replay is warm; `None` otherwise.
    pub fn maybe_train(&mut self, rng: &mut RngStream) -> Result<Option<DqnTrainReport>, DqnError> {
        if self.replay.len() < self.config.batch_size {
            return Ok(None);
        }
        let mut last = None;
        for _ in 0..self.config.train_steps_per_action.max(1) {
            last = Some(self.train_step(rng)?);
        }
        Ok(last)
    }
}
