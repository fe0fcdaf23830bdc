//! Continuous-learning orchestration: the episode loop, PPO and DQN updates,
//! knowledge-store evolution, metrics, checkpoints and ablations.

mod ablation;
mod config;
mod metrics;

use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use ablation::{run_ablation_suite, AblationTable, Variant, VariantSummary};
pub use config::{AblationFlags, AgentsConfig, EnvConfig, KbConfig, RewardConfig, RunConfig};
pub use metrics::{
    dqn_csv, export_metrics, final_window_mean, metrics_csv, metrics_from_events, ppo_csv,
    read_events, smoothed, thirds, weekly_rewards, DqnRow, EpisodeMetrics, Event, EventSink,
    JsonlSink, NullSink, PpoRow, WEEK_EPISODES,
};

use metrics::EpisodeAccumulator;

use crate::agents::{
    featurize_state, generate_test_cases, record_feedback, Agent, AgentDecision, GeneratedBatch,
    GenerationParams, GenerationPlan, PerformanceTracker, OUTPUT_LAYER_GAIN,
};
use crate::domain::{
    AgentRole, DomainError, FeedbackRecord, ProjectCatalog, Requirement, TestCase,
};
use crate::dqn::{kb_state, DqnError, DqnLearner, KbAction, KB_STATE_DIM};
use crate::knowledge_store::{embed, EdgeType, GraphEdge, KbError, KnowledgeStore, VectorRecord};
use crate::ppo::{compute_gae, ppo_update, PpoError};
use crate::qe_env::{execute_test, generate_project, EnvError, ReplayError, SyntheticProject};
use crate::rewards::{compute_reward, RewardBreakdown, RewardError};
use crate::rl_core::{MlpParams, RlError, RngStream, StreamId, Transition};

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

/// Prefix of test ids produced by the generator.
const GENERATED_PREFIX: &str = "TC-";

#[derive(Debug, Error)]
pub enum TrainerError {
    #[error("config: invalid `{key}`: {message}")]
    Validation { key: String, message: String },
    #[error("qe_env: {0}")]
    Env(#[from] EnvError),
    #[error("knowledge_store: {0}")]
    Kb(#[from] KbError),
    #[error("rl_core: {0}")]
    Rl(#[from] RlError),
    #[error("ppo: {0}")]
    Ppo(#[from] PpoError),
    #[error("dqn: {0}")]
    Dqn(#[from] DqnError),
    #[error("rewards: {0}")]
    Reward(#[from] RewardError),
    #[error("replay: {0}")]
    Replay(#[from] ReplayError),
    #[error("domain: {0}")]
    Domain(#[from] DomainError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse: {0}")]
    Parse(String),
    #[error("checkpoint: schema version mismatch: expected {expected}, found {found}")]
    SchemaVersionMismatch { expected: u32, found: u32 },
    #[error("trainer: run has no episodes")]
    EmptyRun,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PendingKbAction {
    state: Vec<f64>,
    action: usize,
}

/// Slot outcomes since the last KB action.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
struct KbInterval {
    reward_sum: f64,
    slots: usize,
    tests: usize,
    false_positives: usize,
    hits: usize,
}

impl KbInterval {
    fn mean_reward(&self) -> f64 {
        if self.slots == 0 {
            0.0
        } else {
            self.reward_sum / self.slots as f64
        }
    }

    fn fp_rate(&self) -> f64 {
        if self.tests == 0 {
            0.0
        } else {
            self.false_positives as f64 / self.tests as f64
        }
    }

    fn hit_rate(&self) -> f64 {
        if self.slots == 0 {
            0.0
        } else {
            self.hits as f64 / self.slots as f64
        }
    }
}

/// Everything that evolves during a run. Serialized as the checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunState {
    pub schema_version: u32,
    pub config: RunConfig,
    pub kb: KnowledgeStore,
    pub agents: Vec<Agent>,
    pub dqn: DqnLearner,
    pub tracker: PerformanceTracker,
    policy_rng: RngStream,
    env_rng: RngStream,
    buffer_rng: RngStream,
    kb_rng: RngStream,
    requirement_order: Vec<usize>,
    /// Completed training episodes.
    pub episode: usize,
    slot_counter: u64,
    pending_kb: Option<PendingKbAction>,
    interval: KbInterval,
    ppo_updates: usize,
    pub metrics: Vec<EpisodeMetrics>,
    pub ppo_rows: Vec<PpoRow>,
    pub dqn_rows: Vec<DqnRow>,
}

/// Full system: the run state plus the simulated project it trains against.
#[derive(Debug, Clone)]
pub struct Trainer {
    project: SyntheticProject,
    pub state: RunState,
}

impl Trainer {
    /// Validate the config and build a fresh system. The project, the initial
    /// networks and the requirement order all derive from `config.seed`.
    pub fn new(mut config: RunConfig) -> Result<Self, TrainerError> {
        config.validate()?;
        config.rl.seed = config.seed;
        let seed = config.seed;
        let project = generate_project(&config.env.project, seed)?;
        let mut kb = KnowledgeStore::new(config.kb.retrieval.clone());
        project.seed_knowledge_store(&mut kb, config.kb.embedding_dim)?;

        let mut init = RngStream::new(seed, StreamId::Init);
        let agents: Vec<Agent> = AgentRole::ALL
            .iter()
            .map(|&role| Agent::new(role, config.ppo.learning_rate, &mut init))
            .collect();
        let mut qnet = MlpParams::xavier(
            &MlpParams::standard_topology(KB_STATE_DIM, KbAction::COUNT),
            &mut init,
        );
        qnet.scale_output_layer(OUTPUT_LAYER_GAIN);
        let dqn = DqnLearner::new(config.dqn.clone(), config.rl.discount_factor, qnet);
        let mut requirement_order: Vec<usize> = (0..project.requirements().len()).collect();
        requirement_order.shuffle(&mut init);

        let state = RunState {
            schema_version: CHECKPOINT_SCHEMA_VERSION,
            tracker: PerformanceTracker::new(config.agents.tracker_window),
            config,
            kb,
            agents,
            dqn,
            policy_rng: RngStream::new(seed, StreamId::Policy),
            env_rng: RngStream::new(seed, StreamId::Environment),
            buffer_rng: RngStream::new(seed, StreamId::Buffer),
            kb_rng: RngStream::new(seed, StreamId::KnowledgeBase),
            requirement_order,
            episode: 0,
            slot_counter: 0,
            pending_kb: None,
            interval: KbInterval::default(),
            ppo_updates: 0,
            metrics: Vec::new(),
            ppo_rows: Vec::new(),
            dqn_rows: Vec::new(),
        };
        Ok(Self { project, state })
    }

    pub fn project(&self) -> &SyntheticProject {
        &self.project
    }

    pub fn config(&self) -> &RunConfig {
        &self.state.config
    }

    /// Adopt `config` for a resumed run. Only `episode_count` and
    /// `output_dir` may differ from the checkpointed config, and the run
    /// cannot be shortened below the episodes already completed.
    pub fn continue_with(&mut self, config: &RunConfig) -> Result<(), TrainerError> {
        config.validate()?;
        let mut expected = config.clone();
        expected.episode_count = self.state.config.episode_count;
        expected.output_dir = self.state.config.output_dir.clone();
        // The run seed always overrides rl.seed, so compare after the same step.
        expected.rl.seed = expected.seed;
        if expected != self.state.config {
            return Err(TrainerError::Validation {
                key: "config".into(),
                message: "differs from the checkpointed run beyond episode_count and output_dir"
                    .into(),
            });
        }
        if config.episode_count < self.state.episode {
            return Err(TrainerError::Validation {
                key: "episode_count".into(),
                message: format!(
                    "checkpoint already completed {} episodes",
                    self.state.episode
                ),
            });
        }
        self.state.config.episode_count = config.episode_count;
        self.state.config.output_dir = config.output_dir.clone();
        Ok(())
    }

    /// Train until `episode_count` episodes are complete.
    pub fn run(&mut self, sink: &mut dyn EventSink) -> Result<(), TrainerError> {
        while self.state.episode < self.state.config.episode_count {
            self.train_episode(sink)?;
        }
        sink.flush()
    }

    /// One learning episode. On error the events emitted so far are flushed
    /// before the error propagates.
    pub fn train_episode(
        &mut self,
        sink: &mut dyn EventSink,
    ) -> Result<EpisodeMetrics, TrainerError> {
        let episode = self.state.episode;
        let m = match self.episode(episode, true, sink) {
            Ok(m) => m,
            Err(e) => {
                let _ = sink.flush();
                return Err(e);
            }
        };
        self.state.metrics.push(m);
        self.state.episode += 1;
        Ok(m)
    }

    /// Greedy-policy episodes with every learning path switched off.
    pub fn evaluate(
        &mut self,
        episodes: usize,
        sink: &mut dyn EventSink,
    ) -> Result<Vec<EpisodeMetrics>, TrainerError> {
        let mut out = Vec::with_capacity(episodes);
        for i in 0..episodes {
            match self.episode(self.state.episode + i, false, sink) {
                Ok(m) => out.push(m),
                Err(e) => {
                    let _ = sink.flush();
                    return Err(e);
                }
            }
        }
        sink.flush()?;
        Ok(out)
    }

    fn episode(
        &mut self,
        episode: usize,
        learn: bool,
        sink: &mut dyn EventSink,
    ) -> Result<EpisodeMetrics, TrainerError> {
        let n_requirements = self.project.requirements().len();
        sink.emit(&Event::EpisodeStart {
            episode,
            n_requirements,
        })?;
        let mut acc = EpisodeAccumulator::default();
        for (slot, n_tests) in self.state.config.slot_plan().into_iter().enumerate() {
            self.slot(episode, slot, n_tests, learn, &mut acc, sink)?;
        }
        let m = acc.finish(episode, n_requirements);
        sink.emit(&Event::EpisodeEnd(m))?;
        Ok(m)
    }

    fn slot(
        &mut self,
        episode: usize,
        slot: usize,
        n_tests: usize,
        learn: bool,
        acc: &mut EpisodeAccumulator,
        sink: &mut dyn EventSink,
    ) -> Result<(), TrainerError> {
        let s = &mut self.state;
        let flags = s.config.ablation;
        let order = &s.requirement_order;
        let requirement: Requirement = self.project.requirements()
            [order[(s.slot_counter % order.len() as u64) as usize]]
            .clone();

        let mut decisions: Vec<AgentDecision> = Vec::with_capacity(s.agents.len());
        for agent in &s.agents {
            let st = featurize_state(&requirement, &s.tracker, agent.role, &s.kb);
            let d = agent.act(&st, &mut s.policy_rng, !learn)?;
            sink.emit(&Event::AgentAction {
                episode,
                slot,
                role: d.role,
                action_index: d.index,
                log_prob: d.log_prob,
            })?;
            decisions.push(d);
        }
        let plan = GenerationPlan::from_decisions(&decisions);
        let params = GenerationParams {
            n_tests,
            embedding_dim: s.config.kb.embedding_dim,
            layout: self.project.layout().clone(),
        };
        let batch = generate_test_cases(&plan, &requirement, &s.kb, &params, s.slot_counter)?;
        acc.add_batch(&batch);
        sink.emit(&Event::Tests {
            episode,
            slot,
            batch: batch.clone(),
        })?;

        let mut feedback = Vec::with_capacity(batch.tests.len());
        for t in &batch.tests {
            let record = execute_test(
                t,
                &self.project,
                &s.config.env.execution,
                plan.compliance,
                &mut s.env_rng,
            )?;
            let reachable = self
                .project
                .reachable_defects(&t.requirement_refs)
                .map_err(|requirement| EnvError::UnknownRequirement {
                    test: t.id.clone(),
                    requirement,
                })?
                .into_iter()
                .map(|d| d.id.clone())
                .collect::<Vec<_>>();
            acc.add_feedback(&record, &reachable);
            sink.emit(&Event::Feedback {
                episode,
                slot,
                record: record.clone(),
                reachable_defects: reachable,
            })?;
            feedback.push(record);
        }

        let history = s.tracker.reward_totals(AgentRole::TestCaseGeneration);
        let reward = compute_reward(
            &feedback,
            &history,
            &s.config.rewards.weights,
            &s.config.rewards.severity,
            flags.scalar_reward,
        )?;
        acc.add_reward(reward);
        sink.emit(&Event::SlotReward {
            episode,
            slot,
            reward,
        })?;

        let hit = batch.context_hit();
        for (agent, d) in s.agents.iter_mut().zip(&decisions) {
            let t = record_feedback(
                &mut s.tracker,
                d,
                &feedback,
                &reward,
                hit,
                &requirement,
                &s.kb,
            );
            if learn && !flags.disable_ppo {
                agent.rollout.push(t);
            }
        }

        if learn && !flags.no_feedback {
            evolve_kb(&mut s.kb, &s.config.kb, &self.project, &batch, &feedback)?;
        }

        if learn && !flags.disable_ppo {
            self.ppo_step(sink)?;
        }

        let s = &mut self.state;
        s.interval.reward_sum += reward.total;
        s.interval.slots += 1;
        s.interval.tests += feedback.len();
        s.interval.false_positives += feedback
            .iter()
            .map(|f| f.false_positive_count())
            .sum::<usize>();
        s.interval.hits += usize::from(hit);
        s.slot_counter += 1;
        if learn
            && !flags.disable_dqn
            && s.slot_counter
                .is_multiple_of(s.config.kb_action_interval as u64)
        {
            self.kb_step(sink)?;
        }
        Ok(())
    }

    fn ppo_step(&mut self, sink: &mut dyn EventSink) -> Result<(), TrainerError> {
        let s = &mut self.state;
        let (gamma, lambda) = (s.config.rl.discount_factor, s.config.rl.gae_lambda);
        for agent in s.agents.iter_mut() {
            if agent.rollout.len() < s.config.ppo.rollout_length {
                continue;
            }
            let rollout = std::mem::take(&mut agent.rollout);
            let mut values = Vec::with_capacity(rollout.len() + 1);
            for t in &rollout {
                values.push(last(&agent.params.forward(&t.state)?));
            }
            let bootstrap = rollout
                .last()
                .map(|t| agent.params.forward(&t.next_state))
                .transpose()?;
            values.push(bootstrap.map_or(0.0, |o| last(&o)));
            let mut processed = compute_gae(rollout, &values, gamma, lambda)?;
            processed.normalize_advantages();
            let report = ppo_update(
                &mut agent.params,
                &mut agent.optimizer,
                &processed,
                &s.config.ppo,
                &mut s.buffer_rng,
            )?;
            let row = PpoRow::new(s.ppo_updates, agent.role, &report);
            s.ppo_updates += 1;
            s.ppo_rows.push(row);
            sink.emit(&Event::PpoUpdate(row))?;
        }
        Ok(())
    }

    fn kb_step(&mut self, sink: &mut dyn EventSink) -> Result<(), TrainerError> {
        let s = &mut self.state;
        let interval = std::mem::take(&mut s.interval);
        let state = kb_state(
            &s.kb.params,
            interval.mean_reward(),
            interval.fp_rate(),
            interval.hit_rate(),
        );
        if let Some(p) = s.pending_kb.take() {
            s.dqn.observe(Transition {
                state: p.state,
                action: p.action,
                reward: interval.mean_reward(),
                next_state: state.clone(),
                done: false,
                log_prob_old: None,
            });
        }
        let report = s.dqn.maybe_train(&mut s.buffer_rng)?;
        let epsilon = s.dqn.epsilon();
        let action = s.dqn.act(&state, &mut s.kb_rng)?;
        s.kb.apply_kb_action(KbAction::from_index(action).unwrap_or(KbAction::NoOp));
        s.pending_kb = Some(PendingKbAction { state, action });
        let row = DqnRow {
            step: s.dqn.action_steps,
            epsilon,
            loss: report.map(|r| r.loss),
            mean_q: report.map(|r| r.mean_q),
            chosen_action: action,
        };
        s.dqn_rows.push(row);
        sink.emit(&Event::KbAction(row))?;
        Ok(())
    }

    /// Serialize the run state. Two calls without intervening steps produce
    /// identical bytes.
    pub fn checkpoint_bytes(&self) -> Result<Vec<u8>, TrainerError> {
        serde_json::to_vec(&self.state).map_err(|e| TrainerError::Parse(e.to_string()))
    }

    /// Write the checkpoint atomically (temporary file, then rename).
    pub fn checkpoint(&self, path: &Path) -> Result<(), TrainerError> {
        let bytes = self.checkpoint_bytes()?;
        let tmp = path.with_extension("tmp");
        {
            let mut f = std::fs::File::create(&tmp)?;
            f.write_all(&bytes)?;
            f.sync_all()?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn restore_bytes(bytes: &[u8]) -> Result<Self, TrainerError> {
        let value: serde_json::Value =
            serde_json::from_slice(bytes).map_err(|e| TrainerError::Parse(e.to_string()))?;
        let found = value
            .get("schema_version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| TrainerError::Parse("missing schema_version".into()))?;
        if found != u64::from(CHECKPOINT_SCHEMA_VERSION) {
            return Err(TrainerError::SchemaVersionMismatch {
                expected: CHECKPOINT_SCHEMA_VERSION,
                found: found.try_into().unwrap_or(u32::MAX),
            });
        }
        let state: RunState =
            serde_json::from_value(value).map_err(|e| TrainerError::Parse(e.to_string()))?;
        state.config.validate()?;
        let project = generate_project(&state.config.env.project, state.config.seed)?;
        Ok(Self { project, state })
    }

    /// Load a checkpoint. A damaged file yields an error, never a partial state.
    pub fn restore(path: &Path) -> Result<Self, TrainerError> {
        Self::restore_bytes(&std::fs::read(path)?)
    }
}

fn last(v: &[f64]) -> f64 {
    v.last().copied().unwrap_or(0.0)
}

/// Store tests that found real defects, reinforce the edges among each test's
/// contributing context, then drop the least useful generated tests beyond
/// the cap.
fn evolve_kb(
    kb: &mut KnowledgeStore,
    config: &KbConfig,
    project: &SyntheticProject,
    batch: &GeneratedBatch,
    feedback: &[FeedbackRecord],
) -> Result<(), TrainerError> {
    for (t, fb) in batch.tests.iter().zip(feedback) {
        // Each newly found defect gets a regression test in the store.
        for id in fb.true_defects().filter_map(|d| d.defect_id()) {
            let test_id = format!("{GENERATED_PREFIX}REG-{id}");
            if kb.test_case(&test_id).is_some() {
                continue;
            }
            if let Some(reg) = project.regression_test(id, test_id) {
                ingest_test(kb, &reg.test, &reg.tokens, config.embedding_dim)?;
            }
        }
        let mut ctx: Vec<&str> = batch.context.iter().map(String::as_str).collect();
        ctx.push(&t.id);
        ctx.extend(t.requirement_refs.iter().map(String::as_str));
        kb.reinforce_edges(fb, &ctx, config.edge_learning_rate);
    }
    prune_generated(kb, config.max_generated_tests);
    Ok(())
}

fn ingest_test(
    kb: &mut KnowledgeStore,
    test: &TestCase,
    tokens: &[String],
    dim: usize,
) -> Result<(), TrainerError> {
    kb.add_node(test.id.clone());
    kb.insert_test_case(test.clone());
    kb.insert_record(VectorRecord {
        id: test.id.clone(),
        embedding: embed(tokens, dim)?,
        payload_ref: test.id.clone(),
        usefulness: 0.5,
    })?;
    for r in &test.requirement_refs {
        if kb.contains_node(r) {
            kb.upsert_edge(GraphEdge {
                source: r.clone(),
                target: test.id.clone(),
                edge_type: EdgeType::DetectedBy,
                weight: 0.5,
            })?;
        }
    }
    Ok(())
}

fn prune_generated(kb: &mut KnowledgeStore, cap: usize) {
    let mut generated: Vec<(f64, String)> = kb
        .records()
        .filter(|r| r.id.starts_with(GENERATED_PREFIX))
        .map(|r| (r.usefulness, r.id.clone()))
        .collect();
    if generated.len() <= cap {
        return;
    }
    generated.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
    let excess = generated.len() - cap;
    for (_, id) in generated.into_iter().take(excess) {
        kb.remove_node(&id);
    }
}

/// What feeding a feedback file through the learning path did.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub records: usize,
    pub edges_touched: usize,
    pub tests_ingested: usize,
    pub mean_reward: RewardBreakdown,
}

/// Feed validated feedback records through the reward and KB-evolution path,
/// with no simulator. Each record's context is its test and the test's
/// requirements, looked up in `catalog`.
pub fn replay_into_kb(
    kb: &mut KnowledgeStore,
    records: impl IntoIterator<Item = Result<FeedbackRecord, ReplayError>>,
    catalog: &ProjectCatalog,
    config: &RunConfig,
) -> Result<ReplayReport, TrainerError> {
    let mut rewards = Vec::new();
    let mut history: Vec<f64> = Vec::new();
    let mut edges_touched = 0;
    let mut tests_ingested = 0;
    let mut count = 0;
    for r in records {
        let fb = r?;
        count += 1;
        let test = catalog
            .tests
            .get(&fb.test_case_ref)
            .ok_or_else(|| DomainError::UnknownTestCase(fb.test_case_ref.clone()))?;
        let window_start = history.len().saturating_sub(config.agents.tracker_window);
        let reward = compute_reward(
            std::slice::from_ref(&fb),
            &history[window_start..],
            &config.rewards.weights,
            &config.rewards.severity,
            config.ablation.scalar_reward,
        )?;
        history.push(reward.total);
        rewards.push(reward);
        if config.ablation.no_feedback {
            continue;
        }
        if fb.true_defect_count() > 0 && kb.test_case(&test.id).is_none() {
            let mut tokens: Vec<String> = test.requirement_refs.clone();
            tokens.extend([test.strategy.name().to_string(), "generated".to_string()]);
            ingest_test(kb, test, &tokens, config.kb.embedding_dim)?;
            tests_ingested += 1;
        }
        let mut ctx: Vec<&str> = vec![&test.id];
        ctx.extend(test.requirement_refs.iter().map(String::as_str));
        edges_touched += kb.reinforce_edges(&fb, &ctx, config.kb.edge_learning_rate);
    }
    Ok(ReplayReport {
        records: count,
        edges_touched,
        tests_ingested,
        mean_reward: RewardBreakdown::mean(&rewards),
    })
}

/// Every generated test seen in an event log, for replay validation.
pub fn catalog_from_events<'a>(
    project: &SyntheticProject,
    events: impl IntoIterator<Item = &'a Event>,
) -> ProjectCatalog {
    let tests = events.into_iter().flat_map(|e| match e {
        Event::Tests { batch, .. } => batch.tests.clone(),
        _ => Vec::new(),
    });
    project.catalog_for(tests)
}

/// Feedback records of an event log, in order.
pub fn feedback_from_events<'a>(
    events: impl IntoIterator<Item = &'a Event>,
) -> Vec<FeedbackRecord> {
    events
        .into_iter()
        .filter_map(|e| match e {
            Event::Feedback { record, .. } => Some(record.clone()),
            _ => None,
        })
        .collect()
}

/// Paths of the artifacts a run writes into its output directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunArtifacts {
    pub events: PathBuf,
    pub metrics: PathBuf,
    pub ppo: PathBuf,
    pub dqn: PathBuf,
    pub checkpoint: PathBuf,
    pub catalog: PathBuf,
    pub feedback: PathBuf,
}

impl RunArtifacts {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            events: dir.join("events.jsonl"),
            metrics: dir.join("metrics.csv"),
            ppo: dir.join("ppo_updates.csv"),
            dqn: dir.join("dqn.csv"),
            checkpoint: dir.join("checkpoint.json"),
            catalog: dir.join("catalog.json"),
            feedback: dir.join("feedback.jsonl"),
        }
    }
}

/// Train to completion, streaming events to `dir`, then write the CSVs, the
/// final checkpoint, the feedback file and its catalog. When `resume` is
/// given the run continues from that state and appends to the event log.
pub fn train_to_dir(
    trainer: &mut Trainer,
    dir: &Path,
    resume: bool,
) -> Result<RunArtifacts, TrainerError> {
    std::fs::create_dir_all(dir)?;
    let paths = RunArtifacts::in_dir(dir);
    if !resume && paths.events.exists() {
        std::fs::remove_file(&paths.events)?;
    }
    let mut sink = JsonlSink::append(&paths.events)?;
    trainer.run(&mut sink)?;
    drop(sink);
    write_run_outputs(trainer, &paths)?;
    Ok(paths)
}

fn write_run_outputs(trainer: &Trainer, paths: &RunArtifacts) -> Result<(), TrainerError> {
    let s = &trainer.state;
    std::fs::write(&paths.metrics, metrics_csv(&s.metrics)?)?;
    std::fs::write(&paths.ppo, ppo_csv(&s.ppo_rows)?)?;
    std::fs::write(&paths.dqn, dqn_csv(&s.dqn_rows)?)?;
    trainer.checkpoint(&paths.checkpoint)?;
    let events = read_events(&paths.events)?;
    let catalog = catalog_from_events(trainer.project(), &events);
    std::fs::write(
        &paths.catalog,
        serde_json::to_vec(&catalog).map_err(|e| TrainerError::Parse(e.to_string()))?,
    )?;
    let feedback = feedback_from_events(&events);
    crate::qe_env::write_feedback_jsonl(&paths.feedback, &feedback)?;
    Ok(())
}

/// Requirements touched by a set of tests.
pub fn touched_requirements<'a>(tests: impl IntoIterator<Item = &'a TestCase>) -> BTreeSet<String> {
    tests
        .into_iter()
        .flat_map(|t| t.requirement_refs.iter().cloned())
        .collect()
}
