//! The five agent roles: PPO policies with role-specific action spaces, state
//! featurization, test-case generation and the shared performance tracker.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::domain::{
    AgentRole, CoverageLayout, FeedbackRecord, GenerationStrategy, Requirement, RetrievalMode,
    Severity, TestCase,
};
use crate::knowledge_store::{embed, EdgeType, KbError, KnowledgeStore};
use crate::ppo::policy_value;
use crate::qe_env::ComplianceLevel;
use crate::rewards::{adaptation_reward, RewardBreakdown};
use crate::rl_core::{argmax, sample_action, Adam, MlpParams, RlError, RngStream, Transition};

pub const STATE_DIM: usize = 16;
/// Agent state followed by a one-hot role id.
pub const POLICY_INPUT_DIM: usize = STATE_DIM + AgentRole::ALL.len();
pub const DEFAULT_TRACKER_WINDOW: usize = 50;
/// Gain applied to the freshly initialized policy/value output layer so the
/// initial policy is close to uniform.
pub const OUTPUT_LAYER_GAIN: f64 = 0.01;
const REQUIREMENT_FEATURES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SignatureShaping {
    Standard,
    Sharpen,
    Smooth,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ComponentFocus {
    Neutral,
    OwnComponent,
    AllComponents,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum IntegrationChoice {
    Skip,
    DependentNeighbor,
    ImpactedNeighbor,
}

const SHAPINGS: [SignatureShaping; 3] = [
    SignatureShaping::Standard,
    SignatureShaping::Sharpen,
    SignatureShaping::Smooth,
];
const FOCUSES: [ComponentFocus; 3] = [
    ComponentFocus::Neutral,
    ComponentFocus::OwnComponent,
    ComponentFocus::AllComponents,
];
const INTEGRATIONS: [IntegrationChoice; 3] = [
    IntegrationChoice::Skip,
    IntegrationChoice::DependentNeighbor,
    IntegrationChoice::ImpactedNeighbor,
];

/// One decision of one agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AgentAction {
    Generate {
        strategy: GenerationStrategy,
        mode: RetrievalMode,
    },
    Shaping(SignatureShaping),
    Focus(ComponentFocus),
    Integration(IntegrationChoice),
    Compliance(ComplianceLevel),
}

pub fn action_space_size(role: AgentRole) -> usize {
    match role {
        AgentRole::TestCaseGeneration => GenerationStrategy::COUNT * RetrievalMode::COUNT,
        AgentRole::LegacyTestAnalysis => SHAPINGS.len(),
        AgentRole::FunctionalChangeMapping => FOCUSES.len(),
        AgentRole::IntegrationPoint => INTEGRATIONS.len(),
        AgentRole::ComplianceValidation => ComplianceLevel::ALL.len(),
    }
}

impl AgentAction {
    pub fn from_index(role: AgentRole, index: usize) -> Option<Self> {
        Some(match role {
            AgentRole::TestCaseGeneration => AgentAction::Generate {
                strategy: GenerationStrategy::from_index(index / RetrievalMode::COUNT)?,
                mode: RetrievalMode::from_index(index % RetrievalMode::COUNT)?,
            },
            AgentRole::LegacyTestAnalysis => AgentAction::Shaping(*SHAPINGS.get(index)?),
            AgentRole::FunctionalChangeMapping => AgentAction::Focus(*FOCUSES.get(index)?),
            AgentRole::IntegrationPoint => AgentAction::Integration(*INTEGRATIONS.get(index)?),
            AgentRole::ComplianceValidation => {
                AgentAction::Compliance(*ComplianceLevel::ALL.get(index)?)
            }
        })
    }

    pub fn index(self) -> usize {
        fn pos<T: PartialEq>(options: &[T], v: T) -> usize {
            options.iter().position(|x| *x == v).unwrap_or(0)
        }
        match self {
            AgentAction::Generate { strategy, mode } => {
                strategy.index() * RetrievalMode::COUNT + mode.index()
            }
            AgentAction::Shaping(s) => pos(&SHAPINGS, s),
            AgentAction::Focus(f) => pos(&FOCUSES, f),
            AgentAction::Integration(i) => pos(&INTEGRATIONS, i),
            AgentAction::Compliance(c) => pos(&ComplianceLevel::ALL, c),
        }
    }

    pub fn role(self) -> AgentRole {
        match self {
            AgentAction::Generate { .. } => AgentRole::TestCaseGeneration,
            AgentAction::Shaping(_) => AgentRole::LegacyTestAnalysis,
            AgentAction::Focus(_) => AgentRole::FunctionalChangeMapping,
            AgentAction::Integration(_) => AgentRole::IntegrationPoint,
            AgentAction::Compliance(_) => AgentRole::ComplianceValidation,
        }
    }
}

/// Fixed-length agent observation, every entry in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentState(Vec<f64>);

impl AgentState {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// State followed by the one-hot role id.
    pub fn policy_input(&self, role: AgentRole) -> Vec<f64> {
        let mut v = self.0.clone();
        v.extend(
            AgentRole::ALL
                .iter()
                .map(|r| if *r == role { 1.0 } else { 0.0 }),
        );
        v
    }
}

/// Outcome summary of one slot as seen by one agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackerEntry {
    pub reward: RewardBreakdown,
    pub tests: usize,
    pub true_defects: usize,
    pub false_positives: usize,
    /// Sum over true defects of severity level / 4 (Critical = 1).
    pub severity_sum: f64,
    pub quality_sum: f64,
    /// Whether retrieval returned usable context for this slot.
    pub context_hit: bool,
}

fn severity_level(s: Severity) -> f64 {
    match s {
        Severity::Critical => 1.0,
        Severity::High => 0.75,
        Severity::Medium => 0.5,
        Severity::Low => 0.25,
    }
}

impl TrackerEntry {
    pub fn from_feedback(
        feedback: &[FeedbackRecord],
        reward: RewardBreakdown,
        context_hit: bool,
    ) -> Self {
        let mut e = TrackerEntry {
            reward,
            tests: feedback.len(),
            true_defects: 0,
            false_positives: 0,
            severity_sum: 0.0,
            quality_sum: 0.0,
            context_hit,
        };
        for f in feedback {
            e.quality_sum += f.quality_rating;
            e.false_positives += f.false_positive_count();
            for d in f.true_defects() {
                e.true_defects += 1;
                e.severity_sum += severity_level(d.severity);
            }
        }
        e
    }
}

/// Aggregates over one rolling window; all zero for an empty window.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct WindowAggregates {
    pub defect_rate: f64,
    pub false_positive_rate: f64,
    pub mean_severity: f64,
    pub mean_quality: f64,
    pub reward_mean: f64,
    pub reward_trend: f64,
    pub hit_rate: f64,
}

/// Per-role rolling windows of slot outcomes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerformanceTracker {
    window: usize,
    windows: BTreeMap<AgentRole, VecDeque<TrackerEntry>>,
}

impl Default for PerformanceTracker {
    fn default() -> Self {
        Self::new(DEFAULT_TRACKER_WINDOW)
    }
}

impl PerformanceTracker {
    pub fn new(window: usize) -> Self {
        Self {
            window: window.max(1),
            windows: AgentRole::ALL
                .iter()
                .map(|r| (*r, VecDeque::new()))
                .collect(),
        }
    }

    pub fn window_size(&self) -> usize {
        self.window
    }

    pub fn push(&mut self, role: AgentRole, entry: TrackerEntry) {
        let w = self.windows.entry(role).or_default();
        if w.len() == self.window {
            w.pop_front();
        }
        w.push_back(entry);
    }

    pub fn entries(&self, role: AgentRole) -> impl Iterator<Item = &TrackerEntry> {
        self.windows.get(&role).into_iter().flatten()
    }

    pub fn len(&self, role: AgentRole) -> usize {
        self.windows.get(&role).map_or(0, |w| w.len())
    }

    pub fn reward_totals(&self, role: AgentRole) -> Vec<f64> {
        self.entries(role).map(|e| e.reward.total).collect()
    }

    pub fn aggregates(&self, role: AgentRole) -> WindowAggregates {
        let n = self.len(role);
        if n == 0 {
            return WindowAggregates::default();
        }
        let (mut tests, mut tp, mut fp, mut sev, mut q, mut r, mut hits) =
            (0usize, 0usize, 0usize, 0.0, 0.0, 0.0, 0usize);
        for e in self.entries(role) {
            tests += e.tests;
            tp += e.true_defects;
            fp += e.false_positives;
            sev += e.severity_sum;
            q += e.quality_sum;
            r += e.reward.total;
            hits += usize::from(e.context_hit);
        }
        let per_test = |x: f64| {
            if tests == 0 {
                0.0
            } else {
                (x / tests as f64).min(1.0)
            }
        };
        WindowAggregates {
            defect_rate: per_test(tp as f64),
            false_positive_rate: per_test(fp as f64),
            mean_severity: if tp == 0 { 0.0 } else { sev / tp as f64 },
            mean_quality: per_test(q),
            reward_mean: r / n as f64,
            reward_trend: adaptation_reward(&self.reward_totals(role)),
            hit_rate: hits as f64 / n as f64,
        }
    }
}

/// Requirement summary, feedback aggregates, KB summary and reward trend.
pub fn featurize_state(
    requirement: &Requirement,
    tracker: &PerformanceTracker,
    role: AgentRole,
    kb: &KnowledgeStore,
) -> AgentState {
    let mut v = Vec::with_capacity(STATE_DIM);
    match embed(&requirement.tokens(), REQUIREMENT_FEATURES) {
        Ok(e) => v.extend(e),
        Err(_) => v.extend([0.0; REQUIREMENT_FEATURES]),
    }
    let a = tracker.aggregates(role);
    v.extend([
        a.defect_rate,
        a.false_positive_rate,
        a.mean_severity,
        a.mean_quality,
    ]);
    v.extend([kb.params.similarity_threshold, kb.mean_edge_weight()]);
    v.extend([a.reward_mean.tanh(), a.reward_trend]);
    AgentState(
        v.into_iter()
            .map(|x| {
                if x.is_finite() {
                    x.clamp(-1.0, 1.0)
                } else {
                    0.0
                }
            })
            .collect(),
    )
}

/// Sampled (or greedy) decision with what the rollout needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentDecision {
    pub role: AgentRole,
    pub action: AgentAction,
    pub index: usize,
    pub log_prob: f64,
    pub value: f64,
    pub input: Vec<f64>,
}

/// One role's policy/value network, its optimizer state and pending rollout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agent {
    pub role: AgentRole,
    pub params: MlpParams,
    pub optimizer: Adam,
    pub rollout: Vec<Transition>,
}

impl Agent {
    pub fn new(role: AgentRole, learning_rate: f64, rng: &mut RngStream) -> Self {
        let sizes = MlpParams::standard_topology(POLICY_INPUT_DIM, action_space_size(role) + 1);
        let mut params = MlpParams::xavier(&sizes, rng);
        params.scale_output_layer(OUTPUT_LAYER_GAIN);
        let optimizer = Adam::new(learning_rate, params.len());
        Self {
            role,
            params,
            optimizer,
            rollout: Vec::new(),
        }
    }

    pub fn n_actions(&self) -> usize {
        action_space_size(self.role)
    }

    /// Sample from the categorical policy, or take its argmax when
    /// `deterministic` (ties to the lowest index).
    pub fn act(
        &self,
        state: &AgentState,
        rng: &mut RngStream,
        deterministic: bool,
    ) -> Result<AgentDecision, RlError> {
        let input = state.policy_input(self.role);
        let out = self.params.forward(&input)?;
        let (dist, value) = policy_value(&out);
        let index = if deterministic {
            argmax(&dist.probs)
        } else {
            sample_action(&dist.probs, rng)
        };
        let action =
            AgentAction::from_index(self.role, index).ok_or(RlError::DimensionMismatch {
                expected: self.n_actions(),
                got: index + 1,
            })?;
        Ok(AgentDecision {
            role: self.role,
            action,
            index,
            log_prob: dist.log_probs[index],
            value,
            input,
        })
    }

    pub fn value(&self, state: &AgentState) -> Result<f64, RlError> {
        let out = self.params.forward(&state.policy_input(self.role))?;
        Ok(out[out.len() - 1])
    }
}

/// Push the slot outcome into the role's window and build the rollout
/// transition `(state, action, reward.total, next_state, done = false)`,
/// where `next_state` is the role's state after the push.
pub fn record_feedback(
    tracker: &mut PerformanceTracker,
    decision: &AgentDecision,
    feedback: &[FeedbackRecord],
    reward: &RewardBreakdown,
    context_hit: bool,
    requirement: &Requirement,
    kb: &KnowledgeStore,
) -> Transition {
    tracker.push(
        decision.role,
        TrackerEntry::from_feedback(feedback, *reward, context_hit),
    );
    let next_state = featurize_state(requirement, tracker, decision.role, kb);
    Transition {
        state: decision.input.clone(),
        action: decision.index,
        reward: reward.total,
        next_state: next_state.policy_input(decision.role),
        done: false,
        log_prob_old: Some(decision.log_prob),
    }
}

/// Combined decisions of the generation and modifier agents for one slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationPlan {
    pub strategy: GenerationStrategy,
    pub mode: RetrievalMode,
    pub shaping: SignatureShaping,
    pub focus: ComponentFocus,
    pub integration: IntegrationChoice,
    pub compliance: ComplianceLevel,
}

impl Default for GenerationPlan {
    fn default() -> Self {
        Self {
            strategy: GenerationStrategy::HappyPath,
            mode: RetrievalMode::VectorOnly,
            shaping: SignatureShaping::Standard,
            focus: ComponentFocus::Neutral,
            integration: IntegrationChoice::Skip,
            compliance: ComplianceLevel::Standard,
        }
    }
}

impl GenerationPlan {
    pub fn from_decisions<'a>(decisions: impl IntoIterator<Item = &'a AgentDecision>) -> Self {
        let mut plan = Self::default();
        for d in decisions {
            match d.action {
                AgentAction::Generate { strategy, mode } => {
                    plan.strategy = strategy;
                    plan.mode = mode;
                }
                AgentAction::Shaping(s) => plan.shaping = s,
                AgentAction::Focus(f) => plan.focus = f,
                AgentAction::Integration(i) => plan.integration = i,
                AgentAction::Compliance(c) => plan.compliance = c,
            }
        }
        plan
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerationParams {
    pub n_tests: usize,
    pub embedding_dim: usize,
    pub layout: CoverageLayout,
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self {
            n_tests: 3,
            embedding_dim: crate::knowledge_store::DEFAULT_EMBEDDING_DIM,
            layout: CoverageLayout::default(),
        }
    }
}

/// Generated tests plus the knowledge that shaped them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedBatch {
    pub tests: Vec<TestCase>,
    /// Seed requirement ids and the context test ids actually blended in.
    pub context: Vec<String>,
}

impl GeneratedBatch {
    pub fn context_hit(&self) -> bool {
        self.context.iter().any(|c| !c.starts_with("REQ-"))
    }
}

/// Strategy signature after the analysis and mapping modifiers.
pub fn shaped_signature(
    layout: &CoverageLayout,
    strategy: GenerationStrategy,
    shaping: SignatureShaping,
    focus: ComponentFocus,
    requirement: &Requirement,
) -> Vec<f64> {
    let mut s = layout.strategy_signature(strategy);
    match shaping {
        SignatureShaping::Standard => {}
        SignatureShaping::Sharpen => s.iter_mut().for_each(|x| *x *= *x),
        SignatureShaping::Smooth => {
            let mean = s.iter().sum::<f64>() / s.len() as f64;
            s.iter_mut().for_each(|x| *x = 0.5 * *x + 0.5 * mean);
        }
    }
    match focus {
        ComponentFocus::Neutral => {}
        ComponentFocus::OwnComponent => {
            for tag in &requirement.component_tags {
                if let Some(r) = layout.component_dims(tag) {
                    s[r].iter_mut().for_each(|x| *x = x.max(0.9));
                }
            }
        }
        ComponentFocus::AllComponents => {
            s[layout.components_range()]
                .iter_mut()
                .for_each(|x| *x = (*x + 0.3).min(1.0));
        }
    }
    s
}

/// `0.6 * signature + 0.4 * mean(context)` clamped to `[0, 1]`; without
/// context the signature weight renormalizes to 1.
pub fn blend_coverage(signature: &[f64], context: &[&[f64]]) -> Vec<f64> {
    if context.is_empty() {
        return signature.iter().map(|x| x.clamp(0.0, 1.0)).collect();
    }
    let n = context.len() as f64;
    signature
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let mean = context.iter().map(|c| c[i]).sum::<f64>() / n;
            (0.6 * s + 0.4 * mean).clamp(0.0, 1.0)
        })
        .collect()
}

fn test_id(parts: &[String], coverage: &[f64]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.as_bytes());
        h.update([0u8]);
    }
    for c in coverage {
        h.update(c.to_bits().to_le_bytes());
    }
    let digest = h.finalize();
    let hex: String = digest.iter().take(8).map(|b| format!("{b:02x}")).collect();
    format!("TC-{hex}")
}

/// Best-weighted outgoing neighbor of `from` over `edge_type`.
fn neighbor(kb: &KnowledgeStore, from: &str, edge_type: EdgeType) -> Option<String> {
    kb.edges()
        .filter(|e| e.source == from && e.edge_type == edge_type && e.target.starts_with("REQ-"))
        .fold(None::<(String, f64)>, |best, e| match best {
            Some((id, w)) if w >= e.weight => Some((id, w)),
            _ => Some((e.target, e.weight)),
        })
        .map(|(id, _)| id)
}

/// Build `n_tests` tests for `requirement`. The last slot is replaced by an
/// integration test when the integration agent picked a neighbor that exists.
/// `sequence` distinguishes otherwise identical batches.
pub fn generate_test_cases(
    plan: &GenerationPlan,
    requirement: &Requirement,
    kb: &KnowledgeStore,
    params: &GenerationParams,
    sequence: u64,
) -> Result<GeneratedBatch, KbError> {
    let query = embed(&requirement.tokens(), params.embedding_dim)?;
    let seeds = [requirement.id.as_str()];
    let items = kb.hybrid_retrieve(&query, &seeds, plan.mode, &kb.params)?;
    let mut context = vec![requirement.id.clone()];
    let mut vectors: Vec<&[f64]> = Vec::new();
    for item in items.iter().filter(|i| i.score > 0.0) {
        if vectors.len() >= kb.params.top_k {
            break;
        }
        if let Some(t) = kb.test_case(&item.id) {
            if t.coverage_vector.len() == params.layout.dim() {
                vectors.push(&t.coverage_vector);
                context.push(item.id.clone());
            }
        }
    }

    let make = |strategy: GenerationStrategy, refs: Vec<String>, agent: AgentRole, j: usize| {
        let sig = shaped_signature(
            &params.layout,
            strategy,
            plan.shaping,
            plan.focus,
            requirement,
        );
        let coverage = blend_coverage(&sig, &vectors);
        let mut parts = refs.clone();
        parts.extend([
            strategy.name().to_string(),
            format!("{:?}", plan.mode),
            format!("{agent:?}"),
            sequence.to_string(),
            j.to_string(),
        ]);
        TestCase {
            id: test_id(&parts, &coverage),
            requirement_refs: refs,
            strategy,
            retrieval_mode: plan.mode,
            coverage_vector: coverage,
            generating_agent: agent,
        }
    };

    let mut tests: Vec<TestCase> = (0..params.n_tests)
        .map(|j| {
            make(
                plan.strategy,
                vec![requirement.id.clone()],
                AgentRole::TestCaseGeneration,
                j,
            )
        })
        .collect();
    let edge = match plan.integration {
        IntegrationChoice::Skip => None,
        IntegrationChoice::DependentNeighbor => Some(EdgeType::DependsOn),
        IntegrationChoice::ImpactedNeighbor => Some(EdgeType::Impacts),
    };
    if let (Some(edge), Some(last)) = (edge, params.n_tests.checked_sub(1)) {
        if let Some(n) = neighbor(kb, &requirement.id, edge) {
            tests[last] = make(
                GenerationStrategy::Integration,
                vec![requirement.id.clone(), n],
                AgentRole::IntegrationPoint,
                last,
            );
        }
    }
    Ok(GeneratedBatch { tests, context })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{DefectReport, HiddenDefectIds};
    use crate::knowledge_store::{GraphEdge, RetrievalParams, VectorRecord};
    use crate::rl_core::StreamId;
    use std::collections::BTreeSet;

    fn req() -> Requirement {
        Requirement {
            id: "REQ-001".into(),
            text: "payments0 payments3 validate limit feature1".into(),
            component_tags: BTreeSet::from(["payments".to_string()]),
            hidden_defect_ids: HiddenDefectIds::default(),
        }
    }

    fn feedback(tp: usize, fp: usize) -> FeedbackRecord {
        let mut defects: Vec<DefectReport> = (0..tp)
            .map(|i| DefectReport::true_positive(&format!("D{i}"), "t", Severity::Medium))
            .collect();
        if fp > 0 {
            defects.push(DefectReport::false_positive("t", Severity::Low));
        }
        FeedbackRecord {
            test_case_ref: "t".into(),
            quality_rating: if tp + fp == 0 {
                1.0
            } else {
                tp as f64 / (tp + fp) as f64
            },
            defects,
            execution_time: 5.0,
            baseline_time: 8.0,
            requirement_coverage_assessment: 0.5,
            functional_coverage_validation: 0.5,
            workflow_integration_factor: 1.0,
            compliance_score: 1.0,
        }
    }

    fn breakdown(total: f64) -> RewardBreakdown {
        RewardBreakdown {
            total,
            ..Default::default()
        }
    }

    #[test]
    fn action_spaces() {
        assert_eq!(action_space_size(AgentRole::TestCaseGeneration), 15);
        for role in AgentRole::ALL {
            let n = action_space_size(role);
            assert!((3..=15).contains(&n));
            for i in 0..n {
                let a = AgentAction::from_index(role, i).unwrap();
                assert_eq!(a.index(), i);
                assert_eq!(a.role(), role);
            }
            assert!(AgentAction::from_index(role, n).is_none());
        }
    }

    #[test]
    fn fresh_state_has_zero_aggregates() {
        let kb = KnowledgeStore::new(RetrievalParams::default());
        let s = featurize_state(
            &req(),
            &PerformanceTracker::default(),
            AgentRole::TestCaseGeneration,
            &kb,
        );
        assert_eq!(s.as_slice().len(), STATE_DIM);
        assert_eq!(&s.as_slice()[8..12], &[0.0; 4]);
        assert_eq!(&s.as_slice()[14..16], &[0.0; 2]);
        assert!(s.as_slice().iter().all(|x| (-1.0..=1.0).contains(x)));
        let s2 = featurize_state(
            &req(),
            &PerformanceTracker::default(),
            AgentRole::TestCaseGeneration,
            &kb,
        );
        assert_eq!(s, s2);
    }

    #[test]
    fn hand_built_tracker_defect_rate() {
        let mut t = PerformanceTracker::default();
        let role = AgentRole::TestCaseGeneration;
        t.push(
            role,
            TrackerEntry::from_feedback(&[feedback(1, 0)], breakdown(1.0), true),
        );
        t.push(
            role,
            TrackerEntry::from_feedback(&[feedback(0, 0)], breakdown(0.0), false),
        );
        let kb = KnowledgeStore::new(RetrievalParams::default());
        let s = featurize_state(&req(), &t, role, &kb);
        assert!((s.as_slice()[8] - 0.5).abs() < 1e-12);
        assert!((s.as_slice()[10] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn window_evicts_oldest() {
        let mut t = PerformanceTracker::new(3);
        for i in 0..4 {
            t.push(
                AgentRole::IntegrationPoint,
                TrackerEntry::from_feedback(&[], breakdown(i as f64), false),
            );
        }
        assert_eq!(
            t.reward_totals(AgentRole::IntegrationPoint),
            vec![1.0, 2.0, 3.0]
        );
        assert_eq!(t.len(AgentRole::TestCaseGeneration), 0);
    }

    #[test]
    fn aggregates_match_recomputation() {
        let batches = [
            vec![feedback(2, 1), feedback(0, 0)],
            vec![feedback(1, 0)],
            vec![feedback(0, 1)],
        ];
        let mut t = PerformanceTracker::default();
        let role = AgentRole::ComplianceValidation;
        for (i, b) in batches.iter().enumerate() {
            t.push(
                role,
                TrackerEntry::from_feedback(b, breakdown(i as f64 * 0.5), i != 1),
            );
        }
        let a = t.aggregates(role);
        let all: Vec<&FeedbackRecord> = batches.iter().flatten().collect();
        let tests = all.len() as f64;
        let tp: usize = all.iter().map(|f| f.true_defect_count()).sum();
        let fp: usize = all.iter().map(|f| f.false_positive_count()).sum();
        let q: f64 = all.iter().map(|f| f.quality_rating).sum();
        assert!((a.defect_rate - tp as f64 / tests).abs() < 1e-12);
        assert!((a.false_positive_rate - fp as f64 / tests).abs() < 1e-12);
        assert!((a.mean_quality - q / tests).abs() < 1e-12);
        assert!((a.mean_severity - 0.5).abs() < 1e-12);
        assert!((a.reward_mean - 0.5).abs() < 1e-12);
        assert!((a.hit_rate - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn record_feedback_passes_reward_through() {
        let mut rng = RngStream::new(1, StreamId::Init);
        let agent = Agent::new(AgentRole::TestCaseGeneration, 3e-4, &mut rng);
        let kb = KnowledgeStore::new(RetrievalParams::default());
        let mut t = PerformanceTracker::default();
        let s = featurize_state(&req(), &t, agent.role, &kb);
        let d = agent.act(&s, &mut rng, false).unwrap();
        let tr = record_feedback(
            &mut t,
            &d,
            &[feedback(0, 0)],
            &breakdown(0.0),
            false,
            &req(),
            &kb,
        );
        assert_eq!(tr.reward, 0.0);
        assert_eq!(tr.state.len(), POLICY_INPUT_DIM);
        assert_eq!(tr.log_prob_old, Some(d.log_prob));
        assert!(!tr.done);
        assert_eq!(t.len(agent.role), 1);
    }

    #[test]
    fn initial_policy_is_uniform() {
        let mut init = RngStream::new(4, StreamId::Init);
        let agent = Agent::new(AgentRole::TestCaseGeneration, 3e-4, &mut init);
        let kb = KnowledgeStore::new(RetrievalParams::default());
        let s = featurize_state(&req(), &PerformanceTracker::default(), agent.role, &kb);
        let mut rng = RngStream::new(5, StreamId::Policy);
        let mut counts = [0usize; 15];
        let n = 100_000;
        for _ in 0..n {
            counts[agent.act(&s, &mut rng, false).unwrap().index] += 1;
        }
        for c in counts {
            assert!((c as f64 / n as f64 - 1.0 / 15.0).abs() < 0.02);
        }
    }

    #[test]
    fn deterministic_act_is_argmax_and_reproducible() {
        let mut init = RngStream::new(4, StreamId::Init);
        let mut agent = Agent::new(AgentRole::ComplianceValidation, 3e-4, &mut init);
        let last = agent.params.layer_count() - 1;
        for i in 0..4 {
            agent.params.set_bias(last, i, [0.2, 0.7, 0.7, 0.0][i]);
        }
        for r in 0..agent.params.sizes()[last] {
            for i in 0..4 {
                agent.params.set_weight(last, i, r, 0.0);
            }
        }
        let kb = KnowledgeStore::new(RetrievalParams::default());
        let s = featurize_state(&req(), &PerformanceTracker::default(), agent.role, &kb);
        let mut rng = RngStream::new(5, StreamId::Policy);
        assert_eq!(agent.act(&s, &mut rng, true).unwrap().index, 1);

        let seq = |seed| {
            let mut r = RngStream::new(seed, StreamId::Policy);
            (0..50)
                .map(|_| agent.act(&s, &mut r, false).unwrap().index)
                .collect::<Vec<_>>()
        };
        assert_eq!(seq(9), seq(9));
    }

    #[test]
    fn sampled_indices_stay_in_range() {
        let mut init = RngStream::new(6, StreamId::Init);
        let kb = KnowledgeStore::new(RetrievalParams::default());
        let s = featurize_state(
            &req(),
            &PerformanceTracker::default(),
            AgentRole::LegacyTestAnalysis,
            &kb,
        );
        let mut rng = RngStream::new(7, StreamId::Policy);
        for role in AgentRole::ALL {
            let mut agent = Agent::new(role, 3e-4, &mut init);
            // Sharpen the policy so the tail of the distribution is exercised.
            agent.params.scale_output_layer(300.0);
            for _ in 0..200_000 {
                assert!(agent.act(&s, &mut rng, false).unwrap().index < action_space_size(role));
            }
        }
    }

    fn context_kb() -> KnowledgeStore {
        let mut kb = KnowledgeStore::new(RetrievalParams {
            similarity_threshold: 0.0,
            ..Default::default()
        });
        kb.add_node("REQ-001");
        let tokens = req().tokens();
        for (i, cov) in [vec![1.0; 32], vec![0.0; 32]].into_iter().enumerate() {
            let id = format!("LT-{i}");
            let mut tok = tokens.clone();
            tok.push(format!("x{i}"));
            kb.insert_record(VectorRecord {
                id: id.clone(),
                embedding: embed(&tok, 256).unwrap(),
                payload_ref: id.clone(),
                usefulness: 0.5,
            })
            .unwrap();
            kb.insert_test_case(TestCase {
                id: id.clone(),
                requirement_refs: vec!["REQ-001".into()],
                strategy: GenerationStrategy::Boundary,
                retrieval_mode: RetrievalMode::VectorOnly,
                coverage_vector: cov,
                generating_agent: AgentRole::LegacyTestAnalysis,
            });
        }
        kb
    }

    #[test]
    fn two_record_context_blend() {
        let kb = context_kb();
        let plan = GenerationPlan {
            strategy: GenerationStrategy::Negative,
            ..Default::default()
        };
        let params = GenerationParams::default();
        let b = generate_test_cases(&plan, &req(), &kb, &params, 0).unwrap();
        assert_eq!(b.tests.len(), 3);
        let sig = params
            .layout
            .strategy_signature(GenerationStrategy::Negative);
        for t in &b.tests {
            for (c, s) in t.coverage_vector.iter().zip(&sig) {
                // Context mean is 0.5 in every dimension.
                assert!((c - (0.6 * s + 0.2)).abs() < 1e-12);
            }
        }
        assert_eq!(b.context, vec!["REQ-001", "LT-0", "LT-1"]);
        assert!(b.context_hit());
    }

    #[test]
    fn empty_context_uses_signature() {
        let kb = {
            let mut k = KnowledgeStore::new(RetrievalParams::default());
            k.add_node("REQ-001");
            k
        };
        let params = GenerationParams::default();
        let plan = GenerationPlan::default();
        let b = generate_test_cases(&plan, &req(), &kb, &params, 0).unwrap();
        assert_eq!(
            b.tests[0].coverage_vector,
            params.layout.strategy_signature(plan.strategy)
        );
        assert!(!b.context_hit());
    }

    #[test]
    fn generation_is_deterministic_with_distinct_ids() {
        let kb = context_kb();
        let params = GenerationParams::default();
        let plan = GenerationPlan {
            mode: RetrievalMode::Hybrid,
            focus: ComponentFocus::OwnComponent,
            ..Default::default()
        };
        let a = generate_test_cases(&plan, &req(), &kb, &params, 7).unwrap();
        let b = generate_test_cases(&plan, &req(), &kb, &params, 7).unwrap();
        assert_eq!(a, b);
        let ids: BTreeSet<&str> = a.tests.iter().map(|t| t.id.as_str()).collect();
        assert_eq!(ids.len(), 3);
        for t in &a.tests {
            assert!(t.coverage_vector.iter().all(|x| (0.0..=1.0).contains(x)));
        }
    }

    #[test]
    fn integration_replaces_last_test() {
        let mut kb = context_kb();
        kb.add_node("REQ-002");
        kb.upsert_edge(GraphEdge {
            source: "REQ-001".into(),
            target: "REQ-002".into(),
            edge_type: EdgeType::DependsOn,
            weight: 0.5,
        })
        .unwrap();
        let plan = GenerationPlan {
            integration: IntegrationChoice::DependentNeighbor,
            ..Default::default()
        };
        let b = generate_test_cases(&plan, &req(), &kb, &GenerationParams::default(), 0).unwrap();
        assert_eq!(b.tests.len(), 3);
        assert_eq!(b.tests[2].strategy, GenerationStrategy::Integration);
        assert_eq!(b.tests[2].requirement_refs, vec!["REQ-001", "REQ-002"]);
        assert_eq!(b.tests[2].generating_agent, AgentRole::IntegrationPoint);
        // No Impacts edge: nothing replaced.
        let plan = GenerationPlan {
            integration: IntegrationChoice::ImpactedNeighbor,
            ..Default::default()
        };
        let b = generate_test_cases(&plan, &req(), &kb, &GenerationParams::default(), 0).unwrap();
        assert!(b.tests.iter().all(|t| t.requirement_refs.len() == 1));
    }
}
