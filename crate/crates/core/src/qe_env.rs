//! Seeded simulation of quality-engineer feedback: synthetic projects with
//! hidden defects, test execution outcomes and JSONL feedback replay.

use std::collections::BTreeSet;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{
    validate_feedback, AgentRole, CoverageLayout, DefectReport, DomainError, FeedbackRecord,
    GenerationStrategy, ProjectCatalog, Requirement, RetrievalMode, Severity, TestCase,
    MAX_WORKFLOW_FACTOR,
};
use crate::knowledge_store::{
    cosine, embed, EdgeType, GraphEdge, KbError, KnowledgeStore, VectorRecord,
};
use crate::rl_core::RngStream;

/// Ground-truth defect ids attached to a requirement.
///
/// Only the simulator can read the contents, so nothing on the learning side
/// can peek at the answers:
///
/// ```compile_fail
/// let ids = riarag_core::domain::HiddenDefectIds::default();
/// let _ = ids.ids();
/// ```
#[derive(Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct HiddenDefectIds(Vec<String>);

impl HiddenDefectIds {
    fn ids(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Debug for HiddenDefectIds {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("HiddenDefectIds(..)")
    }
}

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("bad project configuration: {0}")]
    BadConfig(String),
    #[error("test `{test}` references unknown requirement `{requirement}`")]
    UnknownRequirement { test: String, requirement: String },
    #[error("coverage vector has {got} dims, project uses {expected}")]
    CoverageDimension { expected: usize, got: usize },
    #[error(transparent)]
    Kb(#[from] KbError),
}

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("line {line}: parse error: {message}")]
    ParseError { line: usize, message: String },
    #[error("line {line}: validation error: {source}")]
    ValidationError { line: usize, source: DomainError },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// How thoroughly a test checks compliance; chosen by the compliance agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ComplianceLevel {
    Minimal,
    Standard,
    Strict,
}

impl ComplianceLevel {
    pub const ALL: [ComplianceLevel; 3] = [
        ComplianceLevel::Minimal,
        ComplianceLevel::Standard,
        ComplianceLevel::Strict,
    ];

    pub fn score(self) -> f64 {
        match self {
            ComplianceLevel::Minimal => 0.4,
            ComplianceLevel::Standard => 0.75,
            ComplianceLevel::Strict => 1.0,
        }
    }

    /// Extra execution time, in the same units as `base_time`.
    pub fn extra_time(self) -> f64 {
        match self {
            ComplianceLevel::Minimal => 0.0,
            ComplianceLevel::Standard => 0.5,
            ComplianceLevel::Strict => 1.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectConfig {
    pub n_requirements: usize,
    pub n_defects: usize,
    /// Critical, High, Medium, Low.
    pub severity_proportions: [f64; 4],
    pub legacy_useful_per_requirement: usize,
    pub legacy_distractors_per_requirement: usize,
    pub layout: CoverageLayout,
    /// Rows follow `GenerationStrategy::ALL`, columns `Severity::ALL`.
    pub affinity: [[f64; 4]; 5],
}

impl Default for ProjectConfig {
    fn default() -> Self {
        Self {
            n_requirements: 20,
            n_defects: 40,
            severity_proportions: [0.1, 0.2, 0.4, 0.3],
            legacy_useful_per_requirement: 1,
            legacy_distractors_per_requirement: 2,
            layout: CoverageLayout::default(),
            affinity: [
                [0.3, 0.5, 0.6, 1.0],
                [0.5, 0.8, 1.0, 0.7],
                [0.5, 1.0, 0.7, 0.6],
                [1.0, 0.7, 0.5, 0.4],
                [0.6, 0.6, 0.6, 0.6],
            ],
        }
    }
}

impl ProjectConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |m: &str| Err(EnvError::BadConfig(m.to_string()));
        if self.n_requirements == 0 {
            return bad("n_requirements must be at least 1");
        }
        if self.layout.components.is_empty()
            || self.layout.strategy_block == 0
            || self.layout.component_block == 0
        {
            return bad("coverage layout must have components and non-empty blocks");
        }
        let sum: f64 = self.severity_proportions.iter().sum();
        if self
            .severity_proportions
            .iter()
            .any(|p| *p < 0.0 || !p.is_finite())
            || sum <= 0.0
        {
            return bad("severity_proportions must be non-negative with positive sum");
        }
        if self
            .affinity
            .iter()
            .flatten()
            .any(|a| !(*a > 0.0 && a.is_finite()))
        {
            return bad("affinity entries must be positive");
        }
        Ok(())
    }
}

/// Strategy each severity class responds to best; the defect signature is
/// built around that strategy's block.
pub fn preferred_strategy(severity: Severity) -> GenerationStrategy {
    match severity {
        Severity::Critical => GenerationStrategy::Integration,
        Severity::High => GenerationStrategy::Negative,
        Severity::Medium => GenerationStrategy::Boundary,
        Severity::Low => GenerationStrategy::HappyPath,
    }
}

/// Abstract test steps per strategy; drives execution time.
pub fn strategy_steps(strategy: GenerationStrategy) -> f64 {
    match strategy {
        GenerationStrategy::HappyPath => 4.0,
        GenerationStrategy::Boundary => 5.0,
        GenerationStrategy::Negative => 5.0,
        GenerationStrategy::Integration => 7.0,
        GenerationStrategy::RegressionDerived => 6.0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogDefect {
    pub id: String,
    pub severity: Severity,
    pub signature: Vec<f64>,
    pub requirement_ref: String,
}

/// Typed link between two requirements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequirementLink {
    pub source: String,
    pub target: String,
    pub edge_type: EdgeType,
}

/// Historical test shipped with the project, plus the text it is indexed by.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LegacyTest {
    pub test: TestCase,
    pub tokens: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticProject {
    seed: u64,
    layout: CoverageLayout,
    requirements: Vec<Requirement>,
    catalog: Vec<CatalogDefect>,
    affinity: [[f64; 4]; 5],
    links: Vec<RequirementLink>,
    legacy_tests: Vec<LegacyTest>,
}

const GENERIC_WORDS: [&str; 12] = [
    "validate", "record", "update", "request", "limit", "status", "user", "process", "check",
    "store", "report", "event",
];

fn component_vocabulary(component: &str) -> Vec<String> {
    (0..10).map(|i| format!("{component}{i}")).collect()
}

impl SyntheticProject {
    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn layout(&self) -> &CoverageLayout {
        &self.layout
    }

    pub fn requirements(&self) -> &[Requirement] {
        &self.requirements
    }

    pub fn requirement(&self, id: &str) -> Option<&Requirement> {
        self.requirements.iter().find(|r| r.id == id)
    }

    pub fn links(&self) -> &[RequirementLink] {
        &self.links
    }

    pub fn legacy_tests(&self) -> &[LegacyTest] {
        &self.legacy_tests
    }

    pub fn affinity(&self, strategy: GenerationStrategy, severity: Severity) -> f64 {
        self.affinity[strategy.index()][severity.index()]
    }

    pub fn defect_count(&self) -> usize {
        self.catalog.len()
    }

    pub(crate) fn defect(&self, id: &str) -> Option<&CatalogDefect> {
        self.catalog.iter().find(|d| d.id == id)
    }

    /// The test a team writes once `defect_id` has been found: it reproduces
    /// the defect, so its coverage is the defect's signature. Indexed by the
    /// owning requirement's wording.
    pub fn regression_test(&self, defect_id: &str, test_id: String) -> Option<LegacyTest> {
        let d = self.defect(defect_id)?;
        let req = self.requirement(&d.requirement_ref)?;
        let mut tokens = req.tokens();
        tokens.push("regression".to_string());
        Some(LegacyTest {
            test: TestCase {
                id: test_id,
                requirement_refs: vec![req.id.clone()],
                strategy: GenerationStrategy::RegressionDerived,
                retrieval_mode: RetrievalMode::VectorOnly,
                coverage_vector: d.signature.clone(),
                generating_agent: AgentRole::TestCaseGeneration,
            },
            tokens,
        })
    }

    /// Catalog defects hidden behind the referenced requirements, deduplicated,
    /// in reference order.
    pub(crate) fn reachable_defects<S: AsRef<str>>(
        &self,
        requirement_refs: &[S],
    ) -> Result<Vec<&CatalogDefect>, String> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for r in requirement_refs {
            let req = self
                .requirement(r.as_ref())
                .ok_or_else(|| r.as_ref().to_string())?;
            for id in req.hidden_defect_ids.ids() {
                if seen.insert(id.clone()) {
                    if let Some(d) = self.defect(id) {
                        out.push(d);
                    }
                }
            }
        }
        Ok(out)
    }

    /// Requirement nodes, requirement links, and legacy tests as vector
    /// records with `Covers` edges.
    pub fn seed_knowledge_store(
        &self,
        kb: &mut KnowledgeStore,
        embedding_dim: usize,
    ) -> Result<(), EnvError> {
        for r in &self.requirements {
            kb.add_node(r.id.clone());
        }
        for l in &self.links {
            kb.upsert_edge(GraphEdge {
                source: l.source.clone(),
                target: l.target.clone(),
                edge_type: l.edge_type,
                weight: 0.5,
            })?;
        }
        for lt in &self.legacy_tests {
            let t = &lt.test;
            kb.insert_record(VectorRecord {
                id: t.id.clone(),
                embedding: embed(&lt.tokens, embedding_dim)?,
                payload_ref: t.id.clone(),
                usefulness: 0.5,
            })?;
            kb.insert_test_case(t.clone());
            for r in &t.requirement_refs {
                kb.upsert_edge(GraphEdge {
                    source: r.clone(),
                    target: t.id.clone(),
                    edge_type: EdgeType::Covers,
                    weight: 0.5,
                })?;
            }
        }
        Ok(())
    }

    /// Ground-truth catalog view for fixtures and replay validation.
    pub fn catalog_for(&self, tests: impl IntoIterator<Item = TestCase>) -> ProjectCatalog {
        let mut c = ProjectCatalog {
            requirements: self.requirements.iter().map(|r| r.id.clone()).collect(),
            ..Default::default()
        };
        for t in tests {
            c.insert_test(t);
        }
        c
    }
}

fn draw_vector(
    rng: &mut RngStream,
    dim: usize,
    high: &[std::ops::Range<usize>],
    high_range: (f64, f64),
    low_range: (f64, f64),
) -> Vec<f64> {
    (0..dim)
        .map(|i| {
            let (lo, hi) = if high.iter().any(|r| r.contains(&i)) {
                high_range
            } else {
                low_range
            };
            rng.gen_range(lo..hi)
        })
        .collect()
}

fn defect_signature(
    rng: &mut RngStream,
    layout: &CoverageLayout,
    severity: Severity,
    component: &str,
) -> Vec<f64> {
    let dim = layout.dim();
    let strat = layout.strategy_dims(preferred_strategy(severity));
    let comp = layout.component_dims(component).unwrap_or(0..0);
    (0..dim)
        .map(|i| {
            if strat.contains(&i) {
                rng.gen_range(0.6..1.0)
            } else if comp.contains(&i) {
                rng.gen_range(0.5..1.0)
            } else {
                rng.gen_range(0.0..0.03)
            }
        })
        .collect()
}

fn content_id(prefix: &str, parts: &[&str]) -> String {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.as_bytes());
        h.update([0u8]);
    }
    let digest = h.finalize();
    let hex: String = digest.iter().take(8).map(|b| format!("{b:02x}")).collect();
    format!("{prefix}-{hex}")
}

pub fn generate_project(config: &ProjectConfig, seed: u64) -> Result<SyntheticProject, EnvError> {
    config.validate()?;
    let layout = config.layout.clone();
    let dim = layout.dim();
    let mut rng = RngStream::new(seed, crate::rl_core::StreamId::Project);
    let n_comp = layout.components.len();

    let total: f64 = config.severity_proportions.iter().sum();
    let draw_severity = |rng: &mut dyn rand::RngCore| {
        let u = rng.gen::<f64>() * total;
        let mut acc = 0.0;
        for (s, p) in Severity::ALL.iter().zip(config.severity_proportions) {
            acc += p;
            if u < acc {
                return *s;
            }
        }
        Severity::Low
    };

    let mut requirements = Vec::with_capacity(config.n_requirements);
    for i in 0..config.n_requirements {
        let component = layout.components[i % n_comp].clone();
        let vocab = component_vocabulary(&component);
        let mut words: Vec<String> = vocab.choose_multiple(&mut rng, 4).cloned().collect();
        words.extend(
            GENERIC_WORDS
                .choose_multiple(&mut rng, 3)
                .map(|w| w.to_string()),
        );
        words.push(format!("feature{i}"));

        requirements.push(Requirement {
            id: format!("REQ-{i:03}"),
            text: words.join(" "),
            component_tags: BTreeSet::from([component]),
            hidden_defect_ids: HiddenDefectIds::default(),
        });
    }

    let mut order: Vec<usize> = (0..config.n_requirements).collect();
    order.shuffle(&mut rng);
    let mut catalog = Vec::with_capacity(config.n_defects);
    for k in 0..config.n_defects {
        let ri = order[k % order.len()];
        let severity = draw_severity(&mut rng);
        let req = &mut requirements[ri];
        let component = req
            .component_tags
            .iter()
            .next()
            .cloned()
            .unwrap_or_default();
        let id = format!("DEF-{k:03}");
        req.hidden_defect_ids.0.push(id.clone());
        catalog.push(CatalogDefect {
            id,
            severity,
            signature: defect_signature(&mut rng, &layout, severity, &component),
            requirement_ref: req.id.clone(),
        });
    }

    // Each requirement depends on the next one in its component and impacts
    // a requirement of the next component.
    let mut links = Vec::new();
    let n = requirements.len();
    for i in 0..n {
        let same = (i + n_comp) % n;
        if same != i {
            links.push(RequirementLink {
                source: requirements[i].id.clone(),
                target: requirements[same].id.clone(),
                edge_type: EdgeType::DependsOn,
            });
        }
        let other = (i + 1) % n;
        if other != i && other != same {
            links.push(RequirementLink {
                source: requirements[i].id.clone(),
                target: requirements[other].id.clone(),
                edge_type: EdgeType::Impacts,
            });
        }
    }

    let mut legacy_tests = Vec::new();
    for req in &requirements {
        let component = req
            .component_tags
            .iter()
            .next()
            .cloned()
            .unwrap_or_default();
        let own: Vec<&CatalogDefect> = req
            .hidden_defect_ids
            .ids()
            .iter()
            .filter_map(|id| catalog.iter().find(|d| &d.id == id))
            .collect();
        let req_tokens = req.tokens();
        // Useful tests quote the requirement almost verbatim; distractors
        // quote a fragment of it and borrow words from another component.
        let make = |rng: &mut RngStream,
                    coverage: Vec<f64>,
                    strategy: GenerationStrategy,
                    tag: &str,
                    j: usize,
                    keep: usize,
                    extra: Vec<String>| {
            let keep = keep.clamp(1, req_tokens.len().max(1));
            let start = rng.gen_range(0..=req_tokens.len().saturating_sub(keep));
            let mut tokens: Vec<String> =
                req_tokens.iter().skip(start).take(keep).cloned().collect();
            tokens.extend(extra);
            tokens.push("legacy".into());
            tokens.push(strategy.name().to_string());
            let id = content_id("LT", &[&req.id, tag, &j.to_string()]);
            LegacyTest {
                test: TestCase {
                    id,
                    requirement_refs: vec![req.id.clone()],
                    strategy,
                    retrieval_mode: RetrievalMode::VectorOnly,
                    coverage_vector: coverage,
                    generating_agent: AgentRole::LegacyTestAnalysis,
                },
                tokens,
            }
        };
        for j in 0..config.legacy_useful_per_requirement {
            let (coverage, strategy) = match own.get(j % own.len().max(1)) {
                Some(d) if !own.is_empty() => {
                    let noisy = d
                        .signature
                        .iter()
                        .map(|v| (v + rng.gen_range(-0.1..0.1)).clamp(0.0, 1.0))
                        .collect();
                    (noisy, preferred_strategy(d.severity))
                }
                _ => (
                    layout.strategy_signature(GenerationStrategy::HappyPath),
                    GenerationStrategy::HappyPath,
                ),
            };
            let keep = req_tokens.len().saturating_sub(1);
            legacy_tests.push(make(
                &mut rng,
                coverage,
                strategy,
                "useful",
                j,
                keep,
                Vec::new(),
            ));
        }
        for j in 0..config.legacy_distractors_per_requirement {
            // Aligned with an unrelated component and a strategy no defect
            // of this requirement prefers.
            let other = &layout.components
                [(layout.component_index(&component).unwrap_or(0) + 1 + j) % n_comp];
            let strategy = GenerationStrategy::RegressionDerived;
            let mut high = vec![layout.strategy_dims(strategy)];
            if let Some(r) = layout.component_dims(other) {
                if n_comp > 1 {
                    high.push(r);
                }
            }
            let coverage = draw_vector(&mut rng, dim, &high, (0.6, 1.0), (0.0, 0.1));
            let borrowed: Vec<String> = component_vocabulary(other)
                .choose_multiple(&mut rng, 3)
                .cloned()
                .collect();
            let keep = req_tokens.len() / 2 + 1;
            legacy_tests.push(make(
                &mut rng,
                coverage,
                strategy,
                "distractor",
                j,
                keep,
                borrowed,
            ));
        }
    }

    Ok(SyntheticProject {
        seed,
        layout,
        requirements,
        catalog,
        affinity: config.affinity,
        links,
        legacy_tests,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExecutionModel {
    pub detection_sharpness: f64,
    pub detection_threshold: f64,
    pub false_positive_rate: f64,
    pub base_time: f64,
    pub per_step_time: f64,
    pub noise_scale: f64,
    /// Manual-process time each execution is compared against.
    pub baseline_time: f64,
}

impl Default for ExecutionModel {
    fn default() -> Self {
        Self {
            detection_sharpness: 6.0,
            detection_threshold: 0.5,
            false_positive_rate: 0.08,
            base_time: 2.0,
            per_step_time: 1.0,
            noise_scale: 0.5,
            baseline_time: 8.0,
        }
    }
}

impl ExecutionModel {
    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |m: String| Err(EnvError::BadConfig(m));
        if !(self.detection_sharpness > 0.0) {
            return bad("detection_sharpness must be positive".into());
        }
        if !(0.0..1.0).contains(&self.false_positive_rate) {
            return bad(format!(
                "false_positive_rate must be in [0, 1), got {}",
                self.false_positive_rate
            ));
        }
        if !(self.base_time > 0.0 && self.per_step_time > 0.0 && self.baseline_time > 0.0) {
            return bad("times must be positive".into());
        }
        if !(self.noise_scale >= 0.0) {
            return bad("noise_scale must be non-negative".into());
        }
        Ok(())
    }

    /// `sigmoid(β (overlap - τ)) * affinity`, clamped to `[0, 1]`. A test
    /// with no overlap at all exercises nothing and detects nothing.
    pub fn detection_probability(&self, overlap: f64, affinity: f64) -> f64 {
        if overlap <= 0.0 {
            return 0.0;
        }
        let s =
            1.0 / (1.0 + (-self.detection_sharpness * (overlap - self.detection_threshold)).exp());
        (s * affinity).clamp(0.0, 1.0)
    }
}

/// Signature overlap used for detection: cosine similarity, so that it lies
/// in `[0, 1]` for non-negative vectors regardless of dimension.
pub fn signature_overlap(coverage: &[f64], signature: &[f64]) -> f64 {
    cosine(coverage, signature)
}

/// Run one test against the hidden catalog.
///
/// Draw order: one uniform per reachable defect (reference order), one for
/// the false-positive branch, one for its severity, one for timing noise.
pub fn execute_test(
    test: &TestCase,
    project: &SyntheticProject,
    model: &ExecutionModel,
    compliance: ComplianceLevel,
    rng: &mut RngStream,
) -> Result<FeedbackRecord, EnvError> {
    let dim = project.layout.dim();
    if test.coverage_vector.len() != dim {
        return Err(EnvError::CoverageDimension {
            expected: dim,
            got: test.coverage_vector.len(),
        });
    }
    let reachable = project
        .reachable_defects(&test.requirement_refs)
        .map_err(|requirement| EnvError::UnknownRequirement {
            test: test.id.clone(),
            requirement,
        })?;
    let mut defects = Vec::new();
    for d in &reachable {
        let overlap = signature_overlap(&test.coverage_vector, &d.signature);
        let p = model.detection_probability(overlap, project.affinity(test.strategy, d.severity));
        if rng.uniform() < p {
            defects.push(DefectReport::true_positive(&d.id, &test.id, d.severity));
        }
    }
    let fp_draw = rng.uniform();
    let fp_severity = Severity::ALL[((rng.uniform() * 4.0) as usize).min(3)];
    if fp_draw < model.false_positive_rate {
        defects.push(DefectReport::false_positive(&test.id, fp_severity));
    }
    let noise = (rng.uniform() * 2.0 - 1.0) * model.noise_scale;
    let execution_time = (model.base_time
        + model.per_step_time * strategy_steps(test.strategy)
        + compliance.extra_time()
        + noise)
        .max(0.1 * model.base_time);

    let true_count = defects.iter().filter(|d| !d.is_false_positive).count();
    let quality_rating = if defects.is_empty() {
        1.0
    } else {
        true_count as f64 / defects.len() as f64
    };

    let mut req_cov = 0.0;
    let mut func_cov = 0.0;
    for r in &test.requirement_refs {
        let own: Vec<&&CatalogDefect> = reachable
            .iter()
            .filter(|d| &d.requirement_ref == r)
            .collect();
        if own.is_empty() {
            continue;
        }
        let overlaps: Vec<f64> = own
            .iter()
            .map(|d| signature_overlap(&test.coverage_vector, &d.signature))
            .collect();
        req_cov += overlaps.iter().copied().fold(0.0, f64::max);
        func_cov += overlaps
            .iter()
            .filter(|o| **o >= model.detection_threshold)
            .count() as f64
            / overlaps.len() as f64;
    }
    let n_refs = test.requirement_refs.len().max(1) as f64;

    Ok(FeedbackRecord {
        test_case_ref: test.id.clone(),
        defects,
        execution_time,
        baseline_time: model.baseline_time,
        quality_rating,
        requirement_coverage_assessment: (req_cov / n_refs).clamp(0.0, 1.0),
        functional_coverage_validation: (func_cov / n_refs).clamp(0.0, 1.0),
        workflow_integration_factor: (1.0 + 0.25 * (n_refs - 1.0)).min(MAX_WORKFLOW_FACTOR),
        compliance_score: compliance.score(),
    })
}

/// Write records as JSON lines.
pub fn write_feedback_jsonl<'a>(
    path: &Path,
    records: impl IntoIterator<Item = &'a FeedbackRecord>,
) -> std::io::Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut f, r)?;
        f.write_all(b"\n")?;
    }
    f.flush()
}

/// Line-by-line reader of a JSONL feedback file. Blank lines are skipped;
/// each item is either a validated record or an error naming its line.
pub struct FeedbackReplay<R> {
    lines: std::io::Lines<R>,
    line: usize,
    catalog: Option<ProjectCatalog>,
}

impl<R: BufRead> Iterator for FeedbackReplay<R> {
    type Item = Result<FeedbackRecord, ReplayError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let text = match self.lines.next()? {
                Ok(t) => t,
                Err(e) => return Some(Err(e.into())),
            };
            self.line += 1;
            if text.trim().is_empty() {
                continue;
            }
            let line = self.line;
            let record: FeedbackRecord = match serde_json::from_str(&text) {
                Ok(r) => r,
                Err(e) => {
                    return Some(Err(ReplayError::ParseError {
                        line,
                        message: e.to_string(),
                    }))
                }
            };
            let checked = match &self.catalog {
                Some(c) => validate_feedback(record, c),
                None => record.check_ranges().map(|_| record),
            };
            return Some(checked.map_err(|source| ReplayError::ValidationError { line, source }));
        }
    }
}

pub fn replay_feedback(
    path: &Path,
) -> Result<FeedbackReplay<BufReader<std::fs::File>>, ReplayError> {
    Ok(FeedbackReplay {
        lines: BufReader::new(std::fs::File::open(path)?).lines(),
        line: 0,
        catalog: None,
    })
}

/// Like [`replay_feedback`], additionally checking test references against
/// `catalog`.
pub fn replay_feedback_with_catalog(
    path: &Path,
    catalog: ProjectCatalog,
) -> Result<FeedbackReplay<BufReader<std::fs::File>>, ReplayError> {
    let mut r = replay_feedback(path)?;
    r.catalog = Some(catalog);
    Ok(r)
}
