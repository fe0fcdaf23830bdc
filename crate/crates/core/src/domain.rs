//! Testing-domain records shared by every stage of the learning loop.
//!
//! Values here carry no behavior beyond construction, validation and
//! serialization. Hidden simulation ground truth on [`Requirement`] is wrapped
//! in [`HiddenDefectIds`], whose contents only the QE simulator can read.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use crate::qe_env::HiddenDefectIds;

/// Default length of coverage vectors and defect signatures.
pub const DEFAULT_COVERAGE_DIM: usize = 32;

/// Upper bound on `workflow_integration_factor`.
pub const MAX_WORKFLOW_FACTOR: f64 = 2.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DomainError {
    #[error("feedback references unknown test case `{0}`")]
    UnknownTestCase(String),
    #[error("field `{field}` out of range: {value}")]
    RangeViolation { field: &'static str, value: f64 },
    #[error("defect report `{report}` references test `{found}`, expected `{expected}`")]
    MismatchedDefectRef {
        report: String,
        found: String,
        expected: String,
    },
}

/// How a test case is shaped. The integer encoding is stable and used inside
/// agent action indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum GenerationStrategy {
    HappyPath,
    Boundary,
    Negative,
    Integration,
    RegressionDerived,
}

impl GenerationStrategy {
    pub const ALL: [GenerationStrategy; 5] = [
        GenerationStrategy::HappyPath,
        GenerationStrategy::Boundary,
        GenerationStrategy::Negative,
        GenerationStrategy::Integration,
        GenerationStrategy::RegressionDerived,
    ];
    pub const COUNT: usize = 5;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            GenerationStrategy::HappyPath => "HappyPath",
            GenerationStrategy::Boundary => "Boundary",
            GenerationStrategy::Negative => "Negative",
            GenerationStrategy::Integration => "Integration",
            GenerationStrategy::RegressionDerived => "RegressionDerived",
        }
    }
}

/// Which half of the hybrid knowledge store a retrieval consults.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RetrievalMode {
    VectorOnly,
    GraphOnly,
    Hybrid,
}

impl RetrievalMode {
    pub const ALL: [RetrievalMode; 3] = [
        RetrievalMode::VectorOnly,
        RetrievalMode::GraphOnly,
        RetrievalMode::Hybrid,
    ];
    pub const COUNT: usize = 3;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }
}

/// Defect severity. Declared low-to-high so the derived order gives
/// `Critical > High > Medium > Low`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Severity {
    Low,
    Medium,
    High,
    Critical,
}

impl Severity {
    /// Catalog order, most severe first.
    pub const ALL: [Severity; 4] = [
        Severity::Critical,
        Severity::High,
        Severity::Medium,
        Severity::Low,
    ];

    /// Position in [`Severity::ALL`].
    pub fn index(self) -> usize {
        match self {
            Severity::Critical => 0,
            Severity::High => 1,
            Severity::Medium => 2,
            Severity::Low => 3,
        }
    }
}

/// The five agent roles of the architecture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AgentRole {
    LegacyTestAnalysis,
    FunctionalChangeMapping,
    IntegrationPoint,
    TestCaseGeneration,
    ComplianceValidation,
}

impl AgentRole {
    pub const ALL: [AgentRole; 5] = [
        AgentRole::LegacyTestAnalysis,
        AgentRole::FunctionalChangeMapping,
        AgentRole::IntegrationPoint,
        AgentRole::TestCaseGeneration,
        AgentRole::ComplianceValidation,
    ];

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for AgentRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Partition of the coverage space: one block per generation strategy
/// followed by one block per functional component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageLayout {
    pub strategy_block: usize,
    pub component_block: usize,
    pub components: Vec<String>,
}

impl Default for CoverageLayout {
    fn default() -> Self {
        Self {
            strategy_block: 4,
            component_block: 3,
            components: ["payments", "identity", "reporting", "notifications"]
                .map(String::from)
                .to_vec(),
        }
    }
}

impl CoverageLayout {
    pub fn dim(&self) -> usize {
        GenerationStrategy::COUNT * self.strategy_block
            + self.components.len() * self.component_block
    }

    pub fn strategy_dims(&self, strategy: GenerationStrategy) -> std::ops::Range<usize> {
        let start = strategy.index() * self.strategy_block;
        start..start + self.strategy_block
    }

    pub fn component_index(&self, component: &str) -> Option<usize> {
        self.components.iter().position(|c| c == component)
    }

    pub fn component_dims(&self, component: &str) -> Option<std::ops::Range<usize>> {
        let i = self.component_index(component)?;
        let start = GenerationStrategy::COUNT * self.strategy_block + i * self.component_block;
        Some(start..start + self.component_block)
    }

    /// All component dimensions.
    pub fn components_range(&self) -> std::ops::Range<usize> {
        GenerationStrategy::COUNT * self.strategy_block..self.dim()
    }

    /// Indicator of the strategy's own block.
    pub fn strategy_signature(&self, strategy: GenerationStrategy) -> Vec<f64> {
        let mut v = vec![0.0; self.dim()];
        for i in self.strategy_dims(strategy) {
            v[i] = 1.0;
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Requirement {
    pub id: String,
    pub text: String,
    pub component_tags: BTreeSet<String>,
    pub hidden_defect_ids: HiddenDefectIds,
}

impl Requirement {
    /// Lower-cased whitespace tokens of the requirement text.
    pub fn tokens(&self) -> Vec<String> {
        self.text
            .split_whitespace()
            .map(|t| t.to_ascii_lowercase())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestCase {
    pub id: String,
    pub requirement_refs: Vec<String>,
    pub strategy: GenerationStrategy,
    pub retrieval_mode: RetrievalMode,
    pub coverage_vector: Vec<f64>,
    pub generating_agent: AgentRole,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefectReport {
    pub id: String,
    pub test_case_ref: String,
    pub severity: Severity,
    pub is_false_positive: bool,
}

impl DefectReport {
    /// Separator between the catalog defect id and the test id in a true
    /// report's id.
    pub const ID_SEPARATOR: char = '#';

    pub fn true_positive(defect_id: &str, test_case_ref: &str, severity: Severity) -> Self {
        Self {
            id: format!("{defect_id}{}{test_case_ref}", Self::ID_SEPARATOR),
            test_case_ref: test_case_ref.to_string(),
            severity,
            is_false_positive: false,
        }
    }

    pub fn false_positive(test_case_ref: &str, severity: Severity) -> Self {
        Self {
            id: format!("fp{}{test_case_ref}", Self::ID_SEPARATOR),
            test_case_ref: test_case_ref.to_string(),
            severity,
            is_false_positive: true,
        }
    }

    /// Catalog defect this report confirms; `None` for false positives.
    pub fn defect_id(&self) -> Option<&str> {
        if self.is_false_positive {
            return None;
        }
        Some(
            self.id
                .split_once(Self::ID_SEPARATOR)
                .map_or(self.id.as_str(), |(d, _)| d),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackRecord {
    pub test_case_ref: String,
    pub defects: Vec<DefectReport>,
    pub execution_time: f64,
    pub baseline_time: f64,
    pub quality_rating: f64,
    pub requirement_coverage_assessment: f64,
    pub functional_coverage_validation: f64,
    pub workflow_integration_factor: f64,
    pub compliance_score: f64,
}

impl FeedbackRecord {
    pub fn true_defects(&self) -> impl Iterator<Item = &DefectReport> {
        self.defects.iter().filter(|d| !d.is_false_positive)
    }

    pub fn true_defect_count(&self) -> usize {
        self.true_defects().count()
    }

    pub fn false_positive_count(&self) -> usize {
        self.defects.iter().filter(|d| d.is_false_positive).count()
    }

    /// Range and sign checks that need no catalog.
    pub fn check_ranges(&self) -> Result<(), DomainError> {
        let unit = |field: &'static str, value: f64| {
            if value.is_finite() && (0.0..=1.0).contains(&value) {
                Ok(())
            } else {
                Err(DomainError::RangeViolation { field, value })
            }
        };
        let positive = |field: &'static str, value: f64| {
            if value.is_finite() && value > 0.0 {
                Ok(())
            } else {
                Err(DomainError::RangeViolation { field, value })
            }
        };
        positive("execution_time", self.execution_time)?;
        positive("baseline_time", self.baseline_time)?;
        unit("quality_rating", self.quality_rating)?;
        unit(
            "requirement_coverage_assessment",
            self.requirement_coverage_assessment,
        )?;
        unit(
            "functional_coverage_validation",
            self.functional_coverage_validation,
        )?;
        let w = self.workflow_integration_factor;
        if !(w.is_finite() && w > 0.0 && w <= MAX_WORKFLOW_FACTOR) {
            return Err(DomainError::RangeViolation {
                field: "workflow_integration_factor",
                value: w,
            });
        }
        unit("compliance_score", self.compliance_score)?;
        for d in &self.defects {
            if d.test_case_ref != self.test_case_ref {
                return Err(DomainError::MismatchedDefectRef {
                    report: d.id.clone(),
                    found: d.test_case_ref.clone(),
                    expected: self.test_case_ref.clone(),
                });
            }
        }
        Ok(())
    }
}

/// Known test cases and requirements of one project, used for referential
/// checks on incoming feedback.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProjectCatalog {
    pub requirements: BTreeSet<String>,
    pub tests: BTreeMap<String, TestCase>,
}

impl ProjectCatalog {
    pub fn insert_test(&mut self, test: TestCase) {
        self.tests.insert(test.id.clone(), test);
    }

    pub fn contains_test(&self, id: &str) -> bool {
        self.tests.contains_key(id)
    }
}

/// Check every referential and range invariant of a feedback record.
pub fn validate_feedback(
    record: FeedbackRecord,
    catalog: &ProjectCatalog,
) -> Result<FeedbackRecord, DomainError> {
    if !catalog.contains_test(&record.test_case_ref) {
        return Err(DomainError::UnknownTestCase(record.test_case_ref));
    }
    record.check_ranges()?;
    Ok(record)
}
