//! Multi-dimensional QE-centric reward.
//!
//! The total reward is a weighted sum of five components computed from a batch
//! of feedback records: defect effectiveness, coverage, efficiency, compliance
//! and adaptation (the trend of recent totals).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{FeedbackRecord, Severity};

/// Per-record cap on the efficiency ratio.
pub const EFFICIENCY_CLAMP: f64 = 4.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RewardError {
    #[error("reward requested over an empty batch")]
    EmptyBatch,
    #[error("non-positive time in feedback for `{test_case_ref}`")]
    NonPositiveTime { test_case_ref: String },
    #[error("invalid reward weights: {0}")]
    InvalidWeights(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardWeights {
    pub alpha_effectiveness: f64,
    pub alpha_coverage: f64,
    pub alpha_efficiency: f64,
    pub alpha_compliance: f64,
    pub alpha_adaptation: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            alpha_effectiveness: 0.35,
            alpha_coverage: 0.20,
            alpha_efficiency: 0.15,
            alpha_compliance: 0.15,
            alpha_adaptation: 0.15,
        }
    }
}

impl RewardWeights {
    pub fn uniform() -> Self {
        Self {
            alpha_effectiveness: 0.2,
            alpha_coverage: 0.2,
            alpha_efficiency: 0.2,
            alpha_compliance: 0.2,
            alpha_adaptation: 0.2,
        }
    }

    pub fn from_array(a: [f64; 5]) -> Self {
        Self {
            alpha_effectiveness: a[0],
            alpha_coverage: a[1],
            alpha_efficiency: a[2],
            alpha_compliance: a[3],
            alpha_adaptation: a[4],
        }
    }

    pub fn as_array(&self) -> [f64; 5] {
        [
            self.alpha_effectiveness,
            self.alpha_coverage,
            self.alpha_efficiency,
            self.alpha_compliance,
            self.alpha_adaptation,
        ]
    }

    pub fn validate(&self) -> Result<(), RewardError> {
        let a = self.as_array();
        if a.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(RewardError::InvalidWeights(
                "alphas must be finite and non-negative".into(),
            ));
        }
        let sum: f64 = a.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(RewardError::InvalidWeights(format!(
                "alphas must sum to 1, got {sum}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeverityWeights {
    pub critical: f64,
    pub high: f64,
    pub medium: f64,
    pub low: f64,
    pub false_positive_penalty: f64,
}

impl Default for SeverityWeights {
    fn default() -> Self {
        Self {
            critical: 4.0,
            high: 3.0,
            medium: 2.0,
            low: 1.0,
            false_positive_penalty: 0.5,
        }
    }
}

impl SeverityWeights {
    pub fn weight(&self, severity: Severity) -> f64 {
        match severity {
            Severity::Critical => self.critical,
            Severity::High => self.high,
            Severity::Medium => self.medium,
            Severity::Low => self.low,
        }
    }

    pub fn validate(&self) -> Result<(), RewardError> {
        let ordered = self.critical > self.high
            && self.high > self.medium
            && self.medium > self.low
            && self.low > 0.0;
        if !ordered {
            return Err(RewardError::InvalidWeights(
                "severity weights must satisfy critical > high > medium > low > 0".into(),
            ));
        }
        if !(self.false_positive_penalty >= 0.0) {
            return Err(RewardError::InvalidWeights(
                "false_positive_penalty must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub effectiveness: f64,
    pub coverage: f64,
    pub efficiency: f64,
    pub compliance: f64,
    pub adaptation: f64,
    pub total: f64,
}

impl RewardBreakdown {
    pub fn components(&self) -> [f64; 5] {
        [
            self.effectiveness,
            self.coverage,
            self.efficiency,
            self.compliance,
            self.adaptation,
        ]
    }

    /// Component-wise mean, total included. Empty input yields zeros.
    pub fn mean<'a>(items: impl IntoIterator<Item = &'a RewardBreakdown>) -> RewardBreakdown {
        let mut acc = RewardBreakdown::default();
        let mut n = 0usize;
        for r in items {
            acc.effectiveness += r.effectiveness;
            acc.coverage += r.coverage;
            acc.efficiency += r.efficiency;
            acc.compliance += r.compliance;
            acc.adaptation += r.adaptation;
            acc.total += r.total;
            n += 1;
        }
        if n == 0 {
            return acc;
        }
        let k = n as f64;
        RewardBreakdown {
            effectiveness: acc.effectiveness / k,
            coverage: acc.coverage / k,
            efficiency: acc.efficiency / k,
            compliance: acc.compliance / k,
            adaptation: acc.adaptation / k,
            total: acc.total / k,
        }
    }
}

fn non_empty(batch: &[FeedbackRecord]) -> Result<f64, RewardError> {
    if batch.is_empty() {
        Err(RewardError::EmptyBatch)
    } else {
        Ok(batch.len() as f64)
    }
}

/// `(true defects / tests) * mean severity weight of true defects
///  - penalty * (false positives / tests)`.
pub fn effectiveness_reward(
    batch: &[FeedbackRecord],
    weights: &SeverityWeights,
) -> Result<f64, RewardError> {
    let total = non_empty(batch)?;
    let mut true_count = 0usize;
    let mut severity_sum = 0.0;
    let mut fp_count = 0usize;
    for record in batch {
        for d in &record.defects {
            if d.is_false_positive {
                fp_count += 1;
            } else {
                true_count += 1;
                severity_sum += weights.weight(d.severity);
            }
        }
    }
    let discovery = if true_count == 0 {
        0.0
    } else {
        (true_count as f64 / total) * (severity_sum / true_count as f64)
    };
    Ok(discovery - weights.false_positive_penalty * (fp_count as f64 / total))
}

/// Mean of requirement plus functional coverage assessments; in `[0, 2]`.
pub fn coverage_reward(batch: &[FeedbackRecord]) -> Result<f64, RewardError> {
    let n = non_empty(batch)?;
    Ok(batch
        .iter()
        .map(|r| r.requirement_coverage_assessment + r.functional_coverage_validation)
        .sum::<f64>()
        / n)
}

/// Mean of `baseline / actual * workflow_factor`, each record clamped to
/// `[0, 4]`.
pub fn efficiency_reward(batch: &[FeedbackRecord]) -> Result<f64, RewardError> {
    let n = non_empty(batch)?;
    let mut sum = 0.0;
    for r in batch {
        if !(r.execution_time > 0.0 && r.baseline_time > 0.0) {
            return Err(RewardError::NonPositiveTime {
                test_case_ref: r.test_case_ref.clone(),
            });
        }
        let ratio = r.baseline_time / r.execution_time * r.workflow_integration_factor;
        sum += ratio.clamp(0.0, EFFICIENCY_CLAMP);
    }
    Ok(sum / n)
}

pub fn compliance_reward(batch: &[FeedbackRecord]) -> Result<f64, RewardError> {
    let n = non_empty(batch)?;
    Ok(batch.iter().map(|r| r.compliance_score).sum::<f64>() / n)
}

/// `tanh` of the least-squares slope (per step) of recent reward totals.
/// Fewer than two entries yield 0.
pub fn adaptation_reward(history: &[f64]) -> f64 {
    let n = history.len();
    if n < 2 {
        return 0.0;
    }
    let nf = n as f64;
    let mean_x = (nf - 1.0) / 2.0;
    let mean_y = history.iter().sum::<f64>() / nf;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for (i, y) in history.iter().enumerate() {
        let dx = i as f64 - mean_x;
        sxy += dx * (y - mean_y);
        sxx += dx * dx;
    }
    (sxy / sxx).tanh()
}

/// Weighted sum of `(effectiveness, coverage, efficiency, compliance,
/// adaptation)`.
pub fn combine(components: [f64; 5], weights: &RewardWeights) -> RewardBreakdown {
    let total = components
        .iter()
        .zip(weights.as_array())
        .map(|(c, a)| c * a)
        .sum();
    RewardBreakdown {
        effectiveness: components[0],
        coverage: components[1],
        efficiency: components[2],
        compliance: components[3],
        adaptation: components[4],
        total,
    }
}

/// Evaluate all five components on a batch. With `scalar` set the total is the
/// effectiveness component alone; the other components are still recorded.
pub fn compute_reward(
    batch: &[FeedbackRecord],
    recent_totals: &[f64],
    weights: &RewardWeights,
    severity: &SeverityWeights,
    scalar: bool,
) -> Result<RewardBreakdown, RewardError> {
    let components = [
        effectiveness_reward(batch, severity)?,
        coverage_reward(batch)?,
        efficiency_reward(batch)?,
        compliance_reward(batch)?,
        adaptation_reward(recent_totals),
    ];
    let mut breakdown = combine(components, weights);
    if scalar {
        breakdown.total = breakdown.effectiveness;
    }
    Ok(breakdown)
}
