use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dqn::KbAction;

pub const THRESHOLD_STEP: f64 = 0.02;
pub const TOP_K_STEP: usize = 1;
pub const EDGE_WEIGHT_STEP: f64 = 0.05;
pub const TOP_K_MIN: usize = 1;
pub const TOP_K_MAX: usize = 64;
pub const DEPTH_MAX: usize = 4;

/// Relationship kinds in the knowledge graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EdgeType {
    Covers,
    Impacts,
    DependsOn,
    DetectedBy,
}

impl EdgeType {
    pub const ALL: [EdgeType; 4] = [
        EdgeType::Covers,
        EdgeType::Impacts,
        EdgeType::DependsOn,
        EdgeType::DetectedBy,
    ];

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Knobs the DQN controller adapts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetrievalParams {
    pub similarity_threshold: f64,
    pub top_k: usize,
    pub traversal_depth: usize,
    pub edge_type_weights: BTreeMap<EdgeType, f64>,
}

impl Default for RetrievalParams {
    fn default() -> Self {
        Self {
            similarity_threshold: 0.3,
            top_k: 8,
            traversal_depth: 2,
            edge_type_weights: EdgeType::ALL.iter().map(|&t| (t, 0.5)).collect(),
        }
    }
}

impl RetrievalParams {
    pub fn edge_type_weight(&self, t: EdgeType) -> f64 {
        self.edge_type_weights.get(&t).copied().unwrap_or(0.0)
    }

    /// Force every knob back inside its bounds; missing edge types get 0.
    pub fn clamp(&mut self) {
        self.similarity_threshold = if self.similarity_threshold.is_nan() {
            0.0
        } else {
            self.similarity_threshold.clamp(0.0, 1.0)
        };
        self.top_k = self.top_k.clamp(TOP_K_MIN, TOP_K_MAX);
        self.traversal_depth = self.traversal_depth.min(DEPTH_MAX);
        for t in EdgeType::ALL {
            let w = self.edge_type_weights.entry(t).or_insert(0.0);
            *w = if w.is_nan() { 0.0 } else { w.clamp(0.0, 1.0) };
        }
    }

    pub fn in_bounds(&self) -> bool {
        (0.0..=1.0).contains(&self.similarity_threshold)
            && (TOP_K_MIN..=TOP_K_MAX).contains(&self.top_k)
            && self.traversal_depth <= DEPTH_MAX
            && EdgeType::ALL.iter().all(|t| {
                self.edge_type_weights
                    .get(t)
                    .is_some_and(|w| (0.0..=1.0).contains(w))
            })
    }

    /// Change exactly one knob by its fixed step, then clamp.
    pub fn apply(&mut self, action: KbAction) {
        match action {
            KbAction::RaiseThreshold => self.similarity_threshold += THRESHOLD_STEP,
            KbAction::LowerThreshold => self.similarity_threshold -= THRESHOLD_STEP,
            KbAction::IncreaseTopK => self.top_k = self.top_k.saturating_add(TOP_K_STEP),
            KbAction::DecreaseTopK => self.top_k = self.top_k.saturating_sub(TOP_K_STEP),
            KbAction::BoostEdgeType(t) => {
                *self.edge_type_weights.entry(t).or_insert(0.0) += EDGE_WEIGHT_STEP
            }
            KbAction::DecayEdgeType(t) => {
                *self.edge_type_weights.entry(t).or_insert(0.0) -= EDGE_WEIGHT_STEP
            }
            KbAction::NoOp => return,
        }
        self.clamp();
    }
}
