//! Hybrid vector-graph knowledge store.
//!
//! Vector records are scanned exhaustively by cosine similarity; the typed,
//! weighted relationship graph is traversed with a hop limit, scoring each
//! path by the product of `edge weight x edge-type weight`. Every ranking
//! breaks ties by ascending id.

mod embedding;
mod params;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{FeedbackRecord, RetrievalMode, TestCase};
use crate::dqn::KbAction;

pub use embedding::{cosine, embed, DEFAULT_EMBEDDING_DIM, MIN_EMBEDDING_DIM};
pub use params::{
    EdgeType, RetrievalParams, DEPTH_MAX, EDGE_WEIGHT_STEP, THRESHOLD_STEP, TOP_K_MAX, TOP_K_MIN,
    TOP_K_STEP,
};

pub const SNAPSHOT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum KbError {
    #[error("embedding input has no tokens")]
    EmptyInput,
    #[error("embedding dimension {0} is below the minimum of {MIN_EMBEDDING_DIM}")]
    DimensionTooSmall(usize),
    #[error("unknown graph node `{0}`")]
    UnknownNode(String),
    #[error("self-loop on node `{0}`")]
    SelfLoop(String),
    #[error("invalid record `{id}`: {reason}")]
    InvalidRecord { id: String, reason: String },
    #[error("snapshot schema version {found}, expected {expected}")]
    SchemaVersionMismatch { expected: u32, found: u32 },
    #[error("snapshot I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("snapshot parse: {0}")]
    Parse(#[from] serde_json::Error),
}

impl PartialEq for KbError {
    fn eq(&self, other: &Self) -> bool {
        self.to_string() == other.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorRecord {
    pub id: String,
    pub embedding: Vec<f64>,
    pub payload_ref: String,
    pub usefulness: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphEdge {
    pub source: String,
    pub target: String,
    pub edge_type: EdgeType,
    pub weight: f64,
}

/// One ranked retrieval result, keyed by payload/node id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextItem {
    pub id: String,
    pub score: f64,
}

type EdgeKey = (String, String, EdgeType);

fn rank_desc<T>(items: &mut [T], key: impl Fn(&T) -> (f64, &str)) {
    items.sort_by(|a, b| {
        let (sa, ia) = key(a);
        let (sb, ib) = key(b);
        sb.total_cmp(&sa).then_with(|| ia.cmp(ib))
    });
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "KbSnapshot", try_from = "KbSnapshot")]
pub struct KnowledgeStore {
    records: BTreeMap<String, VectorRecord>,
    nodes: BTreeSet<String>,
    edges: BTreeMap<EdgeKey, f64>,
    test_cases: BTreeMap<String, TestCase>,
    pub params: RetrievalParams,
}

impl Default for KnowledgeStore {
    fn default() -> Self {
        Self::new(RetrievalParams::default())
    }
}

impl KnowledgeStore {
    pub fn new(params: RetrievalParams) -> Self {
        Self {
            records: BTreeMap::new(),
            nodes: BTreeSet::new(),
            edges: BTreeMap::new(),
            test_cases: BTreeMap::new(),
            params,
        }
    }

    pub fn record_count(&self) -> usize {
        self.records.len()
    }

    pub fn records(&self) -> impl Iterator<Item = &VectorRecord> {
        self.records.values()
    }

    pub fn record(&self, id: &str) -> Option<&VectorRecord> {
        self.records.get(id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &str> {
        self.nodes.iter().map(String::as_str)
    }

    pub fn contains_node(&self, id: &str) -> bool {
        self.nodes.contains(id)
    }

    pub fn edges(&self) -> impl Iterator<Item = GraphEdge> + '_ {
        self.edges.iter().map(|((s, t, ty), w)| GraphEdge {
            source: s.clone(),
            target: t.clone(),
            edge_type: *ty,
            weight: *w,
        })
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edge_weight(&self, source: &str, target: &str, edge_type: EdgeType) -> Option<f64> {
        self.edges
            .get(&(source.to_string(), target.to_string(), edge_type))
            .copied()
    }

    pub fn mean_edge_weight(&self) -> f64 {
        if self.edges.is_empty() {
            0.0
        } else {
            self.edges.values().sum::<f64>() / self.edges.len() as f64
        }
    }

    /// Test-case payloads keyed by id (source of context coverage vectors).
    pub fn test_case(&self, id: &str) -> Option<&TestCase> {
        self.test_cases.get(id)
    }

    pub fn test_case_count(&self) -> usize {
        self.test_cases.len()
    }

    pub fn add_node(&mut self, id: impl Into<String>) {
        self.nodes.insert(id.into());
    }

    /// Insert or replace a vector record after checking its invariants.
    pub fn insert_record(&mut self, record: VectorRecord) -> Result<(), KbError> {
        let norm = record.embedding.iter().map(|x| x * x).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-6 {
            return Err(KbError::InvalidRecord {
                id: record.id,
                reason: format!("embedding norm {norm}"),
            });
        }
        if !(0.0..=1.0).contains(&record.usefulness) {
            return Err(KbError::InvalidRecord {
                id: record.id,
                reason: format!("usefulness {}", record.usefulness),
            });
        }
        self.nodes.insert(record.payload_ref.clone());
        self.records.insert(record.id.clone(), record);
        Ok(())
    }

    pub fn insert_test_case(&mut self, test: TestCase) {
        self.nodes.insert(test.id.clone());
        self.test_cases.insert(test.id.clone(), test);
    }

    /// Insert an edge, or overwrite the weight of the existing
    /// `(source, target, type)` edge. Both endpoints become nodes.
    pub fn upsert_edge(&mut self, edge: GraphEdge) -> Result<(), KbError> {
        if edge.source == edge.target {
            return Err(KbError::SelfLoop(edge.source));
        }
        self.nodes.insert(edge.source.clone());
        self.nodes.insert(edge.target.clone());
        self.edges.insert(
            (edge.source, edge.target, edge.edge_type),
            edge.weight.clamp(0.0, 1.0),
        );
        Ok(())
    }

    /// Remove a node together with its incident edges, its records and its
    /// test-case payload.
    pub fn remove_node(&mut self, id: &str) {
        self.nodes.remove(id);
        self.test_cases.remove(id);
        self.records
            .retain(|_, r| r.payload_ref != id && r.id != id);
        self.edges.retain(|(s, t, _), _| s != id && t != id);
    }

    fn out_edges<'a>(&'a self, source: &'a str) -> impl Iterator<Item = (&'a EdgeKey, f64)> + 'a {
        self.edges
            .range((source.to_string(), String::new(), EdgeType::Covers)..)
            .take_while(move |((s, _, _), _)| s == source)
            .map(|(k, w)| (k, *w))
    }

    /// Records with similarity at or above the threshold, best first,
    /// truncated to `top_k`.
    pub fn vector_query(
        &self,
        query: &[f64],
        params: &RetrievalParams,
    ) -> Vec<(&VectorRecord, f64)> {
        let mut hits: Vec<(&VectorRecord, f64)> = self
            .records
            .values()
            .map(|r| (r, cosine(query, &r.embedding)))
            .filter(|(_, s)| *s >= params.similarity_threshold)
            .collect();
        rank_desc(&mut hits, |(r, s)| (*s, r.id.as_str()));
        hits.truncate(params.top_k);
        hits
    }

    /// Hop-limited traversal from the seeds keeping, per node, the best path
    /// product of `weight x edge_type_weight`. Seeds score 1.0; nodes whose
    /// best path scores 0 are not returned.
    pub fn graph_traverse<S: AsRef<str>>(
        &self,
        seeds: &[S],
        params: &RetrievalParams,
    ) -> Result<Vec<(String, f64)>, KbError> {
        let mut best: BTreeMap<&str, f64> = BTreeMap::new();
        for s in seeds {
            let s = s.as_ref();
            let node = self
                .nodes
                .get(s)
                .ok_or_else(|| KbError::UnknownNode(s.to_string()))?;
            best.insert(node.as_str(), 1.0);
        }
        let mut frontier = best.clone();
        for _ in 0..params.traversal_depth {
            let mut next: BTreeMap<&str, f64> = BTreeMap::new();
            for (&node, &score) in &frontier {
                for ((_, target, ty), w) in self.out_edges(node) {
                    let s = score * w * params.edge_type_weight(*ty);
                    if s <= 0.0 {
                        continue;
                    }
                    let slot = next.entry(target.as_str()).or_insert(0.0);
                    if s > *slot {
                        *slot = s;
                    }
                }
            }
            // Only nodes that improved need to be expanded again.
            frontier.clear();
            for (node, s) in next {
                let cur = best.entry(node).or_insert(0.0);
                if s > *cur {
                    *cur = s;
                    frontier.insert(node, s);
                }
            }
            if frontier.is_empty() {
                break;
            }
        }
        let mut out: Vec<(String, f64)> =
            best.into_iter().map(|(n, s)| (n.to_string(), s)).collect();
        rank_desc(&mut out, |(n, s)| (*s, n.as_str()));
        Ok(out)
    }

    /// Retrieve context by mode. Hybrid unions both sources with score
    /// `0.5 * similarity + 0.5 * path_score` (a missing side counts 0),
    /// re-ranks and truncates to `top_k`. Vector hits are keyed by payload.
    pub fn hybrid_retrieve<S: AsRef<str>>(
        &self,
        query: &[f64],
        seeds: &[S],
        mode: RetrievalMode,
        params: &RetrievalParams,
    ) -> Result<Vec<ContextItem>, KbError> {
        match mode {
            RetrievalMode::VectorOnly => Ok(self
                .vector_query(query, params)
                .into_iter()
                .map(|(r, s)| ContextItem {
                    id: r.payload_ref.clone(),
                    score: s,
                })
                .collect()),
            RetrievalMode::GraphOnly => Ok(self
                .graph_traverse(seeds, params)?
                .into_iter()
                .map(|(id, score)| ContextItem { id, score })
                .collect()),
            RetrievalMode::Hybrid => {
                let mut combined: BTreeMap<String, f64> = BTreeMap::new();
                for (r, sim) in self.vector_query(query, params) {
                    // Several records may share a payload; keep the best.
                    let slot = combined.entry(r.payload_ref.clone()).or_insert(f64::MIN);
                    *slot = slot.max(0.5 * sim);
                }
                let graph: BTreeMap<String, f64> =
                    self.graph_traverse(seeds, params)?.into_iter().collect();
                for (id, path) in &graph {
                    let slot = combined.entry(id.clone()).or_insert(0.0);
                    *slot += 0.5 * path;
                }
                let mut items: Vec<ContextItem> = combined
                    .into_iter()
                    .map(|(id, score)| ContextItem { id, score })
                    .collect();
                rank_desc(&mut items, |c| (c.score, c.id.as_str()));
                items.truncate(params.top_k);
                Ok(items)
            }
        }
    }

    pub fn apply_kb_action(&mut self, action: KbAction) {
        self.params.apply(action);
    }

    /// Move the weight of every edge joining two contributing nodes, and the
    /// usefulness of their vector records, toward 1 when the feedback carries
    /// a true defect or toward 0 when it carries only false positives.
    /// Feedback without any defect report leaves everything unchanged.
    /// Returns the number of edges touched.
    pub fn reinforce_edges<S: AsRef<str>>(
        &mut self,
        feedback: &FeedbackRecord,
        contributing_context: &[S],
        learning_rate: f64,
    ) -> usize {
        let target = if feedback.true_defect_count() > 0 {
            1.0
        } else if feedback.false_positive_count() > 0 {
            0.0
        } else {
            return 0;
        };
        let eta = learning_rate.clamp(0.0, 1.0);
        let ctx: BTreeSet<&str> = contributing_context.iter().map(|s| s.as_ref()).collect();
        let mut touched = 0;
        for ((s, t, _), w) in self.edges.iter_mut() {
            if ctx.contains(s.as_str()) && ctx.contains(t.as_str()) {
                *w = (*w + eta * (target - *w)).clamp(0.0, 1.0);
                touched += 1;
            }
        }
        for r in self.records.values_mut() {
            if ctx.contains(r.payload_ref.as_str()) {
                r.usefulness = (r.usefulness + eta * (target - r.usefulness)).clamp(0.0, 1.0);
            }
        }
        touched
    }

    pub fn snapshot(&self) -> KbSnapshot {
        KbSnapshot {
            schema_version: SNAPSHOT_SCHEMA_VERSION,
            vector_records: self.records.values().cloned().collect(),
            graph_nodes: self.nodes.iter().cloned().collect(),
            graph_edges: self.edges().collect(),
            retrieval_params: self.params.clone(),
            test_cases: self.test_cases.values().cloned().collect(),
        }
    }

    pub fn from_snapshot(snapshot: KbSnapshot) -> Result<Self, KbError> {
        if snapshot.schema_version != SNAPSHOT_SCHEMA_VERSION {
            return Err(KbError::SchemaVersionMismatch {
                expected: SNAPSHOT_SCHEMA_VERSION,
                found: snapshot.schema_version,
            });
        }
        let mut params = snapshot.retrieval_params;
        params.clamp();
        let mut kb = KnowledgeStore::new(params);
        for n in snapshot.graph_nodes {
            kb.add_node(n);
        }
        for r in snapshot.vector_records {
            kb.insert_record(r)?;
        }
        for e in snapshot.graph_edges {
            if !(0.0..=1.0).contains(&e.weight) {
                return Err(KbError::InvalidRecord {
                    id: format!("{}->{}", e.source, e.target),
                    reason: format!("edge weight {}", e.weight),
                });
            }
            kb.upsert_edge(e)?;
        }
        for t in snapshot.test_cases {
            kb.insert_test_case(t);
        }
        Ok(kb)
    }

    /// Pretty JSON with sorted keys.
    pub fn to_json(&self) -> String {
        snapshot_json(&self.snapshot())
    }

    pub fn from_json(text: &str) -> Result<Self, KbError> {
        Self::from_snapshot(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), KbError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, KbError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Whole-store snapshot document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KbSnapshot {
    pub schema_version: u32,
    pub vector_records: Vec<VectorRecord>,
    pub graph_nodes: Vec<String>,
    pub graph_edges: Vec<GraphEdge>,
    pub retrieval_params: RetrievalParams,
    #[serde(default)]
    pub test_cases: Vec<TestCase>,
}

impl From<KnowledgeStore> for KbSnapshot {
    fn from(kb: KnowledgeStore) -> Self {
        kb.snapshot()
    }
}

impl TryFrom<KbSnapshot> for KnowledgeStore {
    type Error = KbError;
    fn try_from(s: KbSnapshot) -> Result<Self, KbError> {
        KnowledgeStore::from_snapshot(s)
    }
}

fn snapshot_json(s: &KbSnapshot) -> String {
    // Going through `Value` sorts object keys.
    let value = serde_json::to_value(s).expect("snapshot serializes");
    serde_json::to_string_pretty(&value).expect("value serializes")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{DefectReport, Severity};
    use proptest::prelude::*;

    fn unit2(x: f64, y: f64) -> Vec<f64> {
        let n = (x * x + y * y).sqrt();
        vec![x / n, y / n]
    }

    fn rec(id: &str, e: Vec<f64>) -> VectorRecord {
        VectorRecord {
            id: id.into(),
            embedding: e,
            payload_ref: id.into(),
            usefulness: 0.5,
        }
    }

    fn five_store() -> KnowledgeStore {
        let mut kb = KnowledgeStore::default();
        for (id, (x, y)) in [
            ("r1", (1.0, 0.0)),
            ("r2", (0.8, 0.6)),
            ("r3", (0.0, 1.0)),
            ("r4", (-1.0, 0.2)),
            ("r5", (0.6, 0.8)),
        ] {
            kb.insert_record(rec(id, unit2(x, y))).unwrap();
        }
        kb
    }

    fn params(threshold: f64, top_k: usize, depth: usize) -> RetrievalParams {
        RetrievalParams {
            similarity_threshold: threshold,
            top_k,
            traversal_depth: depth,
            edge_type_weights: EdgeType::ALL.iter().map(|&t| (t, 1.0)).collect(),
        }
    }

    fn edge(s: &str, t: &str, ty: EdgeType, w: f64) -> GraphEdge {
        GraphEdge {
            source: s.into(),
            target: t.into(),
            edge_type: ty,
            weight: w,
        }
    }

    #[test]
    fn self_similarity_ranks_first() {
        let kb = five_store();
        let q = unit2(0.8, 0.6);
        let hits = kb.vector_query(&q, &params(0.99, 10, 0));
        assert_eq!(hits[0].0.id, "r2");
        assert!((hits[0].1 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn threshold_one_without_exact_match_is_empty() {
        let kb = five_store();
        let q = unit2(0.3, 0.7);
        assert!(kb.vector_query(&q, &params(1.0, 10, 0)).is_empty());
    }

    #[test]
    fn ranking_matches_exhaustive_cosines() {
        let kb = five_store();
        let q = unit2(0.9, 0.3);
        // Brute force: compute each cosine directly from coordinates.
        let coords = [
            ("r1", 1.0, 0.0),
            ("r2", 0.8, 0.6),
            ("r3", 0.0, 1.0),
            ("r4", -1.0, 0.2),
            ("r5", 0.6, 0.8),
        ];
        let mut expected: Vec<(String, f64)> = coords
            .iter()
            .map(|&(id, x, y): &(&str, f64, f64)| {
                let n: f64 = (x * x + y * y).sqrt();
                (id.to_string(), (q[0] * x + q[1] * y) / n)
            })
            .filter(|(_, s)| *s >= 0.1)
            .collect();
        expected.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        expected.truncate(3);
        let got: Vec<(String, f64)> = kb
            .vector_query(&q, &params(0.1, 3, 0))
            .into_iter()
            .map(|(r, s)| (r.id.clone(), s))
            .collect();
        assert_eq!(got.len(), expected.len());
        for (g, e) in got.iter().zip(&expected) {
            assert_eq!(g.0, e.0);
            assert!((g.1 - e.1).abs() < 1e-12);
        }
    }

    #[test]
    fn ties_break_by_id() {
        let mut kb = KnowledgeStore::default();
        kb.insert_record(rec("b", unit2(1.0, 0.0))).unwrap();
        kb.insert_record(rec("a", unit2(1.0, 0.0))).unwrap();
        let hits = kb.vector_query(&unit2(1.0, 0.0), &params(0.0, 5, 0));
        assert_eq!(hits[0].0.id, "a");
        assert_eq!(hits[1].0.id, "b");
    }

    #[test]
    fn depth_zero_returns_seeds() {
        let mut kb = KnowledgeStore::default();
        kb.upsert_edge(edge("a", "b", EdgeType::Covers, 0.9))
            .unwrap();
        let out = kb.graph_traverse(&["a"], &params(0.0, 5, 0)).unwrap();
        assert_eq!(out, vec![("a".to_string(), 1.0)]);
    }

    #[test]
    fn single_edge_product() {
        let mut kb = KnowledgeStore::default();
        kb.upsert_edge(edge("a", "b", EdgeType::Impacts, 0.5))
            .unwrap();
        let mut p = params(0.0, 5, 1);
        p.edge_type_weights.insert(EdgeType::Impacts, 0.8);
        let out = kb.graph_traverse(&["a"], &p).unwrap();
        assert_eq!(out[1].0, "b");
        assert!((out[1].1 - 0.4).abs() < 1e-12);
    }

    #[test]
    fn unknown_seed() {
        let kb = KnowledgeStore::default();
        assert!(matches!(
            kb.graph_traverse(&["ghost"], &params(0.0, 5, 2)),
            Err(KbError::UnknownNode(n)) if n == "ghost"
        ));
    }

    #[test]
    fn self_loops_rejected() {
        let mut kb = KnowledgeStore::default();
        assert!(matches!(
            kb.upsert_edge(edge("a", "a", EdgeType::Covers, 0.5)),
            Err(KbError::SelfLoop(_))
        ));
    }

    #[test]
    fn upsert_keeps_one_edge_per_triple() {
        let mut kb = KnowledgeStore::default();
        kb.upsert_edge(edge("a", "b", EdgeType::Covers, 0.5))
            .unwrap();
        kb.upsert_edge(edge("a", "b", EdgeType::Covers, 0.7))
            .unwrap();
        kb.upsert_edge(edge("a", "b", EdgeType::Impacts, 0.1))
            .unwrap();
        assert_eq!(kb.edge_count(), 2);
        assert_eq!(kb.edge_weight("a", "b", EdgeType::Covers), Some(0.7));
    }

    /// Exhaustive enumeration of every simple path of length <= depth.
    fn enumerate_best(
        kb: &KnowledgeStore,
        seed: &str,
        p: &RetrievalParams,
    ) -> BTreeMap<String, f64> {
        fn walk(
            kb: &KnowledgeStore,
            node: &str,
            score: f64,
            depth_left: usize,
            visited: &mut Vec<String>,
            p: &RetrievalParams,
            out: &mut BTreeMap<String, f64>,
        ) {
            let e = out.entry(node.to_string()).or_insert(0.0);
            *e = e.max(score);
            if depth_left == 0 {
                return;
            }
            let edges: Vec<GraphEdge> = kb.edges().filter(|e| e.source == node).collect();
            for e in edges {
                if visited.contains(&e.target) {
                    continue;
                }
                visited.push(e.target.clone());
                let s = score * e.weight * p.edge_type_weight(e.edge_type);
                walk(kb, &e.target, s, depth_left - 1, visited, p, out);
                visited.pop();
            }
        }
        let mut out = BTreeMap::new();
        walk(
            kb,
            seed,
            1.0,
            p.traversal_depth,
            &mut vec![seed.to_string()],
            p,
            &mut out,
        );
        out.retain(|_, s| *s > 0.0);
        out
    }

    #[test]
    fn diamond_takes_best_path() {
        let mut kb = KnowledgeStore::default();
        kb.upsert_edge(edge("s", "l", EdgeType::Covers, 0.9))
            .unwrap();
        kb.upsert_edge(edge("s", "r", EdgeType::DependsOn, 0.6))
            .unwrap();
        kb.upsert_edge(edge("l", "t", EdgeType::Covers, 0.3))
            .unwrap();
        kb.upsert_edge(edge("r", "t", EdgeType::DetectedBy, 0.8))
            .unwrap();
        let mut p = params(0.0, 10, 2);
        p.edge_type_weights.insert(EdgeType::DependsOn, 0.9);
        let got: BTreeMap<String, f64> =
            kb.graph_traverse(&["s"], &p).unwrap().into_iter().collect();
        let oracle = enumerate_best(&kb, "s", &p);
        assert_eq!(got.len(), oracle.len());
        for (k, v) in &oracle {
            assert!((got[k] - v).abs() < 1e-12, "{k}");
        }
        // max(0.9*0.3, 0.6*0.9*0.8)
        assert!((got["t"] - 0.432).abs() < 1e-12);
    }

    fn six_node_store() -> (KnowledgeStore, Vec<f64>) {
        let mut kb = KnowledgeStore::default();
        let pts = [
            ("n1", 1.0, 0.1),
            ("n2", 0.7, 0.7),
            ("n3", 0.1, 1.0),
            ("n4", -0.5, 0.8),
            ("n5", 0.9, -0.4),
            ("n6", -1.0, -0.2),
        ];
        for (id, x, y) in pts {
            kb.insert_record(rec(id, unit2(x, y))).unwrap();
        }
        kb.upsert_edge(edge("n1", "n3", EdgeType::Covers, 0.9))
            .unwrap();
        kb.upsert_edge(edge("n1", "n4", EdgeType::Impacts, 0.5))
            .unwrap();
        kb.upsert_edge(edge("n3", "n6", EdgeType::DetectedBy, 0.7))
            .unwrap();
        kb.upsert_edge(edge("n4", "n6", EdgeType::DependsOn, 0.9))
            .unwrap();
        (kb, unit2(1.0, 0.3))
    }

    #[test]
    fn hybrid_matches_brute_force() {
        let (kb, q) = six_node_store();
        let p = params(0.2, 4, 2);
        let got = kb
            .hybrid_retrieve(&q, &["n1"], RetrievalMode::Hybrid, &p)
            .unwrap();
        // Brute force: similarity for every record above threshold (top_k of
        // them), path score by enumeration, combined 0.5/0.5.
        let mut sims: Vec<(String, f64)> = kb
            .records()
            .map(|r| (r.id.clone(), cosine(&q, &r.embedding)))
            .filter(|(_, s)| *s >= 0.2)
            .collect();
        sims.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        sims.truncate(4);
        let paths = enumerate_best(&kb, "n1", &p);
        let mut ids: BTreeSet<String> = sims.iter().map(|s| s.0.clone()).collect();
        ids.extend(paths.keys().cloned());
        let mut expected: Vec<(String, f64)> = ids
            .into_iter()
            .map(|id| {
                let s = sims.iter().find(|x| x.0 == id).map_or(0.0, |x| x.1);
                let p = paths.get(&id).copied().unwrap_or(0.0);
                (id, 0.5 * s + 0.5 * p)
            })
            .collect();
        expected.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        expected.truncate(4);
        assert_eq!(got.len(), expected.len());
        for (g, e) in got.iter().zip(&expected) {
            assert_eq!(g.id, e.0);
            assert!((g.score - e.1).abs() < 1e-12);
        }
    }

    #[test]
    fn hybrid_disjoint_sources_are_halved() {
        let mut kb = KnowledgeStore::default();
        kb.insert_record(rec("v", unit2(1.0, 0.0))).unwrap();
        kb.add_node("seed");
        kb.upsert_edge(edge("seed", "g", EdgeType::Covers, 0.6))
            .unwrap();
        let p = params(0.5, 10, 1);
        let q = unit2(1.0, 0.0);
        let out = kb
            .hybrid_retrieve(&q, &["seed"], RetrievalMode::Hybrid, &p)
            .unwrap();
        let get = |id: &str| out.iter().find(|c| c.id == id).unwrap().score;
        assert!((get("v") - 0.5).abs() < 1e-12);
        assert!((get("g") - 0.3).abs() < 1e-12);
        assert!((get("seed") - 0.5).abs() < 1e-12);
    }

    #[test]
    fn single_mode_delegation() {
        let (kb, q) = six_node_store();
        let p = params(0.1, 3, 2);
        let v = kb
            .hybrid_retrieve(&q, &["n1"], RetrievalMode::VectorOnly, &p)
            .unwrap();
        let direct: Vec<ContextItem> = kb
            .vector_query(&q, &p)
            .into_iter()
            .map(|(r, s)| ContextItem {
                id: r.payload_ref.clone(),
                score: s,
            })
            .collect();
        assert_eq!(v, direct);
        let g = kb
            .hybrid_retrieve(&q, &["n1"], RetrievalMode::GraphOnly, &p)
            .unwrap();
        let direct: Vec<ContextItem> = kb
            .graph_traverse(&["n1"], &p)
            .unwrap()
            .into_iter()
            .map(|(id, score)| ContextItem { id, score })
            .collect();
        assert_eq!(g, direct);
    }

    fn feedback(true_defects: usize, fps: usize) -> FeedbackRecord {
        let mut defects = Vec::new();
        for i in 0..true_defects {
            defects.push(DefectReport::true_positive(
                &format!("D-{i}"),
                "tc",
                Severity::High,
            ));
        }
        for _ in 0..fps {
            defects.push(DefectReport::false_positive("tc", Severity::Low));
        }
        FeedbackRecord {
            test_case_ref: "tc".into(),
            defects,
            execution_time: 1.0,
            baseline_time: 1.0,
            quality_rating: 1.0,
            requirement_coverage_assessment: 0.5,
            functional_coverage_validation: 0.5,
            workflow_integration_factor: 1.0,
            compliance_score: 1.0,
        }
    }

    #[test]
    fn reinforce_cases() {
        let mut kb = KnowledgeStore::default();
        kb.upsert_edge(edge("r", "t", EdgeType::DetectedBy, 0.5))
            .unwrap();
        kb.upsert_edge(edge("r", "x", EdgeType::Covers, 0.5))
            .unwrap();
        let mut a = kb.clone();
        a.reinforce_edges(&feedback(1, 0), &["r", "t"], 0.1);
        assert!((a.edge_weight("r", "t", EdgeType::DetectedBy).unwrap() - 0.55).abs() < 1e-12);
        assert_eq!(a.edge_weight("r", "x", EdgeType::Covers), Some(0.5));

        let mut b = kb.clone();
        b.reinforce_edges(&feedback(2, 1), &["r", "t"], 1.0);
        assert_eq!(b.edge_weight("r", "t", EdgeType::DetectedBy), Some(1.0));

        let mut c = kb.clone();
        assert_eq!(c.reinforce_edges(&feedback(0, 0), &["r", "t", "x"], 0.5), 0);
        assert_eq!(c, kb);

        let mut d = kb.clone();
        d.reinforce_edges(&feedback(0, 1), &["r", "t"], 0.2);
        assert!((d.edge_weight("r", "t", EdgeType::DetectedBy).unwrap() - 0.4).abs() < 1e-12);
    }

    #[test]
    fn snapshot_round_trip_is_byte_stable() {
        let (mut kb, _) = six_node_store();
        kb.insert_test_case(TestCase {
            id: "tc-1".into(),
            requirement_refs: vec!["n1".into()],
            strategy: crate::domain::GenerationStrategy::Negative,
            retrieval_mode: RetrievalMode::GraphOnly,
            coverage_vector: vec![0.25; 4],
            generating_agent: crate::domain::AgentRole::TestCaseGeneration,
        });
        let json = kb.to_json();
        let back = KnowledgeStore::from_json(&json).unwrap();
        assert_eq!(back, kb);
        assert_eq!(back.to_json(), json);
        // Keys are sorted at the top level.
        let keys: Vec<&str> = json
            .lines()
            .filter(|l| l.starts_with("  \""))
            .map(|l| l.trim().split('"').nth(1).unwrap())
            .collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
    }

    #[test]
    fn snapshot_schema_checked() {
        let mut s = KnowledgeStore::default().snapshot();
        s.schema_version = 42;
        assert!(matches!(
            KnowledgeStore::from_snapshot(s),
            Err(KbError::SchemaVersionMismatch { found: 42, .. })
        ));
    }

    proptest! {
        #[test]
        fn reinforcement_is_monotone(w in prop::collection::vec(0.0f64..=1.0, 1..6),
                                     eta in 0.01f64..=1.0, fps in 0usize..3) {
            let mut kb = KnowledgeStore::default();
            for (i, wi) in w.iter().enumerate() {
                kb.upsert_edge(edge("r", &format!("t{i}"), EdgeType::Covers, *wi)).unwrap();
            }
            let ctx: Vec<String> = std::iter::once("r".to_string())
                .chain((0..w.len()).map(|i| format!("t{i}"))).collect();
            let mut up = kb.clone();
            up.reinforce_edges(&feedback(1, fps), &ctx, eta);
            let mut down = kb.clone();
            down.reinforce_edges(&feedback(0, fps.max(1)), &ctx, eta);
            for (e, (u, d)) in kb.edges().zip(up.edges().zip(down.edges())) {
                prop_assert!(u.weight >= e.weight);
                prop_assert!(d.weight <= e.weight);
                prop_assert!((0.0..=1.0).contains(&u.weight));
            }
        }

        #[test]
        fn vector_query_is_repeatable(qx in -1.0f64..1.0, qy in -1.0f64..1.0, th in 0.0f64..1.0) {
            prop_assume!(qx.abs() + qy.abs() > 1e-3);
            let kb = five_store();
            let q = unit2(qx, qy);
            let p = params(th, 3, 0);
            let a: Vec<(String, f64)> = kb.vector_query(&q, &p).into_iter().map(|(r, s)| (r.id.clone(), s)).collect();
            let b: Vec<(String, f64)> = kb.vector_query(&q, &p).into_iter().map(|(r, s)| (r.id.clone(), s)).collect();
            prop_assert_eq!(&a, &b);
            for pair in a.windows(2) {
                prop_assert!(pair[0].1 > pair[1].1 || (pair[0].1 == pair[1].1 && pair[0].0 < pair[1].0));
            }
        }
    }
}
