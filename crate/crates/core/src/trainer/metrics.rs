use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agents::GeneratedBatch;
use crate::domain::{AgentRole, FeedbackRecord};
use crate::ppo::PpoUpdateReport;
use crate::rewards::RewardBreakdown;

use super::TrainerError;

/// Episodes per reporting "week" in learning-curve summaries.
pub const WEEK_EPISODES: usize = 25;

/// One row of the metrics CSV. Column order is part of the file format.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub episode: usize,
    pub generation_accuracy: f64,
    pub defect_detection_rate: f64,
    pub false_positive_rate: f64,
    pub requirement_coverage: f64,
    pub r_effectiveness: f64,
    pub r_coverage: f64,
    pub r_efficiency: f64,
    pub r_compliance: f64,
    pub r_adaptation: f64,
    pub r_total: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PpoRow {
    pub update_index: usize,
    pub role: AgentRole,
    pub mean_ratio: f64,
    pub clip_fraction: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
}

impl PpoRow {
    pub fn new(update_index: usize, role: AgentRole, r: &PpoUpdateReport) -> Self {
        Self {
            update_index,
            role,
            mean_ratio: r.mean_ratio,
            clip_fraction: r.clip_fraction,
            policy_loss: r.policy_loss,
            value_loss: r.value_loss,
            entropy: r.entropy,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DqnRow {
    pub step: u64,
    pub epsilon: f64,
    pub loss: Option<f64>,
    pub mean_q: Option<f64>,
    pub chosen_action: usize,
}

/// Everything a run logs, one JSON object per line with a `type` tag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Event {
    EpisodeStart {
        episode: usize,
        n_requirements: usize,
    },
    AgentAction {
        episode: usize,
        slot: usize,
        role: AgentRole,
        action_index: usize,
        log_prob: f64,
    },
    Tests {
        episode: usize,
        slot: usize,
        batch: GeneratedBatch,
    },
    Feedback {
        episode: usize,
        slot: usize,
        record: FeedbackRecord,
        /// Catalog defects behind the test's requirements.
        reachable_defects: Vec<String>,
    },
    SlotReward {
        episode: usize,
        slot: usize,
        reward: RewardBreakdown,
    },
    PpoUpdate(PpoRow),
    KbAction(DqnRow),
    EpisodeEnd(EpisodeMetrics),
}

/// Destination for run events.
pub trait EventSink {
    fn emit(&mut self, event: &Event) -> Result<(), TrainerError>;
    fn flush(&mut self) -> Result<(), TrainerError> {
        Ok(())
    }
}

impl EventSink for Vec<Event> {
    fn emit(&mut self, event: &Event) -> Result<(), TrainerError> {
        self.push(event.clone());
        Ok(())
    }
}

/// Discards events.
pub struct NullSink;

impl EventSink for NullSink {
    fn emit(&mut self, _: &Event) -> Result<(), TrainerError> {
        Ok(())
    }
}

pub struct JsonlSink<W: Write> {
    out: W,
}

impl JsonlSink<std::io::BufWriter<std::fs::File>> {
    /// Appends to `path`, creating it if needed.
    pub fn append(path: &Path) -> Result<Self, TrainerError> {
        let f = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)?;
        Ok(Self {
            out: std::io::BufWriter::new(f),
        })
    }
}

impl<W: Write> EventSink for JsonlSink<W> {
    fn emit(&mut self, event: &Event) -> Result<(), TrainerError> {
        serde_json::to_writer(&mut self.out, event)
            .map_err(|e| TrainerError::Parse(e.to_string()))?;
        self.out.write_all(b"\n")?;
        Ok(())
    }

    fn flush(&mut self) -> Result<(), TrainerError> {
        self.out.flush()?;
        Ok(())
    }
}

pub fn read_events(path: &Path) -> Result<Vec<Event>, TrainerError> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| TrainerError::Parse(format!("line {}: {e}", i + 1)))?,
        );
    }
    Ok(out)
}

/// Per-episode accumulator shared by the live run and the log re-derivation.
#[derive(Debug, Clone, Default)]
pub(crate) struct EpisodeAccumulator {
    tests: usize,
    valid: usize,
    false_positives: usize,
    detected: BTreeSet<String>,
    reachable: BTreeSet<String>,
    touched: BTreeSet<String>,
    rewards: Vec<RewardBreakdown>,
}

impl EpisodeAccumulator {
    pub(crate) fn add_batch(&mut self, batch: &GeneratedBatch) {
        for t in &batch.tests {
            self.touched.extend(t.requirement_refs.iter().cloned());
        }
    }

    pub(crate) fn add_feedback(&mut self, record: &FeedbackRecord, reachable: &[String]) {
        self.tests += 1;
        if record.quality_rating >= 0.5 {
            self.valid += 1;
        }
        self.false_positives += record.false_positive_count();
        self.reachable.extend(reachable.iter().cloned());
        for d in record.true_defects() {
            if let Some(id) = d.defect_id() {
                self.detected.insert(id.to_string());
            }
        }
    }

    pub(crate) fn add_reward(&mut self, r: RewardBreakdown) {
        self.rewards.push(r);
    }

    pub(crate) fn finish(&self, episode: usize, n_requirements: usize) -> EpisodeMetrics {
        let frac = |a: usize, b: usize| {
            if b == 0 {
                0.0
            } else {
                (a as f64 / b as f64).min(1.0)
            }
        };
        let found = self.detected.intersection(&self.reachable).count();
        let r = RewardBreakdown::mean(&self.rewards);
        EpisodeMetrics {
            episode,
            generation_accuracy: frac(self.valid, self.tests),
            defect_detection_rate: frac(found, self.reachable.len()),
            false_positive_rate: frac(self.false_positives, self.tests),
            requirement_coverage: frac(self.touched.len(), n_requirements),
            r_effectiveness: r.effectiveness,
            r_coverage: r.coverage,
            r_efficiency: r.efficiency,
            r_compliance: r.compliance,
            r_adaptation: r.adaptation,
            r_total: r.total,
        }
    }
}

/// Recompute per-episode metrics from raw action, test, feedback and reward
/// events, ignoring any logged summaries.
pub fn metrics_from_events<'a>(events: impl IntoIterator<Item = &'a Event>) -> Vec<EpisodeMetrics> {
    let mut episodes: BTreeMap<usize, (usize, EpisodeAccumulator)> = BTreeMap::new();
    for e in events {
        match e {
            Event::EpisodeStart {
                episode,
                n_requirements,
            } => {
                episodes.insert(*episode, (*n_requirements, EpisodeAccumulator::default()));
            }
            Event::Tests { episode, batch, .. } => {
                if let Some((_, acc)) = episodes.get_mut(episode) {
                    acc.add_batch(batch);
                }
            }
            Event::Feedback {
                episode,
                record,
                reachable_defects,
                ..
            } => {
                if let Some((_, acc)) = episodes.get_mut(episode) {
                    acc.add_feedback(record, reachable_defects);
                }
            }
            Event::SlotReward {
                episode, reward, ..
            } => {
                if let Some((_, acc)) = episodes.get_mut(episode) {
                    acc.add_reward(*reward);
                }
            }
            _ => {}
        }
    }
    episodes
        .into_iter()
        .map(|(ep, (n, acc))| acc.finish(ep, n))
        .collect()
}

fn csv_string<T: Serialize>(rows: &[T]) -> Result<String, TrainerError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)
            .map_err(|e| TrainerError::Parse(e.to_string()))?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| TrainerError::Parse(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| TrainerError::Parse(e.to_string()))
}

/// Metrics CSV text: header plus one row per episode. An empty run is an
/// error rather than a header-only file.
pub fn metrics_csv(metrics: &[EpisodeMetrics]) -> Result<String, TrainerError> {
    if metrics.is_empty() {
        return Err(TrainerError::EmptyRun);
    }
    csv_string(metrics)
}

pub fn ppo_csv(rows: &[PpoRow]) -> Result<String, TrainerError> {
    if rows.is_empty() {
        return Ok(
            "update_index,role,mean_ratio,clip_fraction,policy_loss,value_loss,entropy\n".into(),
        );
    }
    csv_string(rows)
}

pub fn dqn_csv(rows: &[DqnRow]) -> Result<String, TrainerError> {
    if rows.is_empty() {
        return Ok("step,epsilon,loss,mean_q,chosen_action\n".into());
    }
    csv_string(rows)
}

/// Re-derive the metrics CSV from an event log.
pub fn export_metrics(
    events_path: &Path,
    csv_path: &Path,
) -> Result<Vec<EpisodeMetrics>, TrainerError> {
    let events = read_events(events_path)?;
    let metrics = metrics_from_events(&events);
    std::fs::write(csv_path, metrics_csv(&metrics)?)?;
    Ok(metrics)
}

/// Mean of `field` over the last `window` episodes.
pub fn final_window_mean(
    metrics: &[EpisodeMetrics],
    window: usize,
    field: impl Fn(&EpisodeMetrics) -> f64,
) -> f64 {
    let start = metrics.len().saturating_sub(window.max(1));
    let tail = &metrics[start..];
    if tail.is_empty() {
        return 0.0;
    }
    tail.iter().map(field).sum::<f64>() / tail.len() as f64
}

/// Trailing moving average with the given window.
pub fn smoothed(series: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    let mut out = Vec::with_capacity(series.len());
    let mut sum = 0.0;
    for (i, x) in series.iter().enumerate() {
        sum += x;
        if i >= w {
            sum -= series[i - w];
        }
        out.push(sum / (i + 1).min(w) as f64);
    }
    out
}

/// Means of the first and last thirds of a series.
pub fn thirds(series: &[f64]) -> (f64, f64) {
    let n = series.len() / 3;
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    (mean(&series[..n]), mean(&series[series.len() - n..]))
}

/// Mean total reward per block of [`WEEK_EPISODES`] episodes.
pub fn weekly_rewards(metrics: &[EpisodeMetrics]) -> Vec<f64> {
    metrics
        .chunks(WEEK_EPISODES)
        .map(|c| c.iter().map(|m| m.r_total).sum::<f64>() / c.len() as f64)
        .collect()
}
