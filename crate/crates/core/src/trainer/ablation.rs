use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    final_window_mean, AblationFlags, EpisodeMetrics, NullSink, RunConfig, Trainer, TrainerError,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    DisablePpo,
    DisableDqn,
    ScalarReward,
    NoFeedback,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Full,
        Variant::DisablePpo,
        Variant::DisableDqn,
        Variant::ScalarReward,
        Variant::NoFeedback,
    ];

    pub fn flags(self) -> AblationFlags {
        let mut f = AblationFlags::default();
        match self {
            Variant::Full => {}
            Variant::DisablePpo => f.disable_ppo = true,
            Variant::DisableDqn => f.disable_dqn = true,
            Variant::ScalarReward => f.scalar_reward = true,
            Variant::NoFeedback => f.no_feedback = true,
        }
        f
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::DisablePpo => "disable_ppo",
            Variant::DisableDqn => "disable_dqn",
            Variant::ScalarReward => "scalar_reward",
            Variant::NoFeedback => "no_feedback",
        }
    }
}

/// Final-window means of one variant across seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub variant: Variant,
    pub ddr_per_seed: Vec<f64>,
    pub reward_per_seed: Vec<f64>,
    pub ddr_mean: f64,
    pub ddr_std: f64,
    pub reward_mean: f64,
    pub reward_std: f64,
    /// Mean of effectiveness, coverage, efficiency, compliance, adaptation.
    pub components: [f64; 5],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub seeds: Vec<u64>,
    pub rows: Vec<VariantSummary>,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (m, 0.0);
    }
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, var.sqrt())
}

impl AblationTable {
    pub fn row(&self, variant: Variant) -> Option<&VariantSummary> {
        self.rows.iter().find(|r| r.variant == variant)
    }

    /// Plain-text table, one line per variant.
    pub fn render(&self) -> String {
        let mut out = String::from(
            "variant        ddr_mean  ddr_std   reward_mean reward_std  r_eff    r_cov    r_effic  r_comp   r_adapt\n",
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{:<14} {:>8.4}  {:>8.4}  {:>10.4}  {:>9.4}  {:>7.4}  {:>7.4}  {:>7.4}  {:>7.4}  {:>7.4}\n",
                r.variant.name(),
                r.ddr_mean,
                r.ddr_std,
                r.reward_mean,
                r.reward_std,
                r.components[0],
                r.components[1],
                r.components[2],
                r.components[3],
                r.components[4],
            ));
        }
        out
    }
}

/// Train one config with no event output; returns the per-episode metrics.
pub(crate) fn train_metrics(config: RunConfig) -> Result<Vec<EpisodeMetrics>, TrainerError> {
    let mut t = Trainer::new(config)?;
    t.run(&mut NullSink)?;
    Ok(t.state.metrics)
}

/// Full system plus the four single-flag ablations, each over `seeds`.
/// Runs in parallel; the table order is fixed (variant, then seed).
pub fn run_ablation_suite(base: &RunConfig, seeds: &[u64]) -> Result<AblationTable, TrainerError> {
    base.validate()?;
    let jobs: Vec<(Variant, u64)> = Variant::ALL
        .iter()
        .flat_map(|&v| seeds.iter().map(move |&s| (v, s)))
        .collect();
    let results: Vec<Result<Vec<EpisodeMetrics>, TrainerError>> = jobs
        .par_iter()
        .map(|&(v, seed)| {
            let mut c = base.clone();
            c.seed = seed;
            c.ablation = v.flags();
            train_metrics(c)
        })
        .collect();
    let w = base.smoothing_window;
    let mut rows = Vec::new();
    let mut it = results.into_iter();
    for v in Variant::ALL {
        let mut ddr = Vec::new();
        let mut reward = Vec::new();
        let mut comps = [0.0; 5];
        for _ in seeds {
            let m = it.next().expect("one result per job")?;
            ddr.push(final_window_mean(&m, w, |x| x.defect_detection_rate));
            reward.push(final_window_mean(&m, w, |x| x.r_total));
            let c = [
                final_window_mean(&m, w, |x| x.r_effectiveness),
                final_window_mean(&m, w, |x| x.r_coverage),
                final_window_mean(&m, w, |x| x.r_efficiency),
                final_window_mean(&m, w, |x| x.r_compliance),
                final_window_mean(&m, w, |x| x.r_adaptation),
            ];
            for (a, b) in comps.iter_mut().zip(c) {
                *a += b / seeds.len() as f64;
            }
        }
        let (ddr_mean, ddr_std) = mean_std(&ddr);
        let (reward_mean, reward_std) = mean_std(&reward);
        rows.push(VariantSummary {
            variant: v,
            ddr_per_seed: ddr,
            reward_per_seed: reward,
            ddr_mean,
            ddr_std,
            reward_mean,
            reward_std,
            components: comps,
        });
    }
    Ok(AblationTable {
        seeds: seeds.to_vec(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_std_sample() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn flags_are_single() {
        for v in Variant::ALL {
            let f = v.flags();
            let n = [f.disable_ppo, f.disable_dqn, f.scalar_reward, f.no_feedback]
                .iter()
                .filter(|b| **b)
                .count();
            assert_eq!(n, usize::from(v != Variant::Full));
        }
    }

    #[test]
    fn tiny_suite_is_deterministic() {
        let base = RunConfig {
            episode_count: 2,
            tests_per_episode: 6,
            smoothing_window: 2,
            ..Default::default()
        };
        let a = run_ablation_suite(&base, &[11]).unwrap();
        let b = run_ablation_suite(&base, &[11]).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.rows.len(), 5);
        let scalar = a.row(Variant::ScalarReward).unwrap();
        assert!(scalar.components.iter().skip(1).any(|c| *c != 0.0));
    }
}
