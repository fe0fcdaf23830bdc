//! Proximal policy optimization for the agent policies.
//!
//! One MLP carries both heads: the first `n_actions` outputs are policy
//! logits, the last output is the state value.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rl_core::{
    softmax_policy, Adam, Categorical, MlpParams, RlError, RngStream, Transition,
};

/// Learning-rate band accepted unless explicitly overridden.
pub const LEARNING_RATE_RANGE: (f64, f64) = (1e-4, 3e-4);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PpoError {
    #[error("transition {0} has no behavior log-probability")]
    StaleRollout(usize),
    #[error("rollout has {transitions} transitions but {values} value estimates (need one more)")]
    LengthMismatch { transitions: usize, values: usize },
    #[error("empty rollout")]
    EmptyRollout,
    #[error("invalid PPO configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Rl(#[from] RlError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PpoConfig {
    pub clip_epsilon: f64,
    pub learning_rate: f64,
    pub epochs_per_update: usize,
    pub minibatch_size: usize,
    pub rollout_length: usize,
    pub value_loss_coeff: f64,
    pub entropy_coeff: f64,
    #[serde(default)]
    pub allow_out_of_range_learning_rate: bool,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            clip_epsilon: 0.2,
            learning_rate: 3e-4,
            epochs_per_update: 4,
            minibatch_size: 64,
            rollout_length: 256,
            value_loss_coeff: 0.5,
            entropy_coeff: 0.01,
            allow_out_of_range_learning_rate: false,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<(), PpoError> {
        let bad = |m: String| Err(PpoError::InvalidConfig(m));
        let (lo, hi) = LEARNING_RATE_RANGE;
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            ));
        }
        if !self.allow_out_of_range_learning_rate && !(lo..=hi).contains(&self.learning_rate) {
            return bad(format!(
                "learning_rate {} outside [{lo}, {hi}]; set allow_out_of_range_learning_rate to override",
                self.learning_rate
            ));
        }
        if !(self.clip_epsilon > 0.0) {
            return bad(format!(
                "clip_epsilon must be positive, got {}",
                self.clip_epsilon
            ));
        }
        if self.epochs_per_update == 0 || self.minibatch_size == 0 || self.rollout_length == 0 {
            return bad("epochs, minibatch_size and rollout_length must be positive".into());
        }
        if self.value_loss_coeff < 0.0 || self.entropy_coeff < 0.0 {
            return bad("loss coefficients must be non-negative".into());
        }
        Ok(())
    }
}

/// Rollout with per-step advantages and value targets.
#[derive(Debug, Clone, PartialEq)]
pub struct ProcessedRollout {
    pub transitions: Vec<Transition>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl ProcessedRollout {
    /// Shift and scale advantages to zero mean, unit standard deviation.
    pub fn normalize_advantages(&mut self) {
        let n = self.advantages.len();
        if n < 2 {
            return;
        }
        let mean = self.advantages.iter().sum::<f64>() / n as f64;
        let var = self
            .advantages
            .iter()
            .map(|a| (a - mean).powi(2))
            .sum::<f64>()
            / n as f64;
        let sd = var.sqrt().max(1e-8);
        for a in &mut self.advantages {
            *a = (*a - mean) / sd;
        }
    }
}

/// Generalized advantage estimation.
///
/// `values[t]` is `V(s_t)` for every transition plus one bootstrap value for
/// the state after the last transition. A `done` flag cuts both the bootstrap
/// and the advantage recursion.
pub fn compute_gae(
    rollout: Vec<Transition>,
    values: &[f64],
    gamma: f64,
    lambda: f64,
) -> Result<ProcessedRollout, PpoError> {
    let n = rollout.len();
    if values.len() != n + 1 {
        return Err(PpoError::LengthMismatch {
            transitions: n,
            values: values.len(),
        });
    }
    let mut advantages = vec![0.0; n];
    let mut next_adv = 0.0;
    for t in (0..n).rev() {
        let cont = if rollout[t].done { 0.0 } else { 1.0 };
        let delta = rollout[t].reward + gamma * values[t + 1] * cont - values[t];
        next_adv = delta + gamma * lambda * cont * next_adv;
        advantages[t] = next_adv;
    }
    let returns = advantages.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok(ProcessedRollout {
        transitions: rollout,
        advantages,
        returns,
    })
}

/// Per-sample clipped objective `min(r A, clip(r, 1-ε, 1+ε) A)`.
pub fn clipped_surrogate(ratio: f64, advantage: f64, epsilon: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - epsilon, 1.0 + epsilon);
    (ratio * advantage).min(clipped * advantage)
}

/// Split a joint network output into policy distribution and value.
pub fn policy_value(output: &[f64]) -> (Categorical, f64) {
    let n = output.len() - 1;
    (softmax_policy(&output[..n]), output[n])
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PpoUpdateReport {
    pub samples: usize,
    pub minibatches: usize,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub mean_ratio: f64,
}

#[derive(Debug, Clone, Copy, Default)]
struct Stats {
    n: usize,
    surrogate: f64,
    value_loss: f64,
    entropy: f64,
    clipped: usize,
    ratio: f64,
}

/// Gradient of the minibatch loss
/// `-mean(clipped surrogate) + c_v mean((V - R)^2) - c_e mean(H)`.
pub fn minibatch_gradient(
    params: &MlpParams,
    rollout: &ProcessedRollout,
    indices: &[usize],
    config: &PpoConfig,
) -> Result<MlpParams, PpoError> {
    minibatch_gradient_with_stats(params, rollout, indices, config).map(|(g, _)| g)
}

fn minibatch_gradient_with_stats(
    params: &MlpParams,
    rollout: &ProcessedRollout,
    indices: &[usize],
    config: &PpoConfig,
) -> Result<(MlpParams, Stats), PpoError> {
    let mut grad = MlpParams::zeros(params.sizes());
    let mut stats = Stats::default();
    let b = indices.len() as f64;
    let n_actions = params.n_out() - 1;
    let eps = config.clip_epsilon;
    for &i in indices {
        let t = &rollout.transitions[i];
        let old = t.log_prob_old.ok_or(PpoError::StaleRollout(i))?;
        if t.action >= n_actions {
            return Err(RlError::DimensionMismatch {
                expected: n_actions,
                got: t.action + 1,
            }
            .into());
        }
        let adv = rollout.advantages[i];
        let ret = rollout.returns[i];
        let cache = params.forward_cached(&t.state)?;
        let (dist, value) = policy_value(cache.output());
        let ratio = (dist.log_probs[t.action] - old).exp();
        let clipped = ratio.clamp(1.0 - eps, 1.0 + eps);
        let active = ratio * adv <= clipped * adv;
        let entropy = dist.entropy();

        let mut og = vec![0.0; n_actions + 1];
        for (j, g) in og.iter_mut().take(n_actions).enumerate() {
            let p = dist.probs[j];
            let indicator = if j == t.action { 1.0 } else { 0.0 };
            let d_surr = if active {
                adv * ratio * (indicator - p)
            } else {
                0.0
            };
            let d_ent = if p > 0.0 {
                -p * (dist.log_probs[j] + entropy)
            } else {
                0.0
            };
            *g = -(d_surr + config.entropy_coeff * d_ent) / b;
        }
        og[n_actions] = 2.0 * config.value_loss_coeff * (value - ret) / b;
        params.backward_accumulate(&cache, &og, &mut grad)?;

        stats.n += 1;
        stats.surrogate += clipped_surrogate(ratio, adv, eps);
        stats.value_loss += (value - ret).powi(2);
        stats.entropy += entropy;
        stats.ratio += ratio;
        if (ratio - 1.0).abs() > eps {
            stats.clipped += 1;
        }
    }
    Ok((grad, stats))
}

/// `epochs_per_update` passes over shuffled minibatches, one Adam step each.
pub fn ppo_update(
    params: &mut MlpParams,
    optimizer: &mut Adam,
    rollout: &ProcessedRollout,
    config: &PpoConfig,
    rng: &mut RngStream,
) -> Result<PpoUpdateReport, PpoError> {
    let n = rollout.transitions.len();
    if n == 0 {
        return Err(PpoError::EmptyRollout);
    }
    if rollout.advantages.len() != n || rollout.returns.len() != n {
        return Err(PpoError::LengthMismatch {
            transitions: n,
            values: rollout.advantages.len(),
        });
    }
    if let Some(i) = rollout
        .transitions
        .iter()
        .position(|t| t.log_prob_old.is_none())
    {
        return Err(PpoError::StaleRollout(i));
    }
    let mut total = Stats::default();
    let mut minibatches = 0;
    let mut order: Vec<usize> = (0..n).collect();
    for _ in 0..config.epochs_per_update {
        order.shuffle(rng);
        for chunk in order.chunks(config.minibatch_size) {
            let (grad, s) = minibatch_gradient_with_stats(params, rollout, chunk, config)?;
            optimizer.step(params, &grad)?;
            minibatches += 1;
            total.n += s.n;
            total.surrogate += s.surrogate;
            total.value_loss += s.value_loss;
            total.entropy += s.entropy;
            total.clipped += s.clipped;
            total.ratio += s.ratio;
        }
    }
    let m = total.n as f64;
    Ok(PpoUpdateReport {
        samples: n,
        minibatches,
        policy_loss: -total.surrogate / m,
        value_loss: total.value_loss / m,
        entropy: total.entropy / m,
        clip_fraction: total.clipped as f64 / m,
        mean_ratio: total.ratio / m,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rl_core::{sample_action, StreamId};
    use proptest::prelude::*;

    fn tr(reward: f64, done: bool) -> Transition {
        Transition {
            state: vec![0.0],
            action: 0,
            reward,
            next_state: vec![0.0],
            done,
            log_prob_old: Some(0.0),
        }
    }

    /// Direct sum of discounted TD residuals, no recursion.
    fn gae_oracle(rewards: &[f64], values: &[f64], g: f64, l: f64) -> Vec<f64> {
        let n = rewards.len();
        let delta: Vec<f64> = (0..n)
            .map(|t| rewards[t] + g * values[t + 1] - values[t])
            .collect();
        (0..n)
            .map(|t| {
                (t..n)
                    .map(|k| (g * l).powi((k - t) as i32) * delta[k])
                    .sum()
            })
            .collect()
    }

    #[test]
    fn gae_single_step() {
        let p = compute_gae(vec![tr(1.0, false)], &[0.0, 0.0], 0.99, 0.95).unwrap();
        assert!((p.advantages[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gae_three_steps_lambda_zero() {
        let r = vec![tr(1.0, false), tr(1.0, false), tr(1.0, false)];
        let p = compute_gae(r, &[0.5, 0.5, 0.5, 0.0], 0.9, 0.0).unwrap();
        let want = [1.0 + 0.9 * 0.5 - 0.5, 1.0 + 0.9 * 0.5 - 0.5, 1.0 - 0.5];
        for (a, w) in p.advantages.iter().zip(want) {
            assert!((a - w).abs() < 1e-12);
        }
    }

    #[test]
    fn gae_length_mismatch() {
        assert!(matches!(
            compute_gae(vec![tr(1.0, false), tr(0.0, false)], &[0.0, 0.0], 0.9, 0.9),
            Err(PpoError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn gae_done_cuts_bootstrap() {
        let p = compute_gae(
            vec![tr(1.0, true), tr(2.0, false)],
            &[0.0, 9.0, 0.0],
            0.9,
            0.9,
        )
        .unwrap();
        assert!((p.advantages[0] - 1.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn gae_matches_direct_sum(
            data in prop::collection::vec((-2.0f64..2.0, -2.0f64..2.0), 1..30),
            last in -2.0f64..2.0,
            g in 0.0f64..0.999,
            l in 0.0f64..=1.0,
        ) {
            let rewards: Vec<f64> = data.iter().map(|d| d.0).collect();
            let mut values: Vec<f64> = data.iter().map(|d| d.1).collect();
            values.push(last);
            let roll = rewards.iter().map(|&r| tr(r, false)).collect();
            let p = compute_gae(roll, &values, g, l).unwrap();
            let want = gae_oracle(&rewards, &values, g, l);
            for (a, w) in p.advantages.iter().zip(&want) {
                prop_assert!((a - w).abs() < 1e-9);
            }
        }

        #[test]
        fn clipped_never_exceeds_unclipped(r in 0.0f64..5.0, a in -5.0f64..5.0, e in 0.01f64..0.9) {
            prop_assert!(clipped_surrogate(r, a, e) <= r * a + 1e-15);
        }
    }

    #[test]
    fn surrogate_examples() {
        assert!((clipped_surrogate(1.5, 1.0, 0.2) - 1.2).abs() < 1e-12);
        assert!((clipped_surrogate(0.5, -1.0, 0.2) + 0.8).abs() < 1e-12);
        assert!((clipped_surrogate(1.1, 1.0, 0.2) - 1.1).abs() < 1e-12);
    }

    #[test]
    fn normalized_advantages_have_unit_moments() {
        let mut p = ProcessedRollout {
            transitions: vec![tr(0.0, false); 4],
            advantages: vec![1.0, 2.0, 3.0, 10.0],
            returns: vec![0.0; 4],
        };
        p.normalize_advantages();
        let mean = p.advantages.iter().sum::<f64>() / 4.0;
        let var = p.advantages.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-9);
    }

    fn bandit_net(seed: u64) -> MlpParams {
        let mut rng = RngStream::new(seed, StreamId::Init);
        let mut p = MlpParams::xavier(&MlpParams::standard_topology(2, 3), &mut rng);
        p.scale_output_layer(0.01);
        p
    }

    #[test]
    fn stale_rollout_rejected() {
        let mut params = bandit_net(1);
        let mut opt = Adam::new(3e-4, params.len());
        let mut t = tr(1.0, true);
        t.state = vec![1.0, 0.0];
        t.log_prob_old = None;
        let roll = compute_gae(vec![t], &[0.0, 0.0], 0.99, 0.95).unwrap();
        let mut rng = RngStream::new(1, StreamId::Policy);
        assert_eq!(
            ppo_update(
                &mut params,
                &mut opt,
                &roll,
                &PpoConfig::default(),
                &mut rng
            ),
            Err(PpoError::StaleRollout(0))
        );
    }

    #[test]
    fn without_clipping_gradient_is_vanilla_policy_gradient() {
        let params = bandit_net(5);
        let mut rng = RngStream::new(9, StreamId::Policy);
        let mut transitions = Vec::new();
        let mut advantages = Vec::new();
        for k in 0..16 {
            let state = vec![rng.uniform(), rng.uniform() - 0.5];
            let (dist, _) = policy_value(&params.forward(&state).unwrap());
            let a = sample_action(&dist.probs, &mut rng);
            // Stale behavior policy so ratios differ from one.
            let old = dist.log_probs[a] + 0.3 * ((k % 3) as f64 - 1.0);
            transitions.push(Transition {
                state: state.clone(),
                action: a,
                reward: 0.0,
                next_state: state,
                done: true,
                log_prob_old: Some(old),
            });
            advantages.push(rng.uniform() * 2.0 - 1.0);
        }
        let roll = ProcessedRollout {
            returns: vec![0.0; 16],
            transitions,
            advantages,
        };
        let config = PpoConfig {
            clip_epsilon: 1e12,
            value_loss_coeff: 0.0,
            entropy_coeff: 0.0,
            ..Default::default()
        };
        let idx: Vec<usize> = (0..16).collect();
        let got = minibatch_gradient(&params, &roll, &idx, &config).unwrap();
        // Independent oracle: central differences of -mean(r A).
        let objective = |p: &MlpParams| {
            roll.transitions
                .iter()
                .zip(&roll.advantages)
                .map(|(t, a)| {
                    let (d, _) = policy_value(&p.forward(&t.state).unwrap());
                    -(d.log_probs[t.action] - t.log_prob_old.unwrap()).exp() * a
                })
                .sum::<f64>()
                / 16.0
        };
        let h = 1e-6;
        for k in 0..params.len() {
            let mut plus = params.clone();
            plus.values_mut()[k] += h;
            let mut minus = params.clone();
            minus.values_mut()[k] -= h;
            let fd = (objective(&plus) - objective(&minus)) / (2.0 * h);
            assert!(
                (fd - got.values()[k]).abs() < 1e-8,
                "param {k}: {fd} vs {}",
                got.values()[k]
            );
        }
    }

    fn bandit_rollout(params: &MlpParams, rng: &mut RngStream, n: usize) -> ProcessedRollout {
        let state = vec![1.0, 0.0];
        let mut transitions = Vec::new();
        let mut values = Vec::new();
        for _ in 0..n {
            let out = params.forward(&state).unwrap();
            let (d, v) = policy_value(&out);
            let a = sample_action(&d.probs, rng);
            let reward = if a == 1 { 1.0 } else { 0.0 };
            transitions.push(Transition {
                state: state.clone(),
                action: a,
                reward,
                next_state: state.clone(),
                done: true,
                log_prob_old: Some(d.log_probs[a]),
            });
            values.push(v);
        }
        values.push(0.0);
        let mut p = compute_gae(transitions, &values, 0.99, 0.95).unwrap();
        p.normalize_advantages();
        p
    }

    #[test]
    fn single_update_moves_toward_positive_advantage() {
        let mut params = bandit_net(2);
        let mut opt = Adam::new(3e-4, params.len());
        let mut rng = RngStream::new(2, StreamId::Policy);
        let before = policy_value(&params.forward(&[1.0, 0.0]).unwrap()).0.probs[1];
        let roll = bandit_rollout(&params, &mut rng, 64);
        let r = ppo_update(
            &mut params,
            &mut opt,
            &roll,
            &PpoConfig::default(),
            &mut rng,
        )
        .unwrap();
        let after = policy_value(&params.forward(&[1.0, 0.0]).unwrap()).0.probs[1];
        assert!(after > before);
        assert_eq!(r.minibatches, 4);
    }

    #[test]
    fn bandit_is_learned() {
        let mut params = bandit_net(3);
        let mut opt = Adam::new(3e-4, params.len());
        let mut rng = RngStream::new(3, StreamId::Policy);
        let config = PpoConfig::default();
        let mut p_best = 0.0;
        for _ in 0..200 {
            let roll = bandit_rollout(&params, &mut rng, 64);
            ppo_update(&mut params, &mut opt, &roll, &config, &mut rng).unwrap();
            p_best = policy_value(&params.forward(&[1.0, 0.0]).unwrap()).0.probs[1];
            if p_best > 0.9 {
                break;
            }
        }
        assert!(p_best > 0.9, "p = {p_best}");
    }

    #[test]
    fn config_validation() {
        assert!(PpoConfig::default().validate().is_ok());
        let c = PpoConfig {
            learning_rate: 1e-2,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let c = PpoConfig {
            learning_rate: 1e-2,
            allow_out_of_range_learning_rate: true,
            ..Default::default()
        };
        assert!(c.validate().is_ok());
    }
}
