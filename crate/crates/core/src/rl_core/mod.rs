//! Shared reinforcement-learning substrate: MLP function approximator with
//! analytic gradients, Adam, experience buffer, categorical policy helpers,
//! seeded random streams and a finite-difference gradient checker.

mod buffer;
pub mod gradcheck;
mod mlp;
mod optim;
mod policy;
mod rng;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use buffer::{ExperienceBuffer, Transition};
pub use mlp::{ForwardCache, MlpCheckpoint, MlpParams, HIDDEN_WIDTH};
pub use optim::Adam;
pub use policy::{argmax, sample_action, softmax_policy, Categorical};
pub use rng::{RngStream, StreamId, StreamPosition};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RlError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite value in parameters or gradient")]
    NonFinite,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
    #[error("schema version mismatch: expected {expected}, found {found}")]
    SchemaVersionMismatch { expected: u32, found: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RlCoreConfig {
    pub discount_factor: f64,
    pub gae_lambda: f64,
    /// Overwritten by the run seed when embedded in a run configuration.
    #[serde(default)]
    pub seed: u64,
}

impl Default for RlCoreConfig {
    fn default() -> Self {
        Self {
            discount_factor: 0.99,
            gae_lambda: 0.95,
            seed: 0,
        }
    }
}

impl RlCoreConfig {
    pub fn validate(&self) -> Result<(), RlError> {
        if !(0.0..1.0).contains(&self.discount_factor) {
            return Err(RlError::InvalidConfig(format!(
                "discount_factor must be in [0, 1), got {}",
                self.discount_factor
            )));
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return Err(RlError::InvalidConfig(format!(
                "gae_lambda must be in [0, 1], got {}",
                self.gae_lambda
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_bounds() {
        assert!(RlCoreConfig::default().validate().is_ok());
        let c = RlCoreConfig {
            discount_factor: 1.0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let c = RlCoreConfig {
            gae_lambda: 1.5,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }
}
