//! Asynchronous advantage actor-critic training.
//!
//! Workers own private environments and MTS runtimes, collect up to `t_max`
//! decision steps, and push clipped gradients into a [`SharedParamStore`]
//! with RMSProp. Steps are global decision steps: one joint decision of a
//! worker's environment counts once, summed over workers.

mod loss;
mod returns;
mod store;
mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mts::MtsError;
use crate::nn::NnError;
use crate::observation::ObsError;
use crate::scenario::ConfigError;

pub use loss::{entropy, loss_and_factored_grads, loss_and_grads, A3cObjective, LossTerms, SyntheticStep};
pub use returns::{compute_returns, discounted_returns, RolloutBuffer, RolloutStep};
pub use store::SharedParamStore;
pub use train::{milestones, train, worker_loop, TrainConfig, TrainOutcome, WorkerContext, STEP_UNIT};

#[derive(Debug, Error)]
pub enum A3cError {
    #[error("rollout buffer is empty")]
    EmptyBuffer,
    #[error("returns and buffer differ in length ({returns} vs {steps})")]
    Misaligned { returns: usize, steps: usize },
    #[error("non-finite loss or gradient for network {network} at step {step}")]
    NonFiniteLoss { network: String, step: u64 },
    #[error("unknown network {0:?}")]
    UnknownNetwork(String),
    #[error("invalid hyperparameters: {0}")]
    InvalidHyper(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Mts(#[from] MtsError),
    #[error(transparent)]
    Obs(#[from] ObsError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("worker {0} panicked")]
    WorkerPanic(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparams {
    pub learning_rate: f64,
    pub workers: usize,
    /// Global decision steps summed over workers.
    pub total_steps: u64,
    pub t_max: usize,
    pub gamma: f64,
    pub entropy_beta: f64,
    pub value_loss_coeff: f64,
    pub rmsprop_decay: f64,
    /// Added inside the square root.
    pub rmsprop_epsilon: f64,
    pub clip_norm: f64,
    pub seed: u64,
    /// Number of evenly spaced checkpoints.
    pub milestones: usize,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            learning_rate: 0.004,
            workers: 8,
            total_steps: 10_000_000,
            t_max: 5,
            gamma: 0.99,
            entropy_beta: 0.01,
            value_loss_coeff: 0.5,
            rmsprop_decay: 0.99,
            rmsprop_epsilon: 0.1,
            clip_norm: 40.0,
            seed: 0,
            milestones: 20,
        }
    }
}

impl Hyperparams {
    /// `learning_rate` may be zero (frozen parameters); everything else that
    /// scales or counts must be positive.
    pub fn validate(&self) -> Result<(), A3cError> {
        let bad = |m: &str| Err(A3cError::InvalidHyper(m.to_string()));
        let finite = [
            self.learning_rate,
            self.gamma,
            self.entropy_beta,
            self.value_loss_coeff,
            self.rmsprop_decay,
            self.rmsprop_epsilon,
            self.clip_norm,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return bad("all rates must be finite");
        }
        if self.learning_rate < 0.0 {
            return bad("learning_rate must be >= 0");
        }
        if self.workers == 0 || self.total_steps == 0 || self.t_max == 0 || self.milestones == 0 {
            return bad("workers, total_steps, t_max and milestones must be >= 1");
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1]");
        }
        if !(0.0..1.0).contains(&self.rmsprop_decay) {
            return bad("rmsprop_decay must lie in [0, 1)");
        }
        if self.entropy_beta < 0.0 || self.value_loss_coeff <= 0.0 || self.rmsprop_epsilon <= 0.0 || self.clip_norm <= 0.0 {
            return bad("entropy_beta must be >= 0; value_loss_coeff, rmsprop_epsilon and clip_norm > 0");
        }
        Ok(())
    }

    pub fn from_table(table: toml::Table) -> Result<Self, A3cError> {
        let hp: Hyperparams = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| A3cError::InvalidHyper(e.to_string()))?;
        hp.validate()?;
        Ok(hp)
    }
}
