//! The federated round loop: broadcast, local training, aggregation and
//! evaluation for FedAvg and MOON.

mod aggregate;
mod engine;
mod local;

pub use aggregate::{aggregate, size_weights, WEIGHT_SUM_TOLERANCE};
pub use engine::{evaluate, run_experiment, Evaluation, Experiment, ServerState};
pub use local::{epoch_order, local_train, ClientStats};

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::ClientShard;
use crate::error::{config_err, Result};
use crate::model::ModelConfig;
use crate::objectives::{Algo, MoonConfig};
use crate::tensor::Precision;

/// How training data is split across clients.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Partition {
    /// Random near-equal split.
    Ds1 {
        #[serde(default = "default_clients")]
        clients: usize,
    },
    /// One client per group tag.
    Ds2,
    /// Shards supplied by the caller.
    Precomputed { shards: Vec<ClientShard> },
}

impl Partition {
    pub fn label(&self) -> &'static str {
        match self {
            Partition::Ds1 { .. } => "ds1",
            Partition::Ds2 => "ds2",
            Partition::Precomputed { .. } => "precomputed",
        }
    }
}

fn default_clients() -> usize {
    7
}
fn default_rounds() -> usize {
    30
}
fn default_epochs() -> usize {
    3
}
fn default_lr() -> f64 {
    0.001
}
fn default_batch() -> usize {
    128
}
fn default_threshold() -> f64 {
    0.5
}
fn default_eval_batch() -> usize {
    256
}

/// Everything that defines one simulated run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub algo: Algo,
    pub model: ModelConfig,
    pub partition: Partition,
    #[serde(default = "default_rounds")]
    pub rounds: usize,
    #[serde(default = "default_epochs")]
    pub local_epochs: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    /// Clamped to each shard's size.
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub moon: MoonConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub precision: Precision,
    /// Sigmoid probability at or above which a class is predicted.
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    /// Aggregation weights; defaults to shard sizes over the total.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    /// Samples per forward pass during evaluation.
    #[serde(default = "default_eval_batch")]
    pub eval_batch: usize,
}

impl ExperimentConfig {
    /// A config with the default hyperparameters.
    pub fn new(algo: Algo, model: ModelConfig, partition: Partition) -> Self {
        Self {
            algo,
            model,
            partition,
            rounds: default_rounds(),
            local_epochs: default_epochs(),
            lr: default_lr(),
            batch_size: default_batch(),
            moon: MoonConfig::default(),
            seed: 0,
            precision: Precision::default(),
            threshold: default_threshold(),
            weights: None,
            eval_batch: default_eval_batch(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 || self.local_epochs == 0 {
            return Err(config_err!("rounds and local_epochs must be at least 1"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(config_err!("lr must be positive, got {}", self.lr));
        }
        if self.batch_size == 0 || self.eval_batch == 0 {
            return Err(config_err!("batch sizes must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(config_err!("threshold must lie in [0, 1], got {}", self.threshold));
        }
        if let Partition::Ds1 { clients: 0 } = self.partition {
            return Err(config_err!("ds1 needs at least one client"));
        }
        self.moon.validate()?;
        self.model.validate()
    }
}

/// Source of wall-clock time for per-client timings.
pub trait Clock: Sync {
    fn now_seconds(&self) -> f64;
}

/// A clock that always reads zero.
#[derive(Clone, Copy, Debug, Default)]
pub struct NullClock;

impl Clock for NullClock {
    fn now_seconds(&self) -> f64 {
        0.0
    }
}

/// What a client sends back after local training.
#[derive(Clone, Debug)]
pub struct ClientUpdate {
    pub params: crate::model::ParamSet,
    pub stats: ClientStats,
}

pub type ClientJob<'a> = dyn Fn(usize) -> Result<ClientUpdate> + Sync + 'a;

/// Runs the per-client jobs of one round. Results come back in client
/// order whatever the schedule.
pub trait ClientExecutor {
    fn run_clients(&self, clients: usize, job: &ClientJob<'_>) -> Vec<Result<ClientUpdate>>;
}

/// Runs clients one after another on the calling thread.
#[derive(Clone, Copy, Debug, Default)]
pub struct Sequential;

impl ClientExecutor for Sequential {
    fn run_clients(&self, clients: usize, job: &ClientJob<'_>) -> Vec<Result<ClientUpdate>> {
        (0..clients).map(job).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClientRecord {
    pub client_id: usize,
    /// Shard size `M^i`.
    pub samples: usize,
    pub weight: f64,
    /// Mean local objective over the last local epoch.
    pub train_loss: f64,
    /// Mean contrastive term over the last local epoch (MOON only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contrastive_loss: Option<f64>,
    pub wall_seconds: f64,
    pub samples_seen: usize,
    pub steps: usize,
}

/// Log line for one communication round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub algo: Algo,
    pub arch: crate::model::Arch,
    pub scenario: String,
    pub seed: u64,
    pub clients: Vec<ClientRecord>,
    pub micro_f1: f64,
    pub macro_f1: f64,
    pub test_bce: f64,
    pub shared_params: usize,
    /// Downlink plus uplink: `2 · K · shared_params · bytes_per_value`.
    pub bytes: usize,
}

/// Bytes moved in one round by `clients` clients.
pub fn round_bytes(clients: usize, shared_params: usize, precision: Precision) -> usize {
    2 * clients * shared_params * precision.bytes_per_value()
}

#[cfg(test)]
mod tests;
