//! Round-based simulation of a fully connected peer-to-peer network.
//!
//! Time advances in synchronous rounds. In each round every client that
//! has not early-stopped sends its current model once, in a shuffled
//! order, and the receiver handles it before the next send.

mod regimes;
mod sampler;
mod schedule;

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::data::{DatasetKind, PartitionConfig, Rotation, SyntheticSpec};
use crate::error::{Error, Result};
use crate::nn::ModelSpec;
use crate::protocol::ProtocolParams;

pub use regimes::{initial_params, run, run_central, run_local, run_oracle, run_pens, run_random};
pub use sampler::{
    peer_sampler_neighbors, peer_sampler_oracle, peer_sampler_uniform, NeighborSampler, OracleSampler, PeerSampler,
    UniformSampler,
};
pub use schedule::{early_stop_check, run_round, CountMatrix, Handler, MIN_IMPROVEMENT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Pens,
    Random,
    Local,
    Oracle,
    Central,
}

impl Regime {
    pub const ALL: [Regime; 5] = [Regime::Pens, Regime::Random, Regime::Local, Regime::Oracle, Regime::Central];

    pub fn name(self) -> &'static str {
        match self {
            Regime::Pens => "pens",
            Regime::Random => "random",
            Regime::Local => "local",
            Regime::Oracle => "oracle",
            Regime::Central => "central",
        }
    }
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitMode {
    /// Every client draws its own initial weights.
    Independent,
    /// All clients start from the same weights.
    Common,
}

/// Every experiment knob.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub dataset: DatasetKind,
    pub model: ModelSpec,
    pub k: usize,
    pub rotations: Vec<Rotation>,
    pub n_train_per_client: usize,
    pub n_val_per_client: usize,
    pub protocol: ProtocolParams,
    pub init_mode: InitMode,
    pub regime: Regime,
    pub seeds: Vec<u64>,
    pub early_stopping_patience: usize,
    /// Seed of the data partition, shared by all run seeds.
    pub partition_seed: u64,
    pub synthetic: SyntheticSpec,
}

impl SimConfig {
    pub fn partition_config(&self) -> PartitionConfig {
        PartitionConfig {
            k: self.k,
            rotations: self.rotations.clone(),
            n_train_per_client: self.n_train_per_client,
            n_val_per_client: self.n_val_per_client,
            seed: self.partition_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.protocol.validate()?;
        self.partition_config().validate()?;
        if self.k < 2 {
            return Err(Error::TooFewClients { min: 2, k: self.k });
        }
        if self.seeds.is_empty() {
            return Err(Error::InvalidConfig("at least one seed required".into()));
        }
        if self.regime == Regime::Oracle && self.k / self.rotations.len() < 2 {
            return Err(Error::InvalidConfig("oracle needs at least two clients per rotation".into()));
        }
        let expected = self.dataset.input_shape(&self.synthetic);
        if self.model.input_shape != expected {
            return Err(Error::shape(
                "model input",
                format!("{expected:?}"),
                format!("{:?}", self.model.input_shape),
            ));
        }
        Ok(())
    }
}

/// Outcome of one seed of one regime.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub regime: Regime,
    pub seed: u64,
    /// Ground-truth rotation per client, for metrics only.
    pub rotations: Vec<Rotation>,
    /// Test accuracy of each client on its own rotation's test set.
    pub accuracies: Vec<f64>,
    /// Selected neighbors per client (empty outside the PENS regime).
    pub neighbor_lists: Vec<Vec<usize>>,
    /// `counts[i][j]`: models client `j` received from client `i` during
    /// gossip (step 2 for PENS).
    pub counts: Vec<Vec<u64>>,
    /// Gossip rounds (or training iterations for Local/Central) executed.
    pub rounds: usize,
    /// Round or iteration at which each client early-stopped.
    pub stopped_at: Vec<Option<usize>>,
    #[serde(skip)]
    pub wall_time: Duration,
}

impl RunResult {
    pub fn mean_accuracy(&self) -> f64 {
        self.accuracies.iter().sum::<f64>() / self.accuracies.len().max(1) as f64
    }
}
