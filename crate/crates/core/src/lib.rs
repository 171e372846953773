//! Decentralized federated learning on non-iid data: a from-scratch
//! training core, rotation-shifted datasets, gossip and performance-based
//! neighbor selection protocols, a deterministic round-based simulator
//! and evaluation metrics.

pub mod data;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod protocol;
pub mod rng;
pub mod sim;

pub use data::{ClientShards, Dataset, DatasetKind, Partition, PartitionConfig, Rotation, SyntheticSpec};
pub use error::{Error, Result};
pub use nn::{ModelKind, ModelSpec, ParamVector};
pub use protocol::{ClientState, ProtocolParams};
pub use sim::{InitMode, Regime, RunResult, SimConfig};
