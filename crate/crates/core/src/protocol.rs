//! Per-client protocol handlers for random gossip and performance-based
//! neighbor selection.
//!
//! A [`ClientState`] knows its own data and models but not which input
//! distribution it was drawn from; the simulator keeps rotations in a
//! separate table that only the oracle sampler and metrics read.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{average_models, evaluate, train_local, ModelSpec, ParamVector, TrainSettings};
use crate::rng::StreamRng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProtocolParams {
    /// Received models needed before a gossip merge.
    pub n_peers: usize,
    /// Received models needed before a neighbor-selection merge.
    pub n_sampled: usize,
    /// Lowest-loss models merged per neighbor-selection event.
    pub m: usize,
    pub t_step1: usize,
    pub t_gossip: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
}

impl Default for ProtocolParams {
    fn default() -> Self {
        ProtocolParams {
            n_peers: 20,
            n_sampled: 10,
            m: 2,
            t_step1: 200,
            t_gossip: 333,
            epochs: 1,
            batch_size: 8,
            lr: 1e-3,
        }
    }
}

impl ProtocolParams {
    pub fn train_settings(&self) -> TrainSettings {
        TrainSettings {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_peers == 0 || self.n_sampled == 0 || self.m == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig(
                "n_peers, n_sampled, m and batch_size must be positive".into(),
            ));
        }
        if self.m > self.n_sampled {
            return Err(Error::InvalidConfig(format!(
                "m ({}) must not exceed n_sampled ({})",
                self.m, self.n_sampled
            )));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::InvalidConfig(format!("lr must be positive, got {}", self.lr)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Received {
    sender: usize,
    model: ParamVector,
    loss: Option<f64>,
}

/// One peer's protocol state.
#[derive(Debug, Clone)]
pub struct ClientState {
    id: usize,
    params: ParamVector,
    train: Dataset,
    val: Dataset,
    buffer: Vec<Received>,
    selection_counts: BTreeMap<usize, u64>,
    neighbor_list: Vec<usize>,
    merge_events: usize,
    rng: StreamRng,
}

impl ClientState {
    pub fn new(id: usize, params: ParamVector, train: Dataset, val: Dataset, rng: StreamRng) -> Self {
        ClientState {
            id,
            params,
            train,
            val,
            buffer: Vec::new(),
            selection_counts: BTreeMap::new(),
            neighbor_list: Vec::new(),
            merge_events: 0,
            rng,
        }
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn train_shard(&self) -> &Dataset {
        &self.train
    }

    pub fn val_shard(&self) -> &Dataset {
        &self.val
    }

    pub fn buffer_len(&self) -> usize {
        self.buffer.len()
    }

    /// Losses saved for the models currently buffered, in arrival order.
    pub fn buffered_losses(&self) -> Vec<(usize, Option<f64>)> {
        self.buffer.iter().map(|r| (r.sender, r.loss)).collect()
    }

    pub fn selection_counts(&self) -> &BTreeMap<usize, u64> {
        &self.selection_counts
    }

    pub fn neighbor_list(&self) -> &[usize] {
        &self.neighbor_list
    }

    /// Completed merges since construction.
    pub fn merge_events(&self) -> usize {
        self.merge_events
    }

    /// Starts a new phase: fresh RNG stream and an empty buffer.
    pub fn begin_phase(&mut self, rng: StreamRng) {
        self.rng = rng;
        self.buffer.clear();
    }

    pub fn set_params(&mut self, params: ParamVector) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::shape("client params", self.params.len(), params.len()));
        }
        self.params = params;
        Ok(())
    }

    /// Trains the current params on the own training shard.
    pub fn train(&mut self, spec: &ModelSpec, settings: TrainSettings) -> Result<()> {
        self.params = train_local(spec, &self.params, &self.train, settings, &mut self.rng)?;
        Ok(())
    }

    fn check_incoming(&self, w: &ParamVector) -> Result<()> {
        if w.len() != self.params.len() {
            return Err(Error::shape("received model", self.params.len(), w.len()));
        }
        Ok(())
    }

    fn merge_and_train<'a>(
        &mut self,
        spec: &ModelSpec,
        models: impl IntoIterator<Item = &'a ParamVector>,
        pp: &ProtocolParams,
    ) -> Result<()> {
        let mut all: Vec<&ParamVector> = models.into_iter().collect();
        all.push(&self.params);
        let merged = average_models(all)?;
        self.params = train_local(spec, &merged, &self.train, pp.train_settings(), &mut self.rng)?;
        self.merge_events += 1;
        Ok(())
    }

    /// Gossip receive: buffer `w`; once `n_peers` models are buffered,
    /// average them with the own model, clear the buffer and train.
    /// Returns whether a merge happened.
    pub fn on_receive_gossip(
        &mut self,
        spec: &ModelSpec,
        sender: usize,
        w: ParamVector,
        pp: &ProtocolParams,
    ) -> Result<bool> {
        self.check_incoming(&w)?;
        self.buffer.push(Received {
            sender,
            model: w,
            loss: None,
        });
        if self.buffer.len() < pp.n_peers {
            return Ok(false);
        }
        let buffer = std::mem::take(&mut self.buffer);
        self.merge_and_train(spec, buffer.iter().map(|r| &r.model), pp)?;
        Ok(true)
    }

    /// Neighbor-selection receive: score `w` on the own training shard and
    /// buffer it; once `n_sampled` models are buffered, merge the `m`
    /// lowest-loss ones (ties to the lower sender id) with the own model,
    /// count those senders as selected, train and reset the buffer.
    pub fn on_receive_pens(
        &mut self,
        spec: &ModelSpec,
        sender: usize,
        w: ParamVector,
        pp: &ProtocolParams,
    ) -> Result<bool> {
        self.check_incoming(&w)?;
        let loss = self.evaluate_model_loss(spec, &w)?;
        self.buffer.push(Received {
            sender,
            model: w,
            loss: Some(loss),
        });
        if self.buffer.len() < pp.n_sampled {
            return Ok(false);
        }
        let mut buffer = std::mem::take(&mut self.buffer);
        buffer.sort_by(|a, b| {
            let la = a.loss.unwrap_or(f64::INFINITY);
            let lb = b.loss.unwrap_or(f64::INFINITY);
            la.total_cmp(&lb).then(a.sender.cmp(&b.sender))
        });
        buffer.truncate(pp.m);
        for r in &buffer {
            if r.sender != self.id {
                *self.selection_counts.entry(r.sender).or_insert(0) += 1;
            }
        }
        self.merge_and_train(spec, buffer.iter().map(|r| &r.model), pp)?;
        Ok(true)
    }

    /// Mean loss of `w` over the full own training shard.
    pub fn evaluate_model_loss(&self, spec: &ModelSpec, w: &ParamVector) -> Result<f64> {
        Ok(evaluate(spec, w, &self.train)?.mean_loss)
    }

    /// Keeps every peer selected strictly more often than uniform sampling
    /// would predict.
    pub fn select_neighbors(&mut self, k: usize) -> Result<&[usize]> {
        self.neighbor_list = neighbors_from_counts(&self.selection_counts, k)?;
        Ok(&self.neighbor_list)
    }
}

/// Expected selections per peer if every selection had landed uniformly
/// on one of the `k - 1` other clients.
pub fn expected_selection_count(total_selections: u64, k: usize) -> Result<f64> {
    if k < 2 {
        return Err(Error::TooFewClients { min: 2, k });
    }
    Ok(total_selections as f64 / (k - 1) as f64)
}

/// Peers whose count is strictly above the uniform expectation, ascending.
pub fn neighbors_from_counts(counts: &BTreeMap<usize, u64>, k: usize) -> Result<Vec<usize>> {
    let total = counts.values().sum();
    let expected = expected_selection_count(total, k)?;
    Ok(counts
        .iter()
        .filter(|&(_, &c)| c as f64 > expected)
        .map(|(&peer, _)| peer)
        .collect())
}
