use std::sync::Arc;
use std::time::Instant;

use super::sampler::{NeighborSampler, OracleSampler, PeerSampler, UniformSampler};
use super::schedule::{early_stop_check, run_round, CountMatrix, Handler};
use super::{InitMode, Regime, RunResult, SimConfig};
use crate::data::{Dataset, Partition, Rotation};
use crate::error::{Error, Result};
use crate::nn::{evaluate, init_model, train_local, ModelSpec, ParamVector};
use crate::protocol::{ClientState, ProtocolParams};
use crate::rng::{derive_seed, stream, Purpose, GLOBAL_ENTITY};

/// Initial weights of every client for `seed`.
pub fn initial_params(config: &SimConfig, seed: u64) -> Vec<ParamVector> {
    (0..config.k)
        .map(|id| {
            let entity = match config.init_mode {
                InitMode::Common => GLOBAL_ENTITY,
                InitMode::Independent => id as u64,
            };
            init_model(&config.model, derive_seed(seed, entity, Purpose::Init))
        })
        .collect()
}

/// Runs `config.regime` for one seed on prepared client data.
pub fn run(config: &SimConfig, data: &Partition, seed: u64) -> Result<RunResult> {
    match config.regime {
        Regime::Pens => run_pens(config, data, seed),
        Regime::Random => run_random(config, data, seed),
        Regime::Local => run_local(config, data, seed),
        Regime::Oracle => run_oracle(config, data, seed),
        Regime::Central => run_central(config, data, seed),
    }
}

fn check_data(config: &SimConfig, data: &Partition) -> Result<()> {
    config.validate()?;
    if data.clients.len() != config.k {
        return Err(Error::InvalidConfig(format!(
            "prepared data has {} clients, config expects {}",
            data.clients.len(),
            config.k
        )));
    }
    for (id, c) in data.clients.iter().enumerate() {
        if c.client_id != id || !config.rotations.contains(&c.rotation) {
            return Err(Error::InvalidConfig(format!(
                "prepared client {} (rotation {}) does not match the configuration",
                c.client_id, c.rotation
            )));
        }
        if c.train.shape() != config.model.input_shape {
            return Err(Error::shape(
                "client shard",
                format!("{:?}", config.model.input_shape),
                format!("{:?}", c.train.shape()),
            ));
        }
    }
    Ok(())
}

struct Network<'a> {
    spec: &'a ModelSpec,
    pp: &'a ProtocolParams,
    patience: usize,
    seed: u64,
    clients: Vec<ClientState>,
    rotations: Vec<Rotation>,
    tests: Vec<Arc<Dataset>>,
}

struct GossipOutcome {
    counts: CountMatrix,
    rounds: usize,
    stopped_at: Vec<Option<usize>>,
}

impl<'a> Network<'a> {
    fn new(config: &'a SimConfig, data: &Partition, seed: u64) -> Result<Self> {
        check_data(config, data)?;
        let clients = initial_params(config, seed)
            .into_iter()
            .zip(&data.clients)
            .map(|(params, shards)| {
                let id = shards.client_id;
                ClientState::new(
                    id,
                    params,
                    shards.train.clone(),
                    shards.val.clone(),
                    stream(seed, id as u64, Purpose::Warmup),
                )
            })
            .collect();
        Ok(Network {
            spec: &config.model,
            pp: &config.protocol,
            patience: config.early_stopping_patience,
            seed,
            clients,
            rotations: data.clients.iter().map(|c| c.rotation).collect(),
            tests: data.clients.iter().map(|c| Arc::clone(&c.test)).collect(),
        })
    }

    fn k(&self) -> usize {
        self.clients.len()
    }

    /// Every client trains E epochs on its own data before the first send.
    fn warm_up(&mut self) -> Result<()> {
        let settings = self.pp.train_settings();
        for c in &mut self.clients {
            c.train(self.spec, settings)?;
        }
        Ok(())
    }

    fn begin_phase(&mut self, purpose: Purpose) {
        let seed = self.seed;
        for c in &mut self.clients {
            let rng = stream(seed, c.id() as u64, purpose);
            c.begin_phase(rng);
        }
    }

    /// Neighbor discovery: `t_step1` rounds of loss-scored top-m merging
    /// with uniform peer sampling, then neighbor selection on every client.
    fn discover_neighbors(&mut self) -> Result<Vec<Vec<usize>>> {
        self.begin_phase(Purpose::Step1);
        let k = self.k();
        let mut sched = stream(self.seed, GLOBAL_ENTITY, Purpose::Step1);
        let sending = vec![true; k];
        let mut counts = CountMatrix::new(k);
        let sampler = UniformSampler { k };
        for _ in 0..self.pp.t_step1 {
            run_round(
                self.spec,
                self.pp,
                &mut self.clients,
                &sampler,
                Handler::Pens,
                &sending,
                &mut counts,
                &mut sched,
            )?;
        }
        self.clients
            .iter_mut()
            .map(|c| c.select_neighbors(k).map(<[usize]>::to_vec))
            .collect()
    }

    /// Gossip with early stopping on each client's validation loss after
    /// every merge. Stopped clients keep receiving but no longer send.
    fn gossip(&mut self, sampler: &dyn PeerSampler) -> Result<GossipOutcome> {
        self.begin_phase(Purpose::Gossip);
        let k = self.k();
        let mut sched = stream(self.seed, GLOBAL_ENTITY, Purpose::Gossip);
        let mut sending = vec![true; k];
        let mut histories = vec![Vec::new(); k];
        let mut stopped_at = vec![None; k];
        let mut counts = CountMatrix::new(k);
        let mut rounds = 0;
        for round in 0..self.pp.t_gossip {
            if !sending.iter().any(|&s| s) {
                break;
            }
            let merged = run_round(
                self.spec,
                self.pp,
                &mut self.clients,
                sampler,
                Handler::Gossip,
                &sending,
                &mut counts,
                &mut sched,
            )?;
            rounds = round + 1;
            for j in merged {
                let c = &self.clients[j];
                let loss = evaluate(self.spec, c.params(), c.val_shard())?.mean_loss;
                histories[j].push(loss);
                if sending[j] && early_stop_check(&histories[j], self.patience) {
                    sending[j] = false;
                    stopped_at[j] = Some(rounds);
                }
            }
        }
        Ok(GossipOutcome {
            counts,
            rounds,
            stopped_at,
        })
    }

    fn test_accuracies(&self) -> Result<Vec<f64>> {
        self.clients
            .iter()
            .zip(&self.tests)
            .map(|(c, test)| Ok(evaluate(self.spec, c.params(), test)?.accuracy))
            .collect()
    }

    fn finish(
        self,
        regime: Regime,
        neighbor_lists: Vec<Vec<usize>>,
        outcome: GossipOutcome,
        started: Instant,
    ) -> Result<RunResult> {
        Ok(RunResult {
            regime,
            seed: self.seed,
            accuracies: self.test_accuracies()?,
            rotations: self.rotations,
            neighbor_lists,
            counts: outcome.counts.rows(),
            rounds: outcome.rounds,
            stopped_at: outcome.stopped_at,
            wall_time: started.elapsed(),
        })
    }
}

/// Step 1 neighbor discovery followed by gossip restricted to the selected
/// neighbors (uniform fallback for clients that selected nobody).
pub fn run_pens(config: &SimConfig, data: &Partition, seed: u64) -> Result<RunResult> {
    let started = Instant::now();
    let mut net = Network::new(config, data, seed)?;
    net.warm_up()?;
    let neighbor_lists = net.discover_neighbors()?;
    let outcome = net.gossip(&NeighborSampler {
        neighbor_lists: &neighbor_lists,
    })?;
    net.finish(Regime::Pens, neighbor_lists, outcome, started)
}

pub fn run_random(config: &SimConfig, data: &Partition, seed: u64) -> Result<RunResult> {
    let started = Instant::now();
    let mut net = Network::new(config, data, seed)?;
    net.warm_up()?;
    let outcome = net.gossip(&UniformSampler { k: net.k() })?;
    let k = net.k();
    net.finish(Regime::Random, vec![Vec::new(); k], outcome, started)
}

pub fn run_oracle(config: &SimConfig, data: &Partition, seed: u64) -> Result<RunResult> {
    let started = Instant::now();
    let mut net = Network::new(config, data, seed)?;
    net.warm_up()?;
    let rotations = net.rotations.clone();
    let outcome = net.gossip(&OracleSampler { rotations: &rotations })?;
    let k = net.k();
    net.finish(Regime::Oracle, vec![Vec::new(); k], outcome, started)
}

/// Trains `params` on `train` in E-epoch iterations until early stopping
/// on `val` or `max_iters`. Returns final params, iterations and stop point.
fn train_until_stopped(
    config: &SimConfig,
    mut params: ParamVector,
    train: &Dataset,
    val: &Dataset,
    rng: &mut crate::rng::StreamRng,
) -> Result<(ParamVector, usize, Option<usize>)> {
    let settings = config.protocol.train_settings();
    let mut history = Vec::new();
    for iter in 1..=config.protocol.t_gossip {
        params = train_local(&config.model, &params, train, settings, rng)?;
        history.push(evaluate(&config.model, &params, val)?.mean_loss);
        if early_stop_check(&history, config.early_stopping_patience) {
            return Ok((params, iter, Some(iter)));
        }
    }
    Ok((params, config.protocol.t_gossip, None))
}

/// Every client trains alone on its own shard; no messages are exchanged.
pub fn run_local(config: &SimConfig, data: &Partition, seed: u64) -> Result<RunResult> {
    let started = Instant::now();
    check_data(config, data)?;
    let k = config.k;
    let mut accuracies = Vec::with_capacity(k);
    let mut stopped_at = Vec::with_capacity(k);
    let mut rounds = 0;
    for (shards, init) in data.clients.iter().zip(initial_params(config, seed)) {
        let mut rng = stream(seed, shards.client_id as u64, Purpose::Local);
        let (params, iters, stop) = train_until_stopped(config, init, &shards.train, &shards.val, &mut rng)?;
        rounds = rounds.max(iters);
        stopped_at.push(stop);
        accuracies.push(evaluate(&config.model, &params, &shards.test)?.accuracy);
    }
    Ok(RunResult {
        regime: Regime::Local,
        seed,
        rotations: data.clients.iter().map(|c| c.rotation).collect(),
        accuracies,
        neighbor_lists: vec![Vec::new(); k],
        counts: CountMatrix::new(k).rows(),
        rounds,
        stopped_at,
        wall_time: started.elapsed(),
    })
}

/// One model trained on the union of all client shards (every rotation),
/// early-stopped on the pooled validation data and tested per rotation.
pub fn run_central(config: &SimConfig, data: &Partition, seed: u64) -> Result<RunResult> {
    let started = Instant::now();
    check_data(config, data)?;
    let k = config.k;
    let train = Dataset::concat("central-train", data.clients.iter().map(|c| &c.train))?;
    let val = Dataset::concat("central-val", data.clients.iter().map(|c| &c.val))?;
    let init = init_model(&config.model, derive_seed(seed, GLOBAL_ENTITY, Purpose::Init));
    let mut rng = stream(seed, GLOBAL_ENTITY, Purpose::Central);
    let (params, iters, stop) = train_until_stopped(config, init, &train, &val, &mut rng)?;
    let mut per_rotation = std::collections::BTreeMap::new();
    for (rotation, test) in &data.test_sets {
        per_rotation.insert(*rotation, evaluate(&config.model, &params, test)?.accuracy);
    }
    Ok(RunResult {
        regime: Regime::Central,
        seed,
        rotations: data.clients.iter().map(|c| c.rotation).collect(),
        accuracies: data.clients.iter().map(|c| per_rotation[&c.rotation]).collect(),
        neighbor_lists: vec![Vec::new(); k],
        counts: CountMatrix::new(k).rows(),
        rounds: iters,
        stopped_at: vec![stop; k],
        wall_time: started.elapsed(),
    })
}
