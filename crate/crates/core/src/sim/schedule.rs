use rand::seq::SliceRandom;

use super::sampler::PeerSampler;
use crate::error::{Error, Result};
use crate::nn::ModelSpec;
use crate::protocol::{ClientState, ProtocolParams};
use crate::rng::StreamRng;

/// Minimum absolute decrease of the best validation loss that counts as
/// an improvement.
pub const MIN_IMPROVEMENT: f64 = 1e-4;

/// Message handler applied by the receiver.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Handler {
    Gossip,
    Pens,
}

/// `k x k` matrix; `get(i, j)` counts models client `j` received from client `i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl CountMatrix {
    pub fn new(k: usize) -> Self {
        CountMatrix {
            k,
            counts: vec![0; k * k],
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn get(&self, sender: usize, receiver: usize) -> u64 {
        self.counts[sender * self.k + receiver]
    }

    pub fn record(&mut self, sender: usize, receiver: usize) {
        self.counts[sender * self.k + receiver] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts.chunks(self.k).map(<[u64]>::to_vec).collect()
    }
}

/// One synchronous round: every active client, in a shuffled order, sends
/// its current params to a sampled peer, which handles the message
/// immediately. Returns the receivers that merged, in event order.
#[allow(clippy::too_many_arguments)]
pub fn run_round<S: PeerSampler + ?Sized>(
    spec: &ModelSpec,
    pp: &ProtocolParams,
    clients: &mut [ClientState],
    sampler: &S,
    handler: Handler,
    sending: &[bool],
    counts: &mut CountMatrix,
    rng: &mut StreamRng,
) -> Result<Vec<usize>> {
    let k = clients.len();
    if k < 2 {
        return Err(Error::TooFewClients { min: 2, k });
    }
    let mut order: Vec<usize> = (0..k).collect();
    order.shuffle(rng);
    let mut merged = Vec::new();
    for i in order {
        if !sending[i] {
            continue;
        }
        let j = sampler.sample(i, rng)?;
        if j == i || j >= k {
            return Err(Error::InvalidPeer { client: i, peer: j });
        }
        let w = clients[i].params().clone();
        counts.record(i, j);
        let did_merge = match handler {
            Handler::Gossip => clients[j].on_receive_gossip(spec, i, w, pp)?,
            Handler::Pens => clients[j].on_receive_pens(spec, i, w, pp)?,
        };
        if did_merge {
            merged.push(j);
        }
    }
    Ok(merged)
}

/// True once the best loss in `history` has gone `patience` consecutive
/// evaluations without improving by more than [`MIN_IMPROVEMENT`].
/// A patience of zero disables early stopping.
pub fn early_stop_check(history: &[f64], patience: usize) -> bool {
    if patience == 0 {
        return false;
    }
    let mut best = f64::INFINITY;
    let mut stale = 0;
    for &loss in history {
        if loss < best - MIN_IMPROVEMENT {
            best = loss;
            stale = 0;
        } else {
            stale += 1;
        }
    }
    stale >= patience
}
