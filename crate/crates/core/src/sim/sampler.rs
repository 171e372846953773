use rand::Rng;

use crate::data::Rotation;
use crate::error::{Error, Result};
use crate::rng::StreamRng;

/// Chooses the receiver of client `i`'s next message.
pub trait PeerSampler {
    fn sample(&self, i: usize, rng: &mut StreamRng) -> Result<usize>;
}

/// Uniform over every id in `0..k` except `i`.
pub fn peer_sampler_uniform<R: Rng + ?Sized>(i: usize, k: usize, rng: &mut R) -> Result<usize> {
    if k < 2 {
        return Err(Error::TooFewClients { min: 2, k });
    }
    let j = rng.random_range(0..k - 1);
    Ok(if j >= i { j + 1 } else { j })
}

/// Uniform over the other clients that share `i`'s rotation.
pub fn peer_sampler_oracle<R: Rng + ?Sized>(i: usize, rotations: &[Rotation], rng: &mut R) -> Result<usize> {
    let own = rotations[i];
    let group: Vec<usize> = (0..rotations.len())
        .filter(|&j| j != i && rotations[j] == own)
        .collect();
    if group.is_empty() {
        return Err(Error::NoSameRotationPeer(i));
    }
    Ok(group[rng.random_range(0..group.len())])
}

/// Uniform over `neighbors`; an empty list falls back to uniform over all peers.
pub fn peer_sampler_neighbors<R: Rng + ?Sized>(i: usize, neighbors: &[usize], k: usize, rng: &mut R) -> Result<usize> {
    if neighbors.is_empty() {
        return peer_sampler_uniform(i, k, rng);
    }
    Ok(neighbors[rng.random_range(0..neighbors.len())])
}

pub struct UniformSampler {
    pub k: usize,
}

impl PeerSampler for UniformSampler {
    fn sample(&self, i: usize, rng: &mut StreamRng) -> Result<usize> {
        peer_sampler_uniform(i, self.k, rng)
    }
}

pub struct OracleSampler<'a> {
    pub rotations: &'a [Rotation],
}

impl PeerSampler for OracleSampler<'_> {
    fn sample(&self, i: usize, rng: &mut StreamRng) -> Result<usize> {
        peer_sampler_oracle(i, self.rotations, rng)
    }
}

pub struct NeighborSampler<'a> {
    pub neighbor_lists: &'a [Vec<usize>],
}

impl PeerSampler for NeighborSampler<'_> {
    fn sample(&self, i: usize, rng: &mut StreamRng) -> Result<usize> {
        peer_sampler_neighbors(i, &self.neighbor_lists[i], self.neighbor_lists.len(), rng)
    }
}
