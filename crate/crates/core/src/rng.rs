//! Seed derivation for independent, reproducible random streams.
//!
//! Every stream is keyed by `(master_seed, entity, purpose)` so that adding
//! clients or phases never shifts the draws of an unrelated stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Stream purposes. The discriminants are part of the reproducibility
/// contract and must not be renumbered.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Init = 1,
    Step1 = 2,
    Gossip = 3,
    Local = 4,
    Central = 5,
    Schedule = 6,
    Partition = 7,
    Synthetic = 8,
    Warmup = 9,
}

/// Scheduler and other non-client streams use this entity id.
pub const GLOBAL_ENTITY: u64 = u64::MAX;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(master_seed: u64, entity: u64, purpose: Purpose) -> u64 {
    let mut h = splitmix64(master_seed);
    h = splitmix64(h ^ entity);
    splitmix64(h ^ purpose as u64)
}

pub fn stream(master_seed: u64, entity: u64, purpose: Purpose) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(master_seed, entity, purpose))
}
