use std::collections::BTreeMap;
use std::sync::Arc;

use rand::seq::SliceRandom;

use super::{Dataset, Rotation};
use crate::error::{Error, Result};
use crate::rng::{stream, Purpose, GLOBAL_ENTITY};

#[derive(Debug, Clone, PartialEq)]
pub struct PartitionConfig {
    pub k: usize,
    pub rotations: Vec<Rotation>,
    pub n_train_per_client: usize,
    pub n_val_per_client: usize,
    pub seed: u64,
}

impl PartitionConfig {
    pub fn clients_per_rotation(&self) -> usize {
        self.k / self.rotations.len().max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rotations.is_empty() {
            return Err(Error::InvalidConfig("at least one rotation required".into()));
        }
        let mut sorted = self.rotations.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != self.rotations.len() {
            return Err(Error::InvalidConfig("rotations must be distinct".into()));
        }
        if self.k == 0 || !self.k.is_multiple_of(self.rotations.len()) {
            return Err(Error::NotDivisible {
                k: self.k,
                rotations: self.rotations.len(),
            });
        }
        if self.n_train_per_client == 0 || self.n_val_per_client == 0 {
            return Err(Error::InvalidConfig("per-client train and validation sizes must be positive".into()));
        }
        Ok(())
    }
}

/// Private data of one client. `test` is the pooled test set of the
/// client's rotation, shared by every client of that rotation.
#[derive(Debug, Clone)]
pub struct ClientShards {
    pub client_id: usize,
    pub rotation: Rotation,
    pub train: Dataset,
    pub val: Dataset,
    pub test: Arc<Dataset>,
}

#[derive(Debug, Clone)]
pub struct Partition {
    pub clients: Vec<ClientShards>,
    pub test_sets: BTreeMap<Rotation, Arc<Dataset>>,
}

fn shuffled_blocks(n: usize, blocks: usize, seed: u64, salt: u64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream(seed, GLOBAL_ENTITY - salt, Purpose::Partition));
    let per = n / blocks;
    order.chunks_exact(per.max(1)).take(blocks).map(<[usize]>::to_vec).collect()
}

/// Splits train and test sets into one equal random partition per
/// rotation, rotates each partition, and assigns clients to rotations in
/// contiguous id blocks. Each client draws disjoint train and validation
/// samples without replacement from its rotation's partition.
pub fn partition(train_set: &Dataset, test_set: &Dataset, cfg: &PartitionConfig) -> Result<Partition> {
    cfg.validate()?;
    let groups = cfg.rotations.len();
    let per_client = cfg.n_train_per_client + cfg.n_val_per_client;
    let needed = cfg.clients_per_rotation() * per_client;
    let available = train_set.len() / groups;
    if needed > available {
        return Err(Error::InsufficientSamples { needed, available });
    }
    if test_set.len() < groups {
        return Err(Error::InsufficientSamples {
            needed: groups,
            available: test_set.len(),
        });
    }

    let train_blocks = shuffled_blocks(train_set.len(), groups, cfg.seed, 0);
    let test_blocks = shuffled_blocks(test_set.len(), groups, cfg.seed, 1);

    let mut test_sets = BTreeMap::new();
    for (&rotation, block) in cfg.rotations.iter().zip(&test_blocks) {
        let name = format!("{}-test-r{}", test_set.name(), rotation);
        test_sets.insert(rotation, Arc::new(test_set.select(name, block, rotation)?));
    }

    let mut clients = Vec::with_capacity(cfg.k);
    for (group, (&rotation, block)) in cfg.rotations.iter().zip(&train_blocks).enumerate() {
        for slot in 0..cfg.clients_per_rotation() {
            let client_id = group * cfg.clients_per_rotation() + slot;
            let draw = &block[slot * per_client..(slot + 1) * per_client];
            let (train_pos, val_pos) = draw.split_at(cfg.n_train_per_client);
            clients.push(ClientShards {
                client_id,
                rotation,
                train: train_set.select(format!("client{client_id}-train"), train_pos, rotation)?,
                val: train_set.select(format!("client{client_id}-val"), val_pos, rotation)?,
                test: Arc::clone(&test_sets[&rotation]),
            });
        }
    }
    Ok(Partition { clients, test_sets })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn labeled(n: usize) -> Dataset {
        let images = (0..n * 4).map(|i| (i % 5) as f64 / 4.0).collect();
        Dataset::new("d", [1, 2, 2], images, (0..n).map(|i| i % 10).collect()).unwrap()
    }

    fn cfg(k: usize, rotations: &[Rotation]) -> PartitionConfig {
        PartitionConfig {
            k,
            rotations: rotations.to_vec(),
            n_train_per_client: 6,
            n_val_per_client: 2,
            seed: 3,
        }
    }

    #[test]
    fn block_assignment() {
        let p = partition(&labeled(100), &labeled(20), &cfg(4, &[Rotation::R0, Rotation::R180])).unwrap();
        let rot: Vec<_> = p.clients.iter().map(|c| c.rotation).collect();
        assert_eq!(rot, vec![Rotation::R0, Rotation::R0, Rotation::R180, Rotation::R180]);
        assert!(p.clients.iter().all(|c| c.val.len() == 2 && c.train.len() == 6));
        assert_eq!(p.test_sets.len(), 2);
        assert_eq!(p.test_sets[&Rotation::R0].len(), 10);
    }

    #[test]
    fn shards_are_disjoint_and_labels_preserved() {
        let train = labeled(200);
        let p = partition(&train, &labeled(40), &cfg(8, &Rotation::ALL)).unwrap();
        let mut seen = HashSet::new();
        for c in &p.clients {
            for shard in [&c.train, &c.val] {
                for (&src, &label) in shard.source_indices().iter().zip(shard.labels()) {
                    assert!(seen.insert(src), "sample {src} reused");
                    assert_eq!(label, train.labels()[src]);
                }
            }
        }
        let mut test_seen = HashSet::new();
        for t in p.test_sets.values() {
            assert!(t.source_indices().iter().all(|&s| test_seen.insert(s)));
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let c = cfg(4, &[Rotation::R0, Rotation::R90]);
        let a = partition(&labeled(100), &labeled(20), &c).unwrap();
        let b = partition(&labeled(100), &labeled(20), &c).unwrap();
        let other = partition(&labeled(100), &labeled(20), &PartitionConfig { seed: 4, ..c }).unwrap();
        assert_eq!(a.clients[1].train, b.clients[1].train);
        assert_ne!(a.clients[1].train.source_indices(), other.clients[1].train.source_indices());
    }

    #[test]
    fn validation_errors() {
        let err = partition(&labeled(100), &labeled(20), &cfg(7, &[Rotation::R0, Rotation::R180])).unwrap_err();
        assert_eq!(err, Error::NotDivisible { k: 7, rotations: 2 });
        assert!(err.to_string().contains("k not divisible by number of rotations"));
        assert!(matches!(
            partition(&labeled(30), &labeled(20), &cfg(4, &[Rotation::R0, Rotation::R180])),
            Err(Error::InsufficientSamples { needed: 16, available: 15 })
        ));
    }

    #[test]
    fn table_two_configuration_arithmetic() {
        // 100 clients over four rotations with 400 train samples each
        let c = PartitionConfig {
            k: 100,
            rotations: Rotation::ALL.to_vec(),
            n_train_per_client: 400,
            n_val_per_client: 100,
            seed: 0,
        };
        assert_eq!(c.clients_per_rotation(), 25);
        assert_eq!(c.k * c.n_train_per_client, 40_000);
        assert!(c.clients_per_rotation() * 500 <= 50_000 / 4);
    }
}
