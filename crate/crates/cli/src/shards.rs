//! On-disk client shards.
//!
//! Every split is two files: `<stem>.f64` holds the images as raw
//! little-endian f64 in sample-major (channel, row, column) order and
//! `<stem>.labels` one byte per label. `manifest.json` lists the files
//! with sample counts and a SHA-256 over the image bytes followed by the
//! label bytes.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use anyhow::{bail, ensure, Context};
use pens_core::data::ClientShards;
use pens_core::{Dataset, DatasetKind, Partition, PartitionConfig, Rotation, SyntheticSpec};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::fsutil::write_atomic;

pub const MANIFEST: &str = "manifest.json";
pub const FORMAT: &str = "pens-shards-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlobEntry {
    pub images: String,
    pub labels: String,
    pub count: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClientEntry {
    pub client_id: usize,
    pub rotation: Rotation,
    pub n_train: usize,
    pub n_val: usize,
    pub train: BlobEntry,
    pub val: BlobEntry,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestEntry {
    pub rotation: Rotation,
    pub data: BlobEntry,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub dataset: DatasetKind,
    pub input_shape: [usize; 3],
    pub k: usize,
    pub rotations: Vec<Rotation>,
    pub n_train_per_client: usize,
    pub n_val_per_client: usize,
    pub partition_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticSpec>,
    pub clients: Vec<ClientEntry>,
    pub test_sets: Vec<TestEntry>,
}

impl Manifest {
    /// Errors unless the manifest was written for this dataset and partition.
    pub fn check_matches(
        &self,
        dataset: DatasetKind,
        shape: [usize; 3],
        cfg: &PartitionConfig,
        synthetic: &SyntheticSpec,
    ) -> anyhow::Result<()> {
        ensure!(self.format == FORMAT, "unsupported shard format {:?}", self.format);
        let same = self.dataset == dataset
            && self.input_shape == shape
            && self.k == cfg.k
            && self.rotations == cfg.rotations
            && self.n_train_per_client == cfg.n_train_per_client
            && self.n_val_per_client == cfg.n_val_per_client
            && self.partition_seed == cfg.seed
            && (dataset != DatasetKind::Synthetic || self.synthetic.as_ref() == Some(synthetic));
        if !same {
            bail!("prepared shards do not match the config (dataset, partition or synthetic settings differ); rerun prepare");
        }
        Ok(())
    }
}

fn encode(d: &Dataset) -> (Vec<u8>, Vec<u8>) {
    let images = d.images().iter().flat_map(|v| v.to_le_bytes()).collect();
    let labels = d.labels().iter().map(|&l| l as u8).collect();
    (images, labels)
}

fn digest(images: &[u8], labels: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(images);
    h.update(labels);
    hex::encode(h.finalize())
}

fn write_blob(dir: &Path, stem: &str, d: &Dataset) -> anyhow::Result<BlobEntry> {
    let (images, labels) = encode(d);
    let entry = BlobEntry {
        images: format!("{stem}.f64"),
        labels: format!("{stem}.labels"),
        count: d.len(),
        sha256: digest(&images, &labels),
    };
    write_atomic(&dir.join(&entry.images), &images)?;
    write_atomic(&dir.join(&entry.labels), &labels)?;
    Ok(entry)
}

fn read_blob(dir: &Path, entry: &BlobEntry, name: &str, shape: [usize; 3]) -> anyhow::Result<Dataset> {
    let ipath = dir.join(&entry.images);
    let lpath = dir.join(&entry.labels);
    let images = std::fs::read(&ipath).with_context(|| format!("reading {}", ipath.display()))?;
    let labels = std::fs::read(&lpath).with_context(|| format!("reading {}", lpath.display()))?;
    ensure!(
        digest(&images, &labels) == entry.sha256,
        "hash mismatch for {} / {}",
        ipath.display(),
        lpath.display()
    );
    let sample: usize = shape.iter().product();
    ensure!(
        labels.len() == entry.count && images.len() == entry.count * sample * 8,
        "{} holds the wrong number of samples",
        ipath.display()
    );
    let pixels = images
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    let labels = labels.into_iter().map(usize::from).collect();
    Ok(Dataset::new(name, shape, pixels, labels)?)
}

/// Writes every shard and the manifest (last) to `dir`.
pub fn write_partition(
    dir: &Path,
    dataset: DatasetKind,
    cfg: &PartitionConfig,
    synthetic: &SyntheticSpec,
    part: &Partition,
) -> anyhow::Result<Manifest> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let shape = part
        .test_sets
        .values()
        .next()
        .map(|d| d.shape())
        .context("partition has no test sets")?;
    let mut clients = Vec::with_capacity(part.clients.len());
    for c in &part.clients {
        clients.push(ClientEntry {
            client_id: c.client_id,
            rotation: c.rotation,
            n_train: c.train.len(),
            n_val: c.val.len(),
            train: write_blob(dir, &format!("client_{:04}_train", c.client_id), &c.train)?,
            val: write_blob(dir, &format!("client_{:04}_val", c.client_id), &c.val)?,
        });
    }
    let mut test_sets = Vec::new();
    for (rotation, d) in &part.test_sets {
        test_sets.push(TestEntry {
            rotation: *rotation,
            data: write_blob(dir, &format!("test_r{:03}", rotation.degrees()), d)?,
        });
    }
    let manifest = Manifest {
        format: FORMAT.to_string(),
        dataset,
        input_shape: shape,
        k: cfg.k,
        rotations: cfg.rotations.clone(),
        n_train_per_client: cfg.n_train_per_client,
        n_val_per_client: cfg.n_val_per_client,
        partition_seed: cfg.seed,
        synthetic: (dataset == DatasetKind::Synthetic).then(|| synthetic.clone()),
        clients,
        test_sets,
    };
    let mut json = serde_json::to_vec_pretty(&manifest)?;
    json.push(b'\n');
    write_atomic(&dir.join(MANIFEST), &json)?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> anyhow::Result<Manifest> {
    let path = dir.join(MANIFEST);
    if !path.exists() {
        bail!("no prepared shards at {} (run `pens prepare` first)", dir.display());
    }
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Loads and hash-checks every shard listed in `manifest`.
pub fn load_partition(dir: &Path, manifest: &Manifest) -> anyhow::Result<Partition> {
    let shape = manifest.input_shape;
    let mut test_sets = BTreeMap::new();
    for t in &manifest.test_sets {
        let d = read_blob(dir, &t.data, &format!("test-r{}", t.rotation), shape)?;
        test_sets.insert(t.rotation, Arc::new(d));
    }
    let mut clients = Vec::with_capacity(manifest.clients.len());
    for c in &manifest.clients {
        let test = test_sets
            .get(&c.rotation)
            .with_context(|| format!("no test set for rotation {}", c.rotation))?;
        clients.push(ClientShards {
            client_id: c.client_id,
            rotation: c.rotation,
            train: read_blob(dir, &c.train, &format!("client{}-train", c.client_id), shape)?,
            val: read_blob(dir, &c.val, &format!("client{}-val", c.client_id), shape)?,
            test: Arc::clone(test),
        });
    }
    Ok(Partition { clients, test_sets })
}
