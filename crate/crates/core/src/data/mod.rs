//! Image datasets, rotation-based covariate shift and client partitioning.

mod cifar;
mod idx;
mod partition;
mod rotation;
mod synthetic;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use cifar::{load_cifar10_binary, parse_cifar10, CIFAR_RECORD_LEN};
pub use idx::{load_idx, parse_idx_images, parse_idx_labels, IDX_IMAGE_MAGIC, IDX_LABEL_MAGIC};
pub use partition::{partition, ClientShards, Partition, PartitionConfig};
pub use rotation::{rotate, Rotation};
pub use synthetic::SyntheticSpec;

pub const NUM_CLASSES: usize = 10;

/// Images in `(n, channels, height, width)` order with pixels in [0, 1].
///
/// `source_indices[i]` is the position of sample `i` in the file it was
/// loaded from; subsets keep it so disjointness can be checked after
/// partitioning.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    name: String,
    shape: [usize; 3],
    images: Vec<f64>,
    labels: Vec<usize>,
    source_indices: Vec<usize>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, shape: [usize; 3], images: Vec<f64>, labels: Vec<usize>) -> Result<Self> {
        let source_indices = (0..labels.len()).collect();
        Self::with_indices(name, shape, images, labels, source_indices)
    }

    pub fn with_indices(
        name: impl Into<String>,
        shape: [usize; 3],
        images: Vec<f64>,
        labels: Vec<usize>,
        source_indices: Vec<usize>,
    ) -> Result<Self> {
        let [_, h, w] = shape;
        if h != w {
            return Err(Error::NotSquare { height: h, width: w });
        }
        let sample: usize = shape.iter().product();
        if sample == 0 || images.len() != labels.len() * sample {
            return Err(Error::shape("dataset images", labels.len() * sample, images.len()));
        }
        if source_indices.len() != labels.len() {
            return Err(Error::shape("source indices", labels.len(), source_indices.len()));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= NUM_CLASSES) {
            return Err(Error::LabelOutOfRange {
                label,
                num_classes: NUM_CLASSES,
            });
        }
        Ok(Dataset {
            name: name.into(),
            shape,
            images,
            labels,
            source_indices,
        })
    }

    pub fn empty(name: impl Into<String>, shape: [usize; 3]) -> Self {
        Dataset {
            name: name.into(),
            shape,
            images: Vec::new(),
            labels: Vec::new(),
            source_indices: Vec::new(),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn sample_len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn images(&self) -> &[f64] {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn source_indices(&self) -> &[usize] {
        &self.source_indices
    }

    pub fn image(&self, i: usize) -> &[f64] {
        let s = self.sample_len();
        &self.images[i * s..(i + 1) * s]
    }

    /// Subset by position, optionally rotating every selected image.
    pub fn select(&self, name: impl Into<String>, positions: &[usize], rotation: Rotation) -> Result<Dataset> {
        let mut images = Vec::with_capacity(positions.len() * self.sample_len());
        let mut labels = Vec::with_capacity(positions.len());
        let mut sources = Vec::with_capacity(positions.len());
        for &p in positions {
            images.extend(rotate(self.image(p), self.shape, rotation)?);
            labels.push(self.labels[p]);
            sources.push(self.source_indices[p]);
        }
        Dataset::with_indices(name, self.shape, images, labels, sources)
    }

    /// Concatenates datasets of identical sample shape.
    pub fn concat<'a>(name: impl Into<String>, parts: impl IntoIterator<Item = &'a Dataset>) -> Result<Dataset> {
        let mut parts = parts.into_iter().peekable();
        let shape = parts.peek().ok_or(Error::Empty("dataset list"))?.shape;
        let mut out = Dataset::empty(name, shape);
        for part in parts {
            if part.shape != shape {
                return Err(Error::shape("concatenated dataset", format!("{shape:?}"), format!("{:?}", part.shape)));
            }
            out.images.extend_from_slice(&part.images);
            out.labels.extend_from_slice(&part.labels);
            out.source_indices.extend_from_slice(&part.source_indices);
        }
        Ok(out)
    }
}

/// Loads the four standard Fashion-MNIST IDX files (uncompressed) from `dir`.
pub fn load_fashion_mnist(dir: &Path) -> Result<(Dataset, Dataset)> {
    let train = load_idx(
        &dir.join("train-images-idx3-ubyte"),
        &dir.join("train-labels-idx1-ubyte"),
    )?;
    let test = load_idx(
        &dir.join("t10k-images-idx3-ubyte"),
        &dir.join("t10k-labels-idx1-ubyte"),
    )?;
    Ok((train, test))
}

/// Loads `data_batch_{1..5}.bin` and `test_batch.bin` from `dir`.
pub fn load_cifar10(dir: &Path) -> Result<(Dataset, Dataset)> {
    let batches: Vec<_> = (1..=5).map(|i| dir.join(format!("data_batch_{i}.bin"))).collect();
    let train = load_cifar10_binary(&batches)?;
    let test = load_cifar10_binary(&[dir.join("test_batch.bin")])?;
    Ok((train, test))
}

/// Which source the experiment data comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    FashionMnist,
    Cifar10,
    Synthetic,
}

impl DatasetKind {
    pub fn input_shape(self, synthetic: &SyntheticSpec) -> [usize; 3] {
        match self {
            DatasetKind::FashionMnist => [1, 28, 28],
            DatasetKind::Cifar10 => [3, 32, 32],
            DatasetKind::Synthetic => [synthetic.channels, synthetic.side, synthetic.side],
        }
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}
