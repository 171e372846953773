use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Dataset, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::rng::{stream, Purpose};

/// Labeled Gaussian-blob images: each class has a fixed prototype made of
/// a few random blobs; samples add pixel noise and are clipped to [0, 1].
/// Prototypes have no rotational symmetry in general, so rotated copies
/// form distinguishable input distributions with the same labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub side: usize,
    pub channels: usize,
    pub blobs_per_class: usize,
    pub noise: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            side: 10,
            channels: 1,
            blobs_per_class: 3,
            noise: 0.35,
            n_train: 6000,
            n_test: 2000,
            seed: 17,
        }
    }
}

impl SyntheticSpec {
    fn shape(&self) -> [usize; 3] {
        [self.channels, self.side, self.side]
    }

    pub fn prototypes(&self) -> Vec<Vec<f64>> {
        let n = self.side as f64;
        (0..NUM_CLASSES)
            .map(|class| {
                let mut rng = stream(self.seed, class as u64, Purpose::Synthetic);
                let mut img = vec![0.0; self.shape().iter().product()];
                for ch in 0..self.channels {
                    let plane = &mut img[ch * self.side * self.side..(ch + 1) * self.side * self.side];
                    for _ in 0..self.blobs_per_class {
                        let cy = rng.random_range(0.0..n);
                        let cx = rng.random_range(0.0..n);
                        let sigma = rng.random_range(n / 10.0..n / 5.0);
                        for (i, v) in plane.iter_mut().enumerate() {
                            let dy = (i / self.side) as f64 - cy;
                            let dx = (i % self.side) as f64 - cx;
                            *v += (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp();
                        }
                    }
                    let max = plane.iter().copied().fold(0.0, f64::max);
                    if max > 0.0 {
                        plane.iter_mut().for_each(|v| *v /= max);
                    }
                }
                img
            })
            .collect()
    }

    /// `n` samples with balanced labels (`i % 10`).
    pub fn generate(&self, name: &str, n: usize, sample_seed: u64) -> Result<Dataset> {
        if self.side == 0 || self.channels == 0 {
            return Err(Error::InvalidConfig("synthetic side and channels must be positive".into()));
        }
        let noise = Normal::new(0.0, self.noise)
            .map_err(|e| Error::InvalidConfig(format!("synthetic noise: {e}")))?;
        let protos = self.prototypes();
        let mut rng = stream(self.seed, sample_seed, Purpose::Synthetic);
        let mut images = Vec::with_capacity(n * protos[0].len());
        let labels: Vec<usize> = (0..n).map(|i| i % NUM_CLASSES).collect();
        for &label in &labels {
            images.extend(
                protos[label]
                    .iter()
                    .map(|&p| (p + noise.sample(&mut rng)).clamp(0.0, 1.0)),
            );
        }
        Dataset::new(name, self.shape(), images, labels)
    }

    /// Train and test sets drawn from the same prototypes.
    pub fn generate_split(&self) -> Result<(Dataset, Dataset)> {
        Ok((
            self.generate("synthetic-train", self.n_train, u64::MAX - 1)?,
            self.generate("synthetic-test", self.n_test, u64::MAX - 2)?,
        ))
    }
}
