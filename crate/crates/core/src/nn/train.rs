use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::network::{backward, forward, log_sum_exp, Batch};
use super::params::{sgd_step, ParamVector};
use super::spec::ModelSpec;
use crate::data::Dataset;
use crate::error::{Error, Result};

/// Local SGD schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            epochs: 1,
            batch_size: 8,
            lr: 1e-3,
        }
    }
}

/// Runs `epochs` shuffled passes of mini-batch SGD over `shard`.
pub fn train_local<R: Rng + ?Sized>(
    spec: &ModelSpec,
    params: &ParamVector,
    shard: &Dataset,
    settings: TrainSettings,
    rng: &mut R,
) -> Result<ParamVector> {
    if shard.is_empty() {
        return Err(Error::Empty("training shard"));
    }
    if settings.batch_size == 0 {
        return Err(Error::InvalidConfig("batch_size must be positive".into()));
    }
    params.check_len(spec)?;
    let sample = shard.sample_len();
    let mut params = params.clone();
    let mut order: Vec<usize> = (0..shard.len()).collect();
    let mut inputs = Vec::with_capacity(settings.batch_size * sample);
    let mut labels = Vec::with_capacity(settings.batch_size);
    for _ in 0..settings.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(settings.batch_size) {
            inputs.clear();
            labels.clear();
            for &i in chunk {
                inputs.extend_from_slice(shard.image(i));
                labels.push(shard.labels()[i]);
            }
            let (_, grads) = backward(spec, &params, Batch::new(&inputs, &labels))?;
            params = sgd_step(&params, &grads, settings.lr)?;
        }
    }
    Ok(params)
}

/// Aggregate loss and accuracy over a full shard.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub mean_loss: f64,
    pub accuracy: f64,
}

const EVAL_CHUNK: usize = 512;

/// Mean loss and argmax accuracy (ties to the lowest class) over `shard`.
pub fn evaluate(spec: &ModelSpec, params: &ParamVector, shard: &Dataset) -> Result<Evaluation> {
    if shard.is_empty() {
        return Err(Error::Empty("evaluation shard"));
    }
    let sample = shard.sample_len();
    let mut total_loss = 0.0;
    let mut correct = 0usize;
    for (inputs, labels) in shard
        .images()
        .chunks(EVAL_CHUNK * sample)
        .zip(shard.labels().chunks(EVAL_CHUNK))
    {
        let logits = forward(spec, params, inputs)?;
        for ((row, &y), pred) in logits.rows().zip(labels).zip(logits.argmax()) {
            if y >= spec.num_classes {
                return Err(Error::LabelOutOfRange {
                    label: y,
                    num_classes: spec.num_classes,
                });
            }
            total_loss += log_sum_exp(row) - row[y];
            correct += usize::from(pred == y);
        }
    }
    let n = shard.len() as f64;
    Ok(Evaluation {
        mean_loss: total_loss / n,
        accuracy: correct as f64 / n,
    })
}
