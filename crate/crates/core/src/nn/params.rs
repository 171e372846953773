use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::spec::ModelSpec;
use crate::error::{Error, Result};

/// Flat model weights in the layout documented on [`ModelSpec`]. This is
/// the unit that clients exchange and average.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    /// Wraps raw values, rejecting NaN and infinities.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("ParamVector::new"));
        }
        Ok(ParamVector(values))
    }

    pub fn zeros(len: usize) -> Self {
        ParamVector(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub(crate) fn check_len(&self, spec: &ModelSpec) -> Result<()> {
        let expected = spec.total_param_count();
        if self.len() != expected {
            return Err(Error::shape("parameter vector", expected, self.len()));
        }
        Ok(())
    }
}

/// Gradient of the loss, same length and layout as the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(pub(crate) Vec<f64>);

impl Gradients {
    pub fn new(values: Vec<f64>) -> Self {
        Gradients(values)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases zero.
pub fn init_model(spec: &ModelSpec, seed: u64) -> ParamVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = vec![0.0; spec.total_param_count()];
    for layer in spec.layers() {
        if let Some((offset, count, fan_in)) = layer.weight_block() {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for v in &mut values[offset..offset + count] {
                *v = rng.random_range(-bound..bound);
            }
        }
    }
    ParamVector(values)
}

pub fn sgd_step(params: &ParamVector, grads: &Gradients, lr: f64) -> Result<ParamVector> {
    if params.len() != grads.len() {
        return Err(Error::shape("gradient", params.len(), grads.len()));
    }
    let values: Vec<f64> = params
        .0
        .iter()
        .zip(&grads.0)
        .map(|(p, g)| p - lr * g)
        .collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("sgd_step"));
    }
    Ok(ParamVector(values))
}

/// Elementwise arithmetic mean.
pub fn average_models<'a, I>(models: I) -> Result<ParamVector>
where
    I: IntoIterator<Item = &'a ParamVector>,
{
    let mut iter = models.into_iter();
    let first = iter.next().ok_or(Error::Empty("model list"))?;
    let mut sum = first.0.clone();
    let mut n = 1usize;
    for model in iter {
        if model.len() != sum.len() {
            return Err(Error::shape("averaged model", sum.len(), model.len()));
        }
        for (s, v) in sum.iter_mut().zip(&model.0) {
            *s += v;
        }
        n += 1;
    }
    let scale = 1.0 / n as f64;
    for s in &mut sum {
        *s *= scale;
    }
    if sum.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("average_models"));
    }
    Ok(ParamVector(sum))
}
