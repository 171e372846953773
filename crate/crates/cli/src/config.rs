//! Experiment config file: a JSON mirror of [`SimConfig`] plus paths.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use pens_core::nn::ModelKind;
use pens_core::{DatasetKind, InitMode, ModelSpec, ProtocolParams, Regime, Rotation, SimConfig, SyntheticSpec};
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Fallback for `data_dir` when the config leaves it out.
pub const DATA_DIR_ENV: &str = "DFL_DATA_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub kind: ModelKind,
    /// Hidden layer width (MLP) or dense layer width after the convolutions (CNN).
    pub hidden_units: usize,
    pub conv_channels: Vec<usize>,
    pub kernel_size: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            kind: ModelKind::Mlp,
            hidden_units: 64,
            conv_channels: vec![32, 64, 64],
            kernel_size: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub dataset: DatasetKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_dir: Option<PathBuf>,
    pub out_dir: PathBuf,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_rotations")]
    pub rotations: Vec<Rotation>,
    #[serde(default = "default_n")]
    pub n_train_per_client: usize,
    #[serde(default = "default_n")]
    pub n_val_per_client: usize,
    #[serde(default)]
    pub protocol: ProtocolParams,
    #[serde(default = "default_init")]
    pub init_mode: InitMode,
    #[serde(default = "default_regime")]
    pub regime: Regime,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_patience")]
    pub early_stopping_patience: usize,
    #[serde(default)]
    pub partition_seed: u64,
    #[serde(default)]
    pub synthetic: SyntheticSpec,
}

fn default_k() -> usize {
    100
}

fn default_rotations() -> Vec<Rotation> {
    vec![Rotation::R0, Rotation::R180]
}

fn default_n() -> usize {
    100
}

fn default_init() -> InitMode {
    InitMode::Independent
}

fn default_regime() -> Regime {
    Regime::Pens
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2, 3]
}

fn default_patience() -> usize {
    10
}

impl ConfigFile {
    /// Reads `path`, applies `--set` overrides and an optional single-seed
    /// override, and validates the result.
    pub fn load(path: &Path, sets: &[String], seed: Option<u64>) -> anyhow::Result<ConfigFile> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut value: Value =
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        for s in sets {
            apply_override(&mut value, s)?;
        }
        if let Some(seed) = seed {
            apply_override(&mut value, &format!("seeds=[{seed}]"))?;
        }
        let cfg: ConfigFile =
            serde_json::from_value(value).with_context(|| format!("invalid config {}", path.display()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn model_spec(&self) -> ModelSpec {
        let input_shape = self.dataset.input_shape(&self.synthetic);
        let m = &self.model;
        match m.kind {
            ModelKind::Mlp => ModelSpec::mlp(input_shape, m.hidden_units, pens_core::data::NUM_CLASSES),
            ModelKind::Cnn => {
                let mut spec = ModelSpec::cnn(input_shape, pens_core::data::NUM_CLASSES)
                    .with_conv_channels(m.conv_channels.clone())
                    .with_hidden_units(m.hidden_units);
                spec.kernel_size = m.kernel_size;
                spec
            }
        }
    }

    pub fn sim_config(&self) -> SimConfig {
        SimConfig {
            dataset: self.dataset,
            model: self.model_spec(),
            k: self.k,
            rotations: self.rotations.clone(),
            n_train_per_client: self.n_train_per_client,
            n_val_per_client: self.n_val_per_client,
            protocol: self.protocol,
            init_mode: self.init_mode,
            regime: self.regime,
            seeds: self.seeds.clone(),
            early_stopping_patience: self.early_stopping_patience,
            partition_seed: self.partition_seed,
            synthetic: self.synthetic.clone(),
        }
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.sim_config().validate().map_err(|e| anyhow!("invalid config: {e}"))
    }

    /// Raw dataset directory: the config's `data_dir`, else `$DFL_DATA_DIR`.
    pub fn data_dir(&self) -> anyhow::Result<PathBuf> {
        if let Some(d) = &self.data_dir {
            return Ok(d.clone());
        }
        match std::env::var_os(DATA_DIR_ENV) {
            Some(d) if !d.is_empty() => Ok(PathBuf::from(d)),
            _ => bail!("no data_dir in config and {DATA_DIR_ENV} is not set"),
        }
    }

    pub fn shard_dir(&self) -> PathBuf {
        self.out_dir.join("shards")
    }

    /// Where runs of the configured regime are written.
    pub fn run_dir(&self) -> PathBuf {
        self.out_dir.join(self.regime.name())
    }
}

/// Applies one `dotted.path=value` override. The value is parsed as JSON
/// and taken as a plain string if that fails.
pub fn apply_override(root: &mut Value, assignment: &str) -> anyhow::Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| anyhow!("override {assignment:?} is not of the form key=value"))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        bail!("override {assignment:?} has an empty key");
    }
    let value = serde_json::from_str(raw.trim()).unwrap_or_else(|_| Value::String(raw.trim().to_string()));
    let mut node = root;
    for (depth, key) in keys.iter().enumerate() {
        let obj = match node {
            Value::Object(map) => map,
            Value::Null => {
                *node = Value::Object(Default::default());
                node.as_object_mut().expect("just set")
            }
            _ => bail!("override {assignment:?}: {} is not an object", keys[..depth].join(".")),
        };
        if depth + 1 == keys.len() {
            obj.insert((*key).to_string(), value);
            return Ok(());
        }
        node = obj.entry(*key).or_insert(Value::Null);
    }
    unreachable!("keys is non-empty")
}
