use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Mlp,
    Cnn,
}

/// Architecture description for one of the two supported model families.
///
/// * `Mlp`: flatten, dense(`hidden_units`), ReLU, dense(`num_classes`).
/// * `Cnn`: for each entry of `conv_channels` a same-padded convolution
///   with `kernel_size`, ReLU and 2x2/2 max pooling; then flatten,
///   dense(`hidden_units`), ReLU, dense(`num_classes`).
///
/// `hidden_units` is the width of the hidden fully connected layer in both
/// families (64 for the reference CNN).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    /// (channels, height, width)
    pub input_shape: [usize; 3],
    pub hidden_units: usize,
    pub num_classes: usize,
    #[serde(default)]
    pub conv_channels: Vec<usize>,
    #[serde(default = "default_kernel")]
    pub kernel_size: usize,
}

fn default_kernel() -> usize {
    3
}

impl ModelSpec {
    pub fn mlp(input_shape: [usize; 3], hidden_units: usize, num_classes: usize) -> Self {
        ModelSpec {
            kind: ModelKind::Mlp,
            input_shape,
            hidden_units,
            num_classes,
            conv_channels: Vec::new(),
            kernel_size: default_kernel(),
        }
    }

    /// The reference CNN: conv channels [32, 64, 64], 3x3 kernels, 64 dense units.
    pub fn cnn(input_shape: [usize; 3], num_classes: usize) -> Self {
        ModelSpec {
            kind: ModelKind::Cnn,
            input_shape,
            hidden_units: 64,
            num_classes,
            conv_channels: vec![32, 64, 64],
            kernel_size: 3,
        }
    }

    pub fn with_conv_channels(mut self, channels: Vec<usize>) -> Self {
        self.conv_channels = channels;
        self
    }

    pub fn with_hidden_units(mut self, units: usize) -> Self {
        self.hidden_units = units;
        self
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    pub fn validate(&self) -> Result<()> {
        let [c, h, w] = self.input_shape;
        if c == 0 || h == 0 || w == 0 {
            return Err(Error::InvalidSpec(format!("input shape {:?}", self.input_shape)));
        }
        if self.hidden_units == 0 {
            return Err(Error::InvalidSpec("hidden_units must be positive".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::InvalidSpec("need at least two classes".into()));
        }
        if self.kind == ModelKind::Cnn {
            if self.conv_channels.is_empty() || self.conv_channels.contains(&0) {
                return Err(Error::InvalidSpec(format!(
                    "conv_channels {:?}",
                    self.conv_channels
                )));
            }
            if self.kernel_size == 0 || self.kernel_size.is_multiple_of(2) {
                return Err(Error::InvalidSpec(format!(
                    "kernel_size must be odd, got {}",
                    self.kernel_size
                )));
            }
            let shrink = 1usize << self.conv_channels.len();
            if h < shrink || w < shrink {
                return Err(Error::InvalidSpec(format!(
                    "input {h}x{w} too small for {} pooling stages",
                    self.conv_channels.len()
                )));
            }
        }
        Ok(())
    }

    pub(crate) fn layers(&self) -> Vec<Layer> {
        let mut layers = Vec::new();
        let mut offset = 0;
        let [mut channels, mut height, mut width] = self.input_shape;
        if self.kind == ModelKind::Cnn {
            for &out in &self.conv_channels {
                let conv = Layer::Conv {
                    in_channels: channels,
                    out_channels: out,
                    height,
                    width,
                    kernel: self.kernel_size,
                    offset,
                };
                offset += conv.param_count();
                layers.push(conv);
                layers.push(Layer::Relu);
                layers.push(Layer::MaxPool {
                    channels: out,
                    height,
                    width,
                });
                channels = out;
                height /= 2;
                width /= 2;
            }
        }
        let flat = channels * height * width;
        let hidden = Layer::Dense {
            inputs: flat,
            outputs: self.hidden_units,
            offset,
        };
        offset += hidden.param_count();
        layers.push(hidden);
        layers.push(Layer::Relu);
        layers.push(Layer::Dense {
            inputs: self.hidden_units,
            outputs: self.num_classes,
            offset,
        });
        layers
    }

    /// Length of the flat parameter vector for this architecture.
    pub fn total_param_count(&self) -> usize {
        self.layers().iter().map(Layer::param_count).sum()
    }
}

/// One stage of the compiled network.
///
/// Parameter layout (layer-major, in network order): each parametrized
/// layer stores its weights followed by its biases. Dense weights are
/// row-major `[output][input]`; convolution weights are
/// `[out_channel][in_channel][ky][kx]`. Activations are flattened in
/// `(channel, row, column)` order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Layer {
    Dense {
        inputs: usize,
        outputs: usize,
        offset: usize,
    },
    Conv {
        in_channels: usize,
        out_channels: usize,
        height: usize,
        width: usize,
        kernel: usize,
        offset: usize,
    },
    Relu,
    MaxPool {
        channels: usize,
        height: usize,
        width: usize,
    },
}

impl Layer {
    pub(crate) fn param_count(&self) -> usize {
        match *self {
            Layer::Dense { inputs, outputs, .. } => inputs * outputs + outputs,
            Layer::Conv {
                in_channels,
                out_channels,
                kernel,
                ..
            } => out_channels * in_channels * kernel * kernel + out_channels,
            Layer::Relu | Layer::MaxPool { .. } => 0,
        }
    }

    /// Number of weights preceding the bias block, and the fan-in used for init.
    pub(crate) fn weight_block(&self) -> Option<(usize, usize, usize)> {
        match *self {
            Layer::Dense {
                inputs,
                outputs,
                offset,
            } => Some((offset, inputs * outputs, inputs)),
            Layer::Conv {
                in_channels,
                out_channels,
                kernel,
                offset,
                ..
            } => {
                let fan_in = in_channels * kernel * kernel;
                Some((offset, out_channels * fan_in, fan_in))
            }
            _ => None,
        }
    }

    pub(crate) fn output_len(&self, input_len: usize) -> usize {
        match *self {
            Layer::Dense { outputs, .. } => outputs,
            Layer::Conv {
                out_channels,
                height,
                width,
                ..
            } => out_channels * height * width,
            Layer::Relu => input_len,
            Layer::MaxPool {
                channels,
                height,
                width,
            } => channels * (height / 2) * (width / 2),
        }
    }
}
