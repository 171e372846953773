//! Neural-network training core: two fixed architectures (MLP and a small
//! CNN), softmax cross-entropy, exact backprop, plain SGD and model
//! averaging over flat parameter vectors. Everything runs in `f64`.

mod network;
mod params;
mod spec;
mod train;

pub use network::{backward, forward, loss, Batch, Logits};
pub use params::{average_models, init_model, sgd_step, Gradients, ParamVector};
pub use spec::{ModelKind, ModelSpec};
pub use train::{evaluate, train_local, Evaluation, TrainSettings};
