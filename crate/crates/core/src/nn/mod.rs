//! Dense networks with manual backpropagation and Adam.

pub mod activation;
pub mod adam;
pub mod checkpoint;
pub mod layer;
pub mod mlp;
pub mod train;

pub use activation::{gelu, Activation, GELU_GAIN};
pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{load_mlp, save_mlp};
pub use layer::{init_weights, DenseLayer, LayerGrad, LayerStack};
pub use mlp::{LossWeights, Mlp};
pub use train::{evaluate, predict_distributions, train_classifier, Evaluation, TrainConfig, TrainingLog};
