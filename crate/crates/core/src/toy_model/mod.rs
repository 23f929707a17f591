//! A small conditional MLP noise predictor and the duplicated-data sets it
//! is trained on.

mod dataset;
mod network;
mod params_io;
mod train;

pub use dataset::{DatasetSpec, ToyDataset};
pub use network::{Dense, DenoiserParams, NetConfig};
pub use params_io::{decode_params, encode_params, load_params, save_params, PARAMS_MAGIC, PARAMS_VERSION};
pub use train::{
    batch_loss, batch_loss_and_grad, evaluate_loss, moving_average, net_config, train, Architecture, OptimizerKind,
    TrainBatch, TrainConfig, TrainOutcome,
};
