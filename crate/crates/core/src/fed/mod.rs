//! FedAvg training over the (augmented) client datasets.

mod adam;
mod engine;
mod fedavg;
pub mod gradcheck;
pub mod model;

pub use adam::{adam_step, AdamConfig, OptState};
pub use engine::{
    evaluate, participants, read_checkpoint, run_round, train_local, write_checkpoint,
    write_metrics, FedClient, FedConfig, RoundReport, TrainSet,
};
pub use fedavg::fedavg_aggregate;
pub use model::{
    backward, forward, Batch, Cache, Layer, ModelError, ModelKind, ModelParams, Schema, Shape,
};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum FedError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("non-finite gradient at index {0}")]
    NonFiniteGradient(usize),
    #[error("length mismatch: {params} params, {grads} grads, {moments} moments")]
    LengthMismatch {
        params: usize,
        grads: usize,
        moments: usize,
    },
    #[error("model {0} has a different schema")]
    SchemaMismatch(usize),
    #[error("model {0} has non-finite parameters")]
    NonFiniteParam(usize),
    #[error("invalid aggregation weights: {0}")]
    Weights(String),
    #[error("no client with data took part in the round")]
    NoClients,
}
