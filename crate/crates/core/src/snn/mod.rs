//! Spiking classifier: LIF neurons, a conv/FC network trained with
//! surrogate-gradient BPTT and AdamW, and binary checkpoints.

pub mod checkpoint;
pub mod lif;
pub mod network;
pub mod train;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};
pub use lif::{lif_step, surrogate_gradient, LifParams, LifState, SpikeFn, SURROGATE_DESCRIPTION};
pub use network::{argmax, cross_entropy, Architecture, NetworkParams, ParamTensors, SpikeInput};
pub use train::{
    evaluate, history_csv, train, train_with, AdamW, Dataset, EpochMetrics, EvalResult,
    TrainConfig, Trainer,
};
