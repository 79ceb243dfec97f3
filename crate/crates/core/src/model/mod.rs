//! The four-head decoder: summed channel and position embeddings, causal
//! linear attention blocks, and heads for event, duration, track and
//! instrument.

pub mod attention;
mod batch;
pub mod checkpoint;
mod infer;
mod network;
mod params;

use thiserror::Error;

pub use batch::{Batch, Example, StepInput, StepTarget};
pub use infer::{InferenceCache, StepLogits};
pub use network::{batch_loss, embed, forward, gradients, log_softmax, loss, softmax_rows, HeadLogits, LossReport};
pub use params::{LayerParams, ModelConfig, ModelParams, TensorInfo, FFN_EXPANSION, INIT_STD};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("step {step}: {channel} index {index} outside table of {size}")]
    Index {
        step: usize,
        channel: &'static str,
        index: usize,
        size: usize,
    },
    #[error("non-finite activation after layer {layer}")]
    NonFinite { layer: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}
