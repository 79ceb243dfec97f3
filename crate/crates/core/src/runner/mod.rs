//! Training, sampling and gradient checking on top of the model.

mod gradcheck;
mod optim;
mod sample;
mod train;

use thiserror::Error;

use crate::codec::CodecError;
use crate::model::ModelError;

pub use gradcheck::{finite_diff_check, relative_error, GradCheckReport};
pub use optim::{clip_grad_norm, AdamW};
pub use sample::{generate, nucleus_sample, Condition, Generation, SampleConfig};
pub use train::{format_log, train_loop, windows, LogEntry, TrainConfig, TrainOutput, Trainer};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("non-finite loss at step {step}")]
    NonFinite { step: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Codec(#[from] CodecError),
}
