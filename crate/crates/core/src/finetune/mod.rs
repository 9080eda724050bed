//! Span-prediction fine-tuning: full fine-tuning and low-rank adapters.

mod config;
mod lora;
mod train;

pub use config::{FinetuneConfig, Mode};
pub use lora::{
    adapter_checkpoint, add_adapters, attached_adapters, effective_weight, frozen_hash, inject_lora,
    load_with_adapter, lora_regularizer, model_hash, prepare_sft, qa_parameter_count, trainable_param_count,
    LoraAdapter, LoraState, ParamCount, TARGETS,
};
pub use train::{
    batch_loss_and_grads, build_train_windows, early_stop, fit, lora_epoch, mean_loss, sft_epoch, window_loss,
    EarlyStop, EpochRecord, EpochStats, FitReport, TrainWindow, Trainer,
};

use crate::encoder::EncoderError;
use crate::numerics::NumericsError;
use crate::tokenizer::TokenizerError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FinetuneError {
    #[error("invalid fine-tuning configuration: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("checkpoint integrity: {0}")]
    Integrity(String),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
}
