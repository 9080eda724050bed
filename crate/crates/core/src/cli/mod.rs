//! Command implementations behind the `spanforge` binary.
//!
//! Every command takes plain option structs, writes its files and returns a
//! summary; argument parsing and printing live in the binary. Failures map
//! onto a stable exit-code contract through [`CliError::exit_code`].

mod commands;
mod config;

pub use commands::{
    data_dedup, data_kappa, data_report, data_split, data_validate, eval, finetune, load_model, predict, pretrain,
    vocab, EvalOptions, EvalSplit, FinetuneOptions, FinetuneSummary, LoadedModel, PredictOptions, PretrainOptions,
    PretrainSummary, NO_ANSWER,
};
pub use config::{resolve_seed, DataSection, RunConfig, TokenizerSection, DEFAULT_SEED, SEED_ENV};

use crate::dataset::DatasetError;
use crate::encoder::EncoderError;
use crate::evalkit::EvalError;
use crate::finetune::FinetuneError;
use crate::numerics::NumericsError;
use crate::tokenizer::TokenizerError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    /// 2 configuration, 3 data validation, 4 checkpoint integrity, 1 other.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Checkpoint(_) => 4,
            CliError::Runtime(_) => 1,
        }
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::Io(m) => CliError::Config(m),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<TokenizerError> for CliError {
    fn from(e: TokenizerError) -> Self {
        match e {
            TokenizerError::Config(_) | TokenizerError::Io(_) => CliError::Config(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<NumericsError> for CliError {
    fn from(e: NumericsError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<EncoderError> for CliError {
    fn from(e: EncoderError) -> Self {
        match e {
            EncoderError::Config(_) => CliError::Config(e.to_string()),
            EncoderError::Checkpoint(_) | EncoderError::Io(_) => CliError::Checkpoint(e.to_string()),
            EncoderError::Tokenizer(t) => t.into(),
            EncoderError::Input(_) | EncoderError::Index { .. } => CliError::Data(e.to_string()),
            EncoderError::Numerics(n) => n.into(),
        }
    }
}

impl From<FinetuneError> for CliError {
    fn from(e: FinetuneError) -> Self {
        match e {
            FinetuneError::Config(m) => CliError::Config(m),
            FinetuneError::Input(m) => CliError::Data(m),
            FinetuneError::Integrity(m) => CliError::Checkpoint(m),
            FinetuneError::Encoder(e) => e.into(),
            FinetuneError::Numerics(n) => n.into(),
            FinetuneError::Tokenizer(t) => t.into(),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Input(m) => CliError::Data(m),
            EvalError::Encoder(e) => e.into(),
            EvalError::Tokenizer(t) => t.into(),
        }
    }
}

pub(crate) fn io_err(path: &std::path::Path, e: std::io::Error) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}
