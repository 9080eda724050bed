use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::encoder::{EncoderConfig, PretrainConfig};
use crate::evalkit::DecodeConfig;
use crate::finetune::FinetuneConfig;
use crate::tokenizer::{WindowConfig, DEFAULT_MAX_LEN, DEFAULT_STRIDE};

use super::CliError;

pub const SEED_ENV: &str = "SPANFORGE_SEED";
pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TokenizerSection {
    /// Existing vocabulary file. Without one, a vocabulary of `vocab_size`
    /// pieces is trained on the run's own text.
    pub vocab: Option<PathBuf>,
    pub vocab_size: usize,
    pub max_len: usize,
    pub stride: usize,
}

impl Default for TokenizerSection {
    fn default() -> Self {
        Self {
            vocab: None,
            vocab_size: 200,
            max_len: DEFAULT_MAX_LEN,
            stride: DEFAULT_STRIDE,
        }
    }
}

impl TokenizerSection {
    pub fn window(&self) -> WindowConfig {
        WindowConfig {
            max_len: self.max_len,
            stride: self.stride,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// QA dataset in the JSON exchange format.
    pub path: Option<PathBuf>,
    /// Plain-text corpus for pretraining.
    pub corpus: Option<PathBuf>,
    /// Share of each subdomain used for training; 1.0 trains on everything.
    pub train_fraction: f64,
    /// Share of the training part held out to drive early stopping; 0 uses
    /// the training loss instead.
    pub validation_fraction: f64,
    pub strict: bool,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            path: None,
            corpus: None,
            train_fraction: 0.8,
            validation_fraction: 0.0,
            strict: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    /// Full checkpoint to start from; required for LoRA.
    pub base: Option<PathBuf>,
}

/// Everything a run needs. Command-line flags override file values; the
/// resolved copy written next to the outputs reproduces the run.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
    pub tokenizer: TokenizerSection,
    pub data: DataSection,
    pub model: ModelSection,
    pub encoder: EncoderConfig,
    pub pretrain: PretrainConfig,
    pub finetune: FinetuneConfig,
    pub decode: DecodeConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// File contents when given, defaults otherwise.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self, CliError> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        std::fs::write(path, self.to_toml()).map_err(|e| super::io_err(path, e))
    }

    /// Fixes the seed (see [`resolve_seed`]) and copies it into the
    /// fine-tuning section so both agree in the written config.
    pub fn resolve_seed(&mut self, flag: Option<u64>) -> Result<u64, CliError> {
        let seed = resolve_seed(flag, self.seed)?;
        self.seed = Some(seed);
        self.finetune.seed = seed;
        Ok(seed)
    }

    pub fn check_fractions(&self) -> Result<(), CliError> {
        let d = &self.data;
        if !(d.train_fraction > 0.0 && d.train_fraction <= 1.0) {
            return Err(CliError::Config(format!("train_fraction {} outside (0, 1]", d.train_fraction)));
        }
        if !(0.0..1.0).contains(&d.validation_fraction) {
            return Err(CliError::Config(format!(
                "validation_fraction {} outside [0, 1)",
                d.validation_fraction
            )));
        }
        Ok(())
    }
}

/// Seed precedence: flag, then config file, then `SPANFORGE_SEED`, then 42.
pub fn resolve_seed(flag: Option<u64>, file: Option<u64>) -> Result<u64, CliError> {
    if let Some(s) = flag.or(file) {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| CliError::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(DEFAULT_SEED),
    }
}
