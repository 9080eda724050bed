use serde::{Deserialize, Serialize};

use crate::numerics::AdamWConfig;

use super::FinetuneError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Sft,
    Lora,
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sft" => Ok(Mode::Sft),
            "lora" => Ok(Mode::Lora),
            _ => Err(format!("unknown mode {s:?}; expected sft or lora")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinetuneConfig {
    pub mode: Mode,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub weight_decay: f64,
    pub lora_rank: usize,
    pub lora_dropout: f64,
    pub lambda_reg: f64,
    /// Epochs without validation improvement before stopping; 0 disables.
    pub early_stop_patience: usize,
    /// Hard cap on optimizer steps across all epochs.
    pub max_steps: Option<u64>,
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Sft,
            learning_rate: 3e-5,
            batch_size: 48,
            max_epochs: 3,
            weight_decay: 0.01,
            lora_rank: 8,
            lora_dropout: 0.1,
            lambda_reg: 1e-4,
            early_stop_patience: 1,
            max_steps: None,
            seed: 42,
        }
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<(), FinetuneError> {
        let bad = |m: String| Err(FinetuneError::Config(m));
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return bad(format!("learning_rate must be finite and >= 0, got {}", self.learning_rate));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return bad("batch_size and max_epochs must be positive".into());
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad(format!("weight_decay must be finite and >= 0, got {}", self.weight_decay));
        }
        if self.mode == Mode::Lora {
            if self.lora_rank == 0 {
                return bad("lora_rank must be positive".into());
            }
            if !(0.0..1.0).contains(&self.lora_dropout) {
                return bad(format!("lora_dropout must lie in [0, 1), got {}", self.lora_dropout));
            }
            if !(self.lambda_reg.is_finite() && self.lambda_reg >= 0.0) {
                return bad(format!("lambda_reg must be finite and >= 0, got {}", self.lambda_reg));
            }
        }
        if self.max_steps == Some(0) {
            return bad("max_steps must be positive when set".into());
        }
        Ok(())
    }

    pub fn optimizer(&self) -> AdamWConfig {
        AdamWConfig {
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            ..AdamWConfig::default()
        }
    }
}
