//! Miniature bidirectional transformer encoder with masked-LM, sentence-pair
//! and span heads.

mod checkpoint;
mod forward;
mod model;
mod pretrain;

pub use checkpoint::{tensor_hash, AdapterMeta, Checkpoint, CheckpointKind, CheckpointMeta, MAGIC, VERSION};
pub use forward::{qa_loss, span_candidates, Bound, SequenceInput};
pub use model::{
    adapter_names, parameter_shapes, truncated_normal, AdapterSlot, Encoder, EncoderConfig, LayerParams,
    Layout, MaskingMode, Projection, SPAN_END, SPAN_START,
};
pub use pretrain::{
    batch_masks, build_pretrain_set, mask_tokens, pretrain, pretrain_loss_and_grads, pretrain_step,
    split_sentences, MaskedInput, PretrainConfig, PretrainExample, PretrainLoss,
};

use crate::numerics::NumericsError;
use crate::tokenizer::{TokenizerError, Vocabulary, WindowConfig};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EncoderError {
    #[error("invalid encoder configuration: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("index {index} out of range for length {len}")]
    Index { index: usize, len: usize },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
}

/// Total number of scalars for a geometry, without allocating it.
pub fn parameter_count(config: &EncoderConfig) -> usize {
    parameter_shapes(config)
        .iter()
        .map(|(_, s)| s.iter().product::<usize>())
        .sum()
}

impl Encoder<f32> {
    /// Snapshot of every tensor, adapters included.
    pub fn to_checkpoint(&self, vocab: &Vocabulary, window: WindowConfig, seed: u64) -> Checkpoint {
        let meta = CheckpointMeta {
            kind: CheckpointKind::Full,
            encoder: self.config.clone(),
            window,
            vocab: vocab.pieces().to_vec(),
            seed,
            adapter: None,
        };
        let ids: Vec<_> = self.params.ids().collect();
        Checkpoint::from_store(meta, &self.params, &ids)
    }

    /// Rebuilds a model from a full checkpoint. All tensors load trainable.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self, EncoderError> {
        if ckpt.meta.kind != CheckpointKind::Full {
            return Err(EncoderError::Checkpoint(
                "adapter checkpoints must be loaded together with their base".into(),
            ));
        }
        if ckpt.meta.vocab.len() != ckpt.meta.encoder.vocab_size {
            return Err(EncoderError::Checkpoint(format!(
                "embedded vocabulary has {} pieces but the encoder expects {}",
                ckpt.meta.vocab.len(),
                ckpt.meta.encoder.vocab_size
            )));
        }
        let mut store = crate::numerics::ParamStore::new();
        for (name, t) in &ckpt.tensors {
            if store.find(name).is_some() {
                return Err(EncoderError::Checkpoint(format!("duplicate tensor {name}")));
            }
            store.push(name.clone(), t.clone().trainable());
        }
        let expected = parameter_shapes(&ckpt.meta.encoder).len();
        let adapters = ckpt.tensors.iter().filter(|(n, _)| n.contains(".lora_")).count();
        if store.len() != expected + adapters {
            return Err(EncoderError::Checkpoint(format!(
                "checkpoint holds {} tensors, expected {}",
                store.len(),
                expected + adapters
            )));
        }
        Encoder::from_params(ckpt.meta.encoder.clone(), store)
    }
}
