//! Extractive question answering at desk scale.
//!
//! The pipeline runs from raw `(question, context)` pairs to a predicted
//! answer span:
//!
//! - [`tokenizer`]: normalisation, subword vocabulary induction, and packing
//!   into fixed-length `[CLS] Q [SEP] C [SEP]` windows with character offsets.
//! - [`encoder`]: a small post-norm transformer encoder with masked-LM,
//!   next-sentence and span heads.
//! - [`finetune`]: full fine-tuning and low-rank adapters on the query/value
//!   projections.
//! - [`dataset`]: schema, validation, answer alignment, splitting,
//!   de-duplication and agreement statistics.
//! - [`evalkit`]: span decoding plus token F1, BLEU and ROUGE-L.
//! - [`cli`]: the command implementations behind the `spanforge` binary.
//!
//! Everything is built on the tape in [`numerics`].

pub mod cli;
pub mod dataset;
pub mod encoder;
pub mod evalkit;
pub mod exec;
pub mod finetune;
pub mod fixtures;
pub mod numerics;
pub mod rng;
pub mod tokenizer;

pub use exec::Exec;
