//! Normalisation, subword vocabularies and window packing.

mod normalize;
mod vocab;
mod window;

pub use normalize::{
    normalize, normalize_for_match, normalize_with_report, split_words, Normalized, Word, DANDA,
    DOUBLE_DANDA,
};
pub use vocab::{
    train_vocab, Token, Vocabulary, CLS, CONTINUATION, MASK, NUM_SPECIALS, PAD, SEP, SPECIALS, UNK,
};
pub use window::{
    encode_pair, pack_sentence_pair, pack_windows, EncodedWindow, WindowConfig, DEFAULT_MAX_LEN,
    DEFAULT_STRIDE,
};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TokenizerError {
    #[error("invalid tokenizer configuration: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("token id {id} out of range for vocabulary of size {vocab_size}")]
    Index { id: u32, vocab_size: usize },
    #[error("i/o error: {0}")]
    Io(String),
}
