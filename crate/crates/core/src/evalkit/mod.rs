//! Span decoding, answer metrics and per-subdomain reports.

mod decode;
mod metrics;
mod report;

pub use decode::{decode_spans, log_softmax_masked, window_scores, DecodeConfig, Prediction, WindowScores};
pub use metrics::{bleu, lcs_len, match_tokens, rouge_l, token_f1};
pub use report::{
    evaluate, predict, report_from_predictions, score, DomainReport, ExampleScores, ReportRow, MERGED,
};

use crate::encoder::EncoderError;
use crate::tokenizer::TokenizerError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("invalid input: {0}")]
    Input(String),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
}
