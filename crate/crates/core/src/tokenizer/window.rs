//! Packing `(question, context)` into fixed-length overlapping windows.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::vocab::{Token, Vocabulary, CLS, PAD, SEP};
use super::TokenizerError;

pub const DEFAULT_MAX_LEN: usize = 384;
pub const DEFAULT_STRIDE: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowConfig {
    pub max_len: usize,
    pub stride: usize,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            max_len: DEFAULT_MAX_LEN,
            stride: DEFAULT_STRIDE,
        }
    }
}

/// One packed sequence `[CLS] Q [SEP] C[range] [SEP] [PAD]…`.
///
/// `offsets[i]` is the character range of token `i` in the original context,
/// or `None` for specials, question tokens and padding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedWindow {
    pub token_ids: Vec<u32>,
    pub segment_ids: Vec<u8>,
    pub attention_mask: Vec<u8>,
    pub offsets: Vec<Option<(usize, usize)>>,
    pub window_index: usize,
    /// Context-token indices (into the whole context) this window holds.
    pub context_token_range: Range<usize>,
    /// Position of the first context token inside the window.
    pub context_start: usize,
    /// Number of context tokens in the whole context.
    pub context_total: usize,
    /// Character end of the context token just before this window, if any.
    pub prev_token_end: Option<usize>,
    /// Character start of the context token just after this window, if any.
    pub next_token_start: Option<usize>,
}

impl EncodedWindow {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    /// Window positions holding context tokens.
    pub fn context_positions(&self) -> Range<usize> {
        self.context_start..self.context_start + self.context_token_range.len()
    }

    pub fn real_len(&self) -> usize {
        self.attention_mask.iter().filter(|&&m| m == 1).count()
    }

    /// The same window without trailing padding. Padding never reaches a
    /// real position through attention, so encoder outputs on the kept
    /// positions are unchanged.
    pub fn trimmed(&self) -> EncodedWindow {
        let n = self.real_len();
        let mut w = self.clone();
        w.token_ids.truncate(n);
        w.segment_ids.truncate(n);
        w.attention_mask.truncate(n);
        w.offsets.truncate(n);
        w
    }
}

/// Tokenises both strings and lays the context out in windows of at most
/// `max_len − |Q| − 3` context tokens, each starting `capacity − stride`
/// tokens after the previous one. The final window may be shorter.
pub fn encode_pair(
    question: &str,
    context: &str,
    vocab: &Vocabulary,
    config: WindowConfig,
) -> Result<Vec<EncodedWindow>, TokenizerError> {
    let q_ids: Vec<u32> = vocab.encode(question).iter().map(|t| t.id).collect();
    let ctx = vocab.encode(context);
    pack_windows(&q_ids, &ctx, config)
}

pub fn pack_windows(
    q_ids: &[u32],
    ctx: &[Token],
    config: WindowConfig,
) -> Result<Vec<EncodedWindow>, TokenizerError> {
    let WindowConfig { max_len, stride } = config;
    let q = q_ids.len();
    if q + 3 >= max_len {
        return Err(TokenizerError::Input(format!(
            "question has {q} tokens; it must be shorter than max_len - 3 = {}",
            max_len.saturating_sub(3)
        )));
    }
    let capacity = max_len - q - 3;
    if stride >= capacity {
        return Err(TokenizerError::Config(format!(
            "stride {stride} must be smaller than the context capacity {capacity}"
        )));
    }
    let step = capacity - stride;
    let total = ctx.len();
    let mut windows = Vec::new();
    let mut start = 0usize;
    loop {
        let end = (start + capacity).min(total);
        windows.push(build_window(q_ids, ctx, start..end, windows.len(), max_len));
        if end >= total {
            break;
        }
        start += step;
    }
    Ok(windows)
}

fn build_window(
    q_ids: &[u32],
    ctx: &[Token],
    range: Range<usize>,
    window_index: usize,
    max_len: usize,
) -> EncodedWindow {
    let mut token_ids = Vec::with_capacity(max_len);
    let mut segment_ids = Vec::with_capacity(max_len);
    let mut offsets = Vec::with_capacity(max_len);

    token_ids.push(CLS);
    token_ids.extend_from_slice(q_ids);
    token_ids.push(SEP);
    segment_ids.resize(token_ids.len(), 0);
    offsets.resize(token_ids.len(), None);
    let context_start = token_ids.len();

    for t in &ctx[range.clone()] {
        token_ids.push(t.id);
        segment_ids.push(1);
        offsets.push(Some((t.start, t.end)));
    }
    token_ids.push(SEP);
    segment_ids.push(1);
    offsets.push(None);

    let real = token_ids.len();
    let mut attention_mask = vec![1u8; real];
    token_ids.resize(max_len, PAD);
    segment_ids.resize(max_len, 0);
    offsets.resize(max_len, None);
    attention_mask.resize(max_len, 0);

    EncodedWindow {
        token_ids,
        segment_ids,
        attention_mask,
        offsets,
        window_index,
        prev_token_end: range.start.checked_sub(1).map(|i| ctx[i].end),
        next_token_start: ctx.get(range.end).map(|t| t.start),
        context_token_range: range,
        context_start,
        context_total: ctx.len(),
    }
}

/// Packs two segments for sentence-pair pretraining, trimming the longer one
/// from its end until `[CLS] A [SEP] B [SEP]` fits in `max_len`.
pub fn pack_sentence_pair(
    first: &str,
    second: &str,
    vocab: &Vocabulary,
    max_len: usize,
) -> Result<EncodedWindow, TokenizerError> {
    if max_len < 5 {
        return Err(TokenizerError::Config(format!(
            "max_len {max_len} cannot hold two non-empty segments"
        )));
    }
    let mut a: Vec<u32> = vocab.encode(first).iter().map(|t| t.id).collect();
    let mut b: Vec<u32> = vocab.encode(second).iter().map(|t| t.id).collect();
    if a.is_empty() || b.is_empty() {
        return Err(TokenizerError::Input("sentence pair has an empty segment".into()));
    }
    while a.len() + b.len() + 3 > max_len {
        if a.len() >= b.len() {
            a.pop();
        } else {
            b.pop();
        }
    }
    let mut token_ids = vec![CLS];
    token_ids.extend(&a);
    token_ids.push(SEP);
    let mut segment_ids = vec![0u8; token_ids.len()];
    token_ids.extend(&b);
    token_ids.push(SEP);
    segment_ids.resize(token_ids.len(), 1);
    let real = token_ids.len();
    let mut attention_mask = vec![1u8; real];
    token_ids.resize(max_len, PAD);
    segment_ids.resize(max_len, 0);
    attention_mask.resize(max_len, 0);
    Ok(EncodedWindow {
        token_ids,
        segment_ids,
        attention_mask,
        offsets: vec![None; max_len],
        window_index: 0,
        context_token_range: 0..0,
        context_start: a.len() + 2,
        context_total: 0,
        prev_token_end: None,
        next_token_start: None,
    })
}
