//! Forward pass on the tape: embeddings, post-norm transformer layers and
//! the span, masked-LM and sentence-pair heads.

use std::collections::HashMap;

use crate::numerics::{NodeId, ParamId, Real, Tape};
use crate::rng::StreamRng;
use crate::tokenizer::EncodedWindow;

use super::model::{AdapterSlot, Encoder};
use super::EncoderError;

/// Parameter nodes already loaded on a tape, so each tensor is copied once.
pub struct Bound<'m, T: Real> {
    model: &'m Encoder<T>,
    nodes: HashMap<ParamId, NodeId>,
}

impl<'m, T: Real> Bound<'m, T> {
    pub fn new(model: &'m Encoder<T>) -> Self {
        Self {
            model,
            nodes: HashMap::new(),
        }
    }

    pub fn param(&mut self, tape: &mut Tape<T>, id: ParamId) -> NodeId {
        *self
            .nodes
            .entry(id)
            .or_insert_with(|| tape.param(id, self.model.params.get(id)))
    }

    pub fn model(&self) -> &'m Encoder<T> {
        self.model
    }
}

/// Token, segment and validity information for one sequence.
#[derive(Debug, Clone, Copy)]
pub struct SequenceInput<'a> {
    pub token_ids: &'a [u32],
    pub segment_ids: &'a [u8],
    pub attention_mask: &'a [u8],
}

impl<'a> From<&'a EncodedWindow> for SequenceInput<'a> {
    fn from(w: &'a EncodedWindow) -> Self {
        Self {
            token_ids: &w.token_ids,
            segment_ids: &w.segment_ids,
            attention_mask: &w.attention_mask,
        }
    }
}

fn linear<T: Real>(
    tape: &mut Tape<T>,
    bound: &mut Bound<'_, T>,
    x: NodeId,
    w: ParamId,
    b: ParamId,
) -> Result<NodeId, EncoderError> {
    let wn = bound.param(tape, w);
    let bn = bound.param(tape, b);
    let y = tape.matmul(x, wn)?;
    Ok(tape.add_row(y, bn)?)
}

/// `x·W + b + (dropout(x)·B)·Aᵀ` when an adapter is attached.
fn adapted_linear<T: Real>(
    tape: &mut Tape<T>,
    bound: &mut Bound<'_, T>,
    x: NodeId,
    w: ParamId,
    b: ParamId,
    adapter: Option<AdapterSlot>,
    rng: &mut Option<&mut StreamRng>,
) -> Result<NodeId, EncoderError> {
    let base = linear(tape, bound, x, w, b)?;
    let Some(slot) = adapter else {
        return Ok(base);
    };
    let bn = bound.param(tape, slot.b);
    let an = bound.param(tape, slot.a);
    let xd = tape.dropout(x, slot.dropout, rng.as_deref_mut())?;
    let low = tape.matmul(xd, bn)?;
    let delta = tape.matmul_bt(low, an)?;
    Ok(tape.add(base, delta)?)
}

impl<T: Real> Encoder<T> {
    /// Hidden states `L × d` for one sequence. Padding columns are excluded
    /// from every attention distribution. `rng` enables adapter dropout.
    pub fn hidden_states(
        &self,
        tape: &mut Tape<T>,
        bound: &mut Bound<'_, T>,
        input: SequenceInput<'_>,
        mut rng: Option<&mut StreamRng>,
    ) -> Result<NodeId, EncoderError> {
        let c = &self.config;
        let l = input.token_ids.len();
        if l == 0 || input.segment_ids.len() != l || input.attention_mask.len() != l {
            return Err(EncoderError::Input(format!(
                "sequence arrays disagree: {} tokens, {} segments, {} mask entries",
                l,
                input.segment_ids.len(),
                input.attention_mask.len()
            )));
        }
        if l > c.max_positions {
            return Err(EncoderError::Input(format!(
                "sequence length {l} exceeds max_positions {}",
                c.max_positions
            )));
        }
        let mut tok_rows = Vec::with_capacity(l);
        for &t in input.token_ids {
            if t as usize >= c.vocab_size {
                return Err(EncoderError::Index {
                    index: t as usize,
                    len: c.vocab_size,
                });
            }
            tok_rows.push(t as usize);
        }
        let seg_rows: Vec<usize> = input.segment_ids.iter().map(|&s| s as usize).collect();
        if let Some(&s) = seg_rows.iter().find(|&&s| s >= super::EncoderConfig::SEGMENT_TYPES) {
            return Err(EncoderError::Index { index: s, len: 2 });
        }
        let valid: Vec<bool> = input.attention_mask.iter().map(|&m| m == 1).collect();
        if !valid.iter().any(|&v| v) {
            return Err(EncoderError::Input("attention mask has no real tokens".into()));
        }

        let lay = self.layout();
        let tok = bound.param(tape, lay.token_emb);
        let pos = bound.param(tape, lay.position_emb);
        let seg = bound.param(tape, lay.segment_emb);
        let e_tok = tape.gather_rows(tok, &tok_rows)?;
        let e_pos = tape.gather_rows(pos, &(0..l).collect::<Vec<_>>())?;
        let e_seg = tape.gather_rows(seg, &seg_rows)?;
        let e = tape.add(e_tok, e_pos)?;
        let e = tape.add(e, e_seg)?;
        let g = bound.param(tape, lay.emb_gamma);
        let b = bound.param(tape, lay.emb_beta);
        let mut x = tape.layer_norm(e, g, b, c.layer_norm_eps)?;

        let dh = c.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        for lp in &lay.layers {
            let q = adapted_linear(tape, bound, x, lp.query_w, lp.query_b, lp.query_adapter, &mut rng)?;
            let k = linear(tape, bound, x, lp.key_w, lp.key_b)?;
            let v = adapted_linear(tape, bound, x, lp.value_w, lp.value_b, lp.value_adapter, &mut rng)?;
            let mut heads = Vec::with_capacity(c.heads);
            for h in 0..c.heads {
                let (qh, kh, vh) = if c.heads == 1 {
                    (q, k, v)
                } else {
                    (
                        tape.slice_cols(q, h * dh, dh)?,
                        tape.slice_cols(k, h * dh, dh)?,
                        tape.slice_cols(v, h * dh, dh)?,
                    )
                };
                let scores = tape.matmul_bt(qh, kh)?;
                let scores = tape.scale(scores, scale);
                let probs = tape.masked_softmax_rows(scores, Some(&valid))?;
                heads.push(tape.matmul(probs, vh)?);
            }
            let ctx = if heads.len() == 1 {
                heads[0]
            } else {
                tape.concat_cols(&heads)?
            };
            let attn = linear(tape, bound, ctx, lp.out_w, lp.out_b)?;
            let res = tape.add(x, attn)?;
            let g = bound.param(tape, lp.ln1_gamma);
            let b = bound.param(tape, lp.ln1_beta);
            x = tape.layer_norm(res, g, b, c.layer_norm_eps)?;

            let hmid = linear(tape, bound, x, lp.ffn_in_w, lp.ffn_in_b)?;
            let hmid = tape.gelu(hmid);
            let f = linear(tape, bound, hmid, lp.ffn_out_w, lp.ffn_out_b)?;
            let res = tape.add(x, f)?;
            let g = bound.param(tape, lp.ln2_gamma);
            let b = bound.param(tape, lp.ln2_beta);
            x = tape.layer_norm(res, g, b, c.layer_norm_eps)?;
        }
        Ok(x)
    }

    /// Start and end distributions `1 × L` over a window. Only `[CLS]`
    /// (the null answer) and context positions receive probability.
    pub fn span_probs(
        &self,
        tape: &mut Tape<T>,
        bound: &mut Bound<'_, T>,
        hidden: NodeId,
        window: &EncodedWindow,
    ) -> Result<(NodeId, NodeId), EncoderError> {
        let valid = span_candidates(window);
        let lay = self.layout();
        let mut dist = |head: ParamId| -> Result<NodeId, EncoderError> {
            let w = bound.param(tape, head);
            let col = tape.matmul_bt(hidden, w)?;
            let row = tape.transpose(col);
            Ok(tape.masked_softmax_rows(row, Some(&valid))?)
        };
        let ps = dist(lay.span_start)?;
        let pe = dist(lay.span_end)?;
        Ok((ps, pe))
    }

    /// Raw start/end scores per position, for decoding without a tape.
    pub fn span_logits(&self, window: &EncodedWindow) -> Result<(Vec<f64>, Vec<f64>), EncoderError> {
        let mut tape = Tape::new();
        let mut bound = Bound::new(self);
        let h = self.hidden_states(&mut tape, &mut bound, window.into(), None)?;
        let lay = self.layout();
        let mut scores = |head: ParamId| -> Result<Vec<f64>, EncoderError> {
            let w = bound.param(&mut tape, head);
            let col = tape.matmul_bt(h, w)?;
            Ok(tape.value(col).iter().map(|v| v.as_f64()).collect())
        };
        let s = scores(lay.span_start)?;
        let e = scores(lay.span_end)?;
        Ok((s, e))
    }

    /// Vocabulary distribution for the selected rows of `hidden`.
    pub fn mlm_probs(
        &self,
        tape: &mut Tape<T>,
        bound: &mut Bound<'_, T>,
        hidden: NodeId,
        positions: &[usize],
    ) -> Result<NodeId, EncoderError> {
        let rows = tape.gather_rows(hidden, positions)?;
        let lay = self.layout();
        let logits = linear(tape, bound, rows, lay.mlm_w, lay.mlm_b)?;
        Ok(tape.softmax_rows(logits)?)
    }

    /// Two-way sentence-pair distribution read from the `[CLS]` row.
    pub fn nsp_probs(
        &self,
        tape: &mut Tape<T>,
        bound: &mut Bound<'_, T>,
        hidden: NodeId,
    ) -> Result<NodeId, EncoderError> {
        let cls = tape.gather_rows(hidden, &[0])?;
        let lay = self.layout();
        let logits = linear(tape, bound, cls, lay.nsp_w, lay.nsp_b)?;
        Ok(tape.softmax_rows(logits)?)
    }
}

/// Positions a span may start or end at: `[CLS]` plus the context tokens.
pub fn span_candidates(window: &EncodedWindow) -> Vec<bool> {
    let mut valid = vec![false; window.len()];
    if let Some(v) = valid.first_mut() {
        *v = true;
    }
    for i in window.context_positions() {
        valid[i] = true;
    }
    valid
}

/// `−ln p_s[s*] − ln p_e[e*]`. Targets outside the candidate set are rejected.
pub fn qa_loss<T: Real>(
    tape: &mut Tape<T>,
    ps: NodeId,
    pe: NodeId,
    window: &EncodedWindow,
    start: usize,
    end: usize,
) -> Result<NodeId, EncoderError> {
    let valid = span_candidates(window);
    for t in [start, end] {
        if t >= valid.len() || !valid[t] {
            return Err(EncoderError::Index {
                index: t,
                len: valid.len(),
            });
        }
    }
    let ls = tape.nll_pick(ps, start)?;
    let le = tape.nll_pick(pe, end)?;
    Ok(tape.add(ls, le)?)
}
