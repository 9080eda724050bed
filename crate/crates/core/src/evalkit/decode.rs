//! Choosing one answer span across all windows of an example.

use serde::Serialize;

use crate::encoder::{span_candidates, Encoder};
use crate::tokenizer::{EncodedWindow, Vocabulary};

use super::EvalError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecodeConfig {
    pub max_answer_tokens: usize,
    pub n_best: usize,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            max_answer_tokens: 50,
            n_best: 20,
        }
    }
}

/// Per-position start and end log-probabilities for one window; positions
/// outside `[CLS]` and the context carry `-inf`.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowScores {
    pub log_start: Vec<f64>,
    pub log_end: Vec<f64>,
}

/// Masked log-softmax of raw scores, in `f64`.
pub fn log_softmax_masked(scores: &[f64], valid: &[bool]) -> Vec<f64> {
    let max = scores
        .iter()
        .zip(valid)
        .filter(|(_, &v)| v)
        .map(|(&s, _)| s)
        .fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = scores
        .iter()
        .zip(valid)
        .filter(|(_, &v)| v)
        .map(|(&s, _)| (s - max).exp())
        .sum();
    let log_z = max + z.ln();
    scores
        .iter()
        .zip(valid)
        .map(|(&s, &v)| if v { s - log_z } else { f64::NEG_INFINITY })
        .collect()
}

pub fn window_scores(model: &Encoder<f32>, window: &EncodedWindow) -> Result<WindowScores, EvalError> {
    let (s, e) = model.span_logits(window)?;
    let valid = span_candidates(window);
    Ok(WindowScores {
        log_start: log_softmax_masked(&s, &valid),
        log_end: log_softmax_masked(&e, &valid),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prediction {
    pub id: String,
    pub text: String,
    /// Chosen `(window, s, e)`; `None` for the empty answer.
    pub span: Option<(usize, usize, usize)>,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    window: usize,
    start: usize,
    end: usize,
    score: f64,
}

/// Best `(s, e)` pairs of one window in (score desc, s asc, e asc) order.
fn window_top(w: &EncodedWindow, sc: &WindowScores, wi: usize, cfg: DecodeConfig) -> Vec<Candidate> {
    let ctx = w.context_positions();
    let mut cands = Vec::new();
    for s in ctx.clone() {
        for e in s..ctx.end.min(s + cfg.max_answer_tokens) {
            let score = sc.log_start[s] + sc.log_end[e];
            if score.is_finite() {
                cands.push(Candidate {
                    window: wi,
                    start: s,
                    end: e,
                    score,
                });
            }
        }
    }
    cands.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.start.cmp(&b.start))
            .then(a.end.cmp(&b.end))
    });
    cands.truncate(cfg.n_best);
    cands
}

/// Picks the highest-scoring span over every window. The answer is empty
/// when that score is below every window's `(0, 0)` score.
pub fn decode_spans(
    id: &str,
    windows: &[EncodedWindow],
    scores: &[WindowScores],
    vocab: &Vocabulary,
    cfg: DecodeConfig,
) -> Result<Prediction, EvalError> {
    if windows.is_empty() || windows.len() != scores.len() {
        return Err(EvalError::Input(format!(
            "{} windows with {} score sets",
            windows.len(),
            scores.len()
        )));
    }
    if cfg.max_answer_tokens == 0 || cfg.n_best == 0 {
        return Err(EvalError::Input("max_answer_tokens and n_best must be positive".into()));
    }
    let mut best: Option<Candidate> = None;
    let mut min_null = f64::INFINITY;
    for (wi, (w, sc)) in windows.iter().zip(scores).enumerate() {
        if sc.log_start.len() != w.len() || sc.log_end.len() != w.len() {
            return Err(EvalError::Input(format!("window {wi} has mismatched score lengths")));
        }
        min_null = min_null.min(sc.log_start[0] + sc.log_end[0]);
        if let Some(&top) = window_top(w, sc, wi, cfg).first() {
            if best.is_none_or(|b| top.score > b.score) {
                best = Some(top);
            }
        }
    }
    match best {
        Some(b) if b.score >= min_null => {
            let w = &windows[b.window];
            let text = vocab.decode(&w.token_ids[b.start..=b.end])?;
            Ok(Prediction {
                id: id.to_string(),
                text,
                span: Some((b.window, b.start, b.end)),
                score: b.score,
            })
        }
        _ => Ok(Prediction {
            id: id.to_string(),
            text: String::new(),
            span: None,
            score: min_null,
        }),
    }
}
