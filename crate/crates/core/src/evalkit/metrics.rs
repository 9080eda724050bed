//! Answer-comparison metrics on a 0–100 scale. Both sides go through
//! [`normalize_for_match`] and are split on whitespace.

use std::collections::HashMap;

use crate::tokenizer::normalize_for_match;

pub fn match_tokens(text: &str) -> Vec<String> {
    normalize_for_match(text).split_whitespace().map(str::to_string).collect()
}

fn counts<'a>(tokens: impl IntoIterator<Item = &'a [String]>) -> HashMap<&'a [String], usize> {
    let mut m = HashMap::new();
    for t in tokens {
        *m.entry(t).or_insert(0) += 1;
    }
    m
}

/// Harmonic mean of multiset-overlap precision and recall.
pub fn token_f1(prediction: &str, gold: &str) -> f64 {
    let p = match_tokens(prediction);
    let g = match_tokens(gold);
    match (p.is_empty(), g.is_empty()) {
        (true, true) => return 100.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let pc = counts(p.chunks(1));
    let gc = counts(g.chunks(1));
    let overlap: usize = pc.iter().map(|(k, &c)| c.min(*gc.get(k).unwrap_or(&0))).sum();
    if overlap == 0 {
        return 0.0;
    }
    let precision = overlap as f64 / p.len() as f64;
    let recall = overlap as f64 / g.len() as f64;
    200.0 * precision * recall / (precision + recall)
}

/// Sentence-level BLEU-4 with uniform weights. Orders 2–4 with no clipped
/// match use `(0 + 1) / (total + 1)`.
pub fn bleu(prediction: &str, gold: &str) -> f64 {
    let p = match_tokens(prediction);
    let g = match_tokens(gold);
    if p.is_empty() {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 1..=4usize {
        let total = p.len().saturating_sub(n - 1);
        let pc = counts(p.windows(n));
        let gc = counts(g.windows(n));
        let matched: usize = pc.iter().map(|(k, &c)| c.min(*gc.get(k).unwrap_or(&0))).sum();
        let precision = if matched == 0 {
            if n == 1 {
                return 0.0;
            }
            1.0 / (total as f64 + 1.0)
        } else {
            matched as f64 / total as f64
        };
        log_sum += 0.25 * precision.ln();
    }
    let bp = if p.len() < g.len() {
        (1.0 - g.len() as f64 / p.len() as f64).exp()
    } else {
        1.0
    };
    (100.0 * bp * log_sum.exp()).clamp(0.0, 100.0)
}

/// Length of the longest common subsequence of two token lists.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// LCS-based F-measure with β = 1.
pub fn rouge_l(prediction: &str, gold: &str) -> f64 {
    let p = match_tokens(prediction);
    let g = match_tokens(gold);
    if p.is_empty() && g.is_empty() {
        return 100.0;
    }
    if p.is_empty() || g.is_empty() {
        return 0.0;
    }
    let l = lcs_len(&p, &g);
    if l == 0 {
        return 0.0;
    }
    let precision = l as f64 / p.len() as f64;
    let recall = l as f64 / g.len() as f64;
    200.0 * precision * recall / (precision + recall)
}
