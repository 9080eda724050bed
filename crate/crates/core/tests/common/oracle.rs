//! Deliberately naive reference implementations: plain loops, quadratic
//! scans and exhaustive enumeration, written from the definitions rather
//! than from the library code.

use spanforge::evalkit::{Prediction, WindowScores};
use spanforge::tokenizer::{normalize_for_match, EncodedWindow, Vocabulary};

fn words(s: &str) -> Vec<String> {
    normalize_for_match(s).split(' ').filter(|w| !w.is_empty()).map(String::from).collect()
}

/// Number of items of `pred` that can be paired one-to-one with equal items
/// of `gold`, found by crossing off matches.
fn clipped_matches<T: PartialEq + Clone>(pred: &[T], gold: &[T]) -> usize {
    let mut pool: Vec<Option<T>> = gold.iter().cloned().map(Some).collect();
    let mut hits = 0;
    for p in pred {
        if let Some(slot) = pool.iter_mut().find(|g| g.as_ref() == Some(p)) {
            *slot = None;
            hits += 1;
        }
    }
    hits
}

pub fn f1(pred: &str, gold: &str) -> f64 {
    let (p, g) = (words(pred), words(gold));
    if p.is_empty() || g.is_empty() {
        return if p.is_empty() && g.is_empty() { 100.0 } else { 0.0 };
    }
    let o = clipped_matches(&p, &g) as f64;
    if o == 0.0 {
        return 0.0;
    }
    let (pr, rc) = (o / p.len() as f64, o / g.len() as f64);
    200.0 * pr * rc / (pr + rc)
}

fn ngrams(t: &[String], n: usize) -> Vec<Vec<String>> {
    if t.len() < n {
        return vec![];
    }
    (0..=t.len() - n).map(|i| t[i..i + n].to_vec()).collect()
}

pub fn bleu(pred: &str, gold: &str) -> f64 {
    let (p, g) = (words(pred), words(gold));
    if p.is_empty() {
        return 0.0;
    }
    let mut product = 1.0f64;
    for n in 1..=4 {
        let pg = ngrams(&p, n);
        let hits = clipped_matches(&pg, &ngrams(&g, n)) as f64;
        let precision = match (hits == 0.0, n) {
            (true, 1) => return 0.0,
            (true, _) => 1.0 / (pg.len() as f64 + 1.0),
            (false, _) => hits / pg.len() as f64,
        };
        product *= precision.powf(0.25);
    }
    let bp = if p.len() < g.len() {
        (1.0 - g.len() as f64 / p.len() as f64).exp()
    } else {
        1.0
    };
    100.0 * bp * product
}

/// LCS length by memoised recursion over suffixes.
pub fn lcs(a: &[String], b: &[String]) -> usize {
    fn go(a: &[String], b: &[String], i: usize, j: usize, memo: &mut Vec<Vec<Option<usize>>>) -> usize {
        if i == a.len() || j == b.len() {
            return 0;
        }
        if let Some(v) = memo[i][j] {
            return v;
        }
        let v = if a[i] == b[j] {
            1 + go(a, b, i + 1, j + 1, memo)
        } else {
            go(a, b, i + 1, j, memo).max(go(a, b, i, j + 1, memo))
        };
        memo[i][j] = Some(v);
        v
    }
    let mut memo = vec![vec![None; b.len()]; a.len()];
    go(a, b, 0, 0, &mut memo)
}

pub fn rouge(pred: &str, gold: &str) -> f64 {
    let (p, g) = (words(pred), words(gold));
    if p.is_empty() && g.is_empty() {
        return 100.0;
    }
    if p.is_empty() || g.is_empty() {
        return 0.0;
    }
    let l = lcs(&p, &g) as f64;
    if l == 0.0 {
        return 0.0;
    }
    let (pr, rc) = (l / p.len() as f64, l / g.len() as f64);
    100.0 * 2.0 * pr * rc / (pr + rc)
}

/// Scores every `(window, s, e)` with both ends in the context and
/// `e − s < max_answer`, keeping the first maximum in (window, s, e) order.
/// Empty when that maximum is below every window's `(0, 0)` score.
pub fn decode(
    windows: &[EncodedWindow],
    scores: &[WindowScores],
    vocab: &Vocabulary,
    max_answer: usize,
) -> (String, Option<(usize, usize, usize)>, f64) {
    let mut best: Option<((usize, usize, usize), f64)> = None;
    for (wi, (w, sc)) in windows.iter().zip(scores).enumerate() {
        for s in 0..w.len() {
            for e in s..w.len() {
                let inside = w.context_positions().contains(&s) && w.context_positions().contains(&e);
                if !inside || e - s >= max_answer {
                    continue;
                }
                let v = sc.log_start[s] + sc.log_end[e];
                if v == f64::NEG_INFINITY {
                    continue;
                }
                if best.is_none() || v > best.unwrap().1 {
                    best = Some(((wi, s, e), v));
                }
            }
        }
    }
    let nulls: Vec<f64> = scores.iter().map(|sc| sc.log_start[0] + sc.log_end[0]).collect();
    let below_all = |v: f64| nulls.iter().all(|&n| v < n);
    match best {
        Some(((wi, s, e), v)) if !below_all(v) => {
            let text = vocab.decode(&windows[wi].token_ids[s..=e]).unwrap();
            (text, Some((wi, s, e)), v)
        }
        _ => (String::new(), None, nulls.iter().copied().fold(f64::INFINITY, f64::min)),
    }
}

pub fn same_prediction(p: &Prediction, o: &(String, Option<(usize, usize, usize)>, f64)) -> bool {
    p.text == o.0 && p.span == o.1 && (p.score == o.2 || (p.score - o.2).abs() < 1e-12)
}
