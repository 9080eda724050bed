//! Seeded generators for fuzzed inputs.

use std::sync::Arc;

use rand::rngs::StdRng;
use rand::Rng;

use spanforge::dataset::{Provenance, QAExample, Subdomain};
use spanforge::encoder::span_candidates;
use spanforge::evalkit::{log_softmax_masked, WindowScores};
use spanforge::tokenizer::{
    encode_pair, pack_windows, train_vocab, EncodedWindow, Token, Vocabulary, WindowConfig, SPECIALS,
};

use super::rng;

const LETTERS: [&str; 28] = [
    "क", "ख", "ग", "च", "ज", "त", "द", "न", "प", "म", "र", "ल", "स", "ह", "ा", "ि", "ी", "ु", "े", "ो", "ं", "a",
    "b", "e", "n", "r", "1", "7",
];

pub fn random_word(r: &mut StdRng) -> String {
    (0..r.random_range(1..=5)).map(|_| LETTERS[r.random_range(0..LETTERS.len())]).collect()
}

/// Words from a small pool, so that pairs of strings overlap often, with
/// stray punctuation, dandas and irregular spacing.
pub fn metric_text(r: &mut StdRng, pool: &[String]) -> String {
    let n = r.random_range(0..=9);
    let mut s = String::new();
    for _ in 0..n {
        s.push_str(&pool[r.random_range(0..pool.len())]);
        match r.random_range(0..10) {
            0 => s.push_str(", "),
            1 => s.push_str(" । "),
            2 => s.push_str("  "),
            3 => s.push('?'),
            _ => s.push(' '),
        }
    }
    s
}

pub fn metric_pair(seed: u64) -> (String, String) {
    let mut r = rng(seed);
    let pool: Vec<String> = (0..r.random_range(2..=8)).map(|_| random_word(&mut r)).collect();
    let a = metric_text(&mut r, &pool);
    let b = if r.random_bool(0.1) { a.clone() } else { metric_text(&mut r, &pool) };
    (a, b)
}

/// Specials plus `t0 … t{n-1}`.
pub fn numbered_vocab(n: usize) -> Vocabulary {
    let mut pieces: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
    pieces.extend((0..n).map(|i| format!("t{i}")));
    Vocabulary::from_pieces(pieces).unwrap()
}

pub struct DecodeCase {
    pub windows: Vec<EncodedWindow>,
    pub scores: Vec<WindowScores>,
    pub vocab: Vocabulary,
    pub max_answer: usize,
    pub n_best: usize,
}

/// One to three windows of length ≤ 64 whose start/end scores are coarse
/// integers, so ties are common, pushed through the masked log-softmax.
pub fn decode_case(seed: u64) -> DecodeCase {
    let mut r = rng(seed);
    let vocab = numbered_vocab(30);
    let q: Vec<u32> = (0..r.random_range(1..=6)).map(|_| r.random_range(5..35)).collect();
    let max_len = r.random_range(q.len() + 6..=64);
    let capacity = max_len - q.len() - 3;
    let stride = r.random_range(0..capacity);
    let step = capacity - stride;
    let n_windows = r.random_range(1..=3usize);
    let most = capacity + (n_windows - 1) * step;
    let least = if n_windows == 1 { 1 } else { capacity + (n_windows - 2) * step + 1 };
    let n_ctx = r.random_range(least..=most);
    let ctx: Vec<Token> = (0..n_ctx)
        .map(|i| Token {
            id: r.random_range(5..35),
            start: 3 * i,
            end: 3 * i + 2,
        })
        .collect();
    let windows = pack_windows(&q, &ctx, WindowConfig { max_len, stride }).unwrap();
    assert_eq!(windows.len(), n_windows);
    let favour_null = r.random_bool(0.2);
    let scores = windows
        .iter()
        .map(|w| {
            let valid = span_candidates(w);
            let raw = |r: &mut StdRng| -> Vec<f64> {
                let mut v: Vec<f64> = (0..w.len()).map(|_| r.random_range(-2..=2) as f64).collect();
                if favour_null {
                    v[0] = 4.0;
                }
                v
            };
            let (s, e) = (raw(&mut r), raw(&mut r));
            WindowScores {
                log_start: log_softmax_masked(&s, &valid),
                log_end: log_softmax_masked(&e, &valid),
            }
        })
        .collect();
    DecodeCase {
        windows,
        scores,
        vocab,
        max_answer: if r.random_bool(0.3) { 50 } else { r.random_range(1..=8) },
        n_best: r.random_range(1..=20),
    }
}

pub struct AlignCase {
    pub example: QAExample,
    pub vocab: Vocabulary,
    pub windows: Vec<EncodedWindow>,
    /// Every context token.
    pub tokens: Vec<Token>,
}

/// A random context, an answer cut from it at arbitrary character positions
/// (trimmed of surrounding blanks), and one to three windows.
pub fn align_case(seed: u64) -> AlignCase {
    let mut r = rng(seed);
    let n_words = r.random_range(3..=30);
    let mut context = String::new();
    for i in 0..n_words {
        if i > 0 {
            context.push_str(if r.random_bool(0.1) { " । " } else { " " });
        }
        context.push_str(&random_word(&mut r));
    }
    let chars: Vec<char> = context.chars().collect();
    let (start, answer) = loop {
        let a = r.random_range(0..chars.len());
        let b = r.random_range(a + 1..=chars.len().min(a + 25));
        let slice: String = chars[a..b].iter().collect();
        let lead = slice.chars().take_while(|c| c.is_whitespace()).count();
        let trimmed = slice.trim().to_string();
        if !trimmed.is_empty() {
            break (a + lead, trimmed);
        }
    };
    let distinct = {
        let mut cs = chars.clone();
        cs.sort();
        cs.dedup();
        cs.len()
    };
    let vocab = train_vocab(&[context.as_str()], 5 + 2 * distinct + r.random_range(0..60)).unwrap();
    let question = random_word(&mut r);
    let q_len = vocab.encode(&question).len();
    let tokens = vocab.encode(&context);
    let mut capacity = r.random_range(2..=tokens.len().max(2));
    let stride = loop {
        let stride = r.random_range(0..capacity);
        let step = capacity - stride;
        let n = 1 + tokens.len().saturating_sub(capacity).div_ceil(step);
        if n <= 3 {
            break stride;
        }
        capacity += 1;
    };
    let cfg = WindowConfig {
        max_len: capacity + q_len + 3,
        stride,
    };
    let example = QAExample {
        id: format!("fuzz-{seed}"),
        context_id: "ctx".into(),
        subdomain: Subdomain::General,
        context: Arc::from(context.as_str()),
        question: question.clone(),
        answer_text: answer,
        answer_char_start: start,
        provenance: Provenance::Manual,
    };
    let windows = encode_pair(&question, &context, &vocab, cfg).unwrap();
    AlignCase {
        example,
        vocab,
        windows,
        tokens,
    }
}

/// Checks one alignment case; `Err` describes the first violation.
///
/// A window holds the gold span when every context token overlapping the
/// answer characters lies inside it. Such windows must yield exactly those
/// tokens, and their decoded text must contain the answer (ignoring the
/// spaces that decoding inserts between words); all others yield `(0, 0)`.
pub fn check_alignment(case: &AlignCase) -> Result<(), String> {
    let ex = &case.example;
    let (a, b) = (ex.answer_char_start, ex.answer_char_end());
    let hit: Vec<usize> = (0..case.tokens.len())
        .filter(|&i| case.tokens[i].end > a && case.tokens[i].start < b)
        .collect();
    let squash = |s: &str| -> String { s.chars().filter(|c| !c.is_whitespace()).collect() };
    for w in &case.windows {
        let got = spanforge::dataset::align_answer(ex, w);
        let r = &w.context_token_range;
        let holds = !hit.is_empty() && hit.iter().all(|i| r.contains(i));
        if !holds {
            if got != (0, 0) {
                return Err(format!("window {} lacks the answer but aligned to {got:?}", w.window_index));
            }
            continue;
        }
        let want = (
            w.context_start + hit[0] - r.start,
            w.context_start + hit[hit.len() - 1] - r.start,
        );
        if got != want {
            return Err(format!("window {}: aligned to {got:?}, expected {want:?}", w.window_index));
        }
        let text = case.vocab.decode(&w.token_ids[got.0..=got.1]).unwrap();
        if !squash(&text).contains(&squash(&ex.answer_text)) {
            return Err(format!("window {}: {text:?} does not contain {:?}", w.window_index, ex.answer_text));
        }
    }
    Ok(())
}

/// `n` valid examples spread unevenly over subdomains and a few contexts,
/// with some near-duplicate questions.
pub fn random_dataset(seed: u64, n: usize) -> spanforge::dataset::Dataset {
    let mut r = rng(seed);
    let contexts: Vec<Arc<str>> = (0..r.random_range(1..=4))
        .map(|_| {
            let words: Vec<String> = (0..6).map(|_| random_word(&mut r)).collect();
            Arc::from(words.join(" ").as_str())
        })
        .collect();
    let stems: Vec<String> = (0..4).map(|_| format!("{} {} {}", random_word(&mut r), random_word(&mut r), random_word(&mut r))).collect();
    let examples = (0..n)
        .map(|i| {
            let c = r.random_range(0..contexts.len());
            let context = contexts[c].clone();
            let answer = context.split(' ').next().unwrap().to_string();
            let stem = &stems[r.random_range(0..stems.len())];
            let question = if r.random_bool(0.5) { format!("{stem}?") } else { format!("{stem} {}?", random_word(&mut r)) };
            QAExample {
                id: format!("e{i}"),
                context_id: format!("c{c}"),
                subdomain: Subdomain::ALL[r.random_range(0..4)],
                context,
                question,
                answer_text: answer,
                answer_char_start: 0,
                provenance: if r.random_bool(0.5) { Provenance::Manual } else { Provenance::Generated },
            }
        })
        .collect();
    spanforge::dataset::Dataset { examples }
}
