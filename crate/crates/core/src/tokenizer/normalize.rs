//! Unicode cleanup and word splitting that remembers where every normalised
//! character came from in the original string.

use unicode_normalization::{is_nfc_quick, IsNormalized, UnicodeNormalization};

pub const DANDA: char = '\u{0964}';
pub const DOUBLE_DANDA: char = '\u{0965}';
const ZWNJ: char = '\u{200C}';
const ZWJ: char = '\u{200D}';

fn is_zero_width_joiner(c: char) -> bool {
    c == ZWJ || c == ZWNJ
}

fn is_danda(c: char) -> bool {
    c == DANDA || c == DOUBLE_DANDA
}

fn is_lossy(c: char) -> bool {
    c.is_control() && !c.is_whitespace()
}

/// A normalised word plus, for each of its characters, the half-open range of
/// original character indices it was produced from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Word {
    pub text: String,
    pub spans: Vec<(usize, usize)>,
}

impl Word {
    pub fn start(&self) -> usize {
        self.spans.first().map_or(0, |s| s.0)
    }

    pub fn end(&self) -> usize {
        self.spans.last().map_or(0, |s| s.1)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Normalized {
    pub text: String,
    pub replacements: usize,
}

/// Canonical composition, whitespace collapsed to single spaces, zero-width
/// joiners stripped at word edges and dandas split off as standalone words.
/// Non-whitespace control characters become U+FFFD and are counted.
pub fn normalize_with_report(text: &str) -> Normalized {
    let replacements = text.chars().filter(|&c| is_lossy(c)).count();
    let words = split_words(text);
    let mut out = String::with_capacity(text.len());
    for (i, w) in words.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(&w.text);
    }
    Normalized {
        text: out,
        replacements,
    }
}

pub fn normalize(text: &str) -> String {
    normalize_with_report(text).text
}

/// Splits on whitespace and around dandas, normalising each word.
pub fn split_words(text: &str) -> Vec<Word> {
    let chars: Vec<char> = text
        .chars()
        .map(|c| if is_lossy(c) { char::REPLACEMENT_CHARACTER } else { c })
        .collect();
    let mut words = Vec::new();
    let mut start: Option<usize> = None;
    let flush = |words: &mut Vec<Word>, s: usize, e: usize| {
        if let Some(w) = normalize_word(&chars, s, e) {
            words.push(w);
        }
    };
    for (i, &c) in chars.iter().enumerate() {
        if c.is_whitespace() {
            if let Some(s) = start.take() {
                flush(&mut words, s, i);
            }
        } else if is_danda(c) {
            if let Some(s) = start.take() {
                flush(&mut words, s, i);
            }
            flush(&mut words, i, i + 1);
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        flush(&mut words, s, chars.len());
    }
    words
}

fn normalize_word(chars: &[char], mut s: usize, mut e: usize) -> Option<Word> {
    while s < e && is_zero_width_joiner(chars[s]) {
        s += 1;
    }
    while e > s && is_zero_width_joiner(chars[e - 1]) {
        e -= 1;
    }
    if s == e {
        return None;
    }
    let orig = &chars[s..e];
    if is_nfc_quick(orig.iter().copied()) == IsNormalized::Yes {
        return Some(Word {
            text: orig.iter().collect(),
            spans: (s..e).map(|i| (i, i + 1)).collect(),
        });
    }
    Some(align_nfc(orig, s))
}

/// Composes `orig` and maps each output character to the original range of
/// the smallest independently-normalisable segment that produced it.
fn align_nfc(orig: &[char], base: usize) -> Word {
    let nfc = |cs: &[char]| -> Vec<char> { cs.iter().copied().nfc().collect() };
    let full = nfc(orig);
    let mut spans = Vec::with_capacity(full.len());
    let mut seg_start = 0usize;
    let mut produced = 0usize;
    for cut in 1..=orig.len() {
        let left = nfc(&orig[..cut]);
        let stable = cut == orig.len() || {
            let mut joined = left.clone();
            joined.extend(nfc(&orig[cut..]));
            joined == full
        };
        if stable {
            for _ in produced..left.len() {
                spans.push((base + seg_start, base + cut));
            }
            produced = left.len();
            seg_start = cut;
        }
    }
    Word {
        text: full.into_iter().collect(),
        spans,
    }
}

/// Text form used for comparing answers: [`normalize`], then dandas and ASCII
/// punctuation removed, whitespace re-collapsed.
pub fn normalize_for_match(text: &str) -> String {
    let cleaned: String = normalize(text)
        .chars()
        .map(|c| if is_danda(c) || c.is_ascii_punctuation() { ' ' } else { c })
        .collect();
    cleaned.split_whitespace().collect::<Vec<_>>().join(" ")
}
