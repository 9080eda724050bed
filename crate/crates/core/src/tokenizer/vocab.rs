//! Subword vocabulary: greedy pair-merge induction and longest-match
//! segmentation with `##` continuation pieces.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use super::normalize::split_words;
use super::TokenizerError;

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const CLS: u32 = 2;
pub const SEP: u32 = 3;
pub const MASK: u32 = 4;
pub const NUM_SPECIALS: usize = 5;
pub const SPECIALS: [&str; NUM_SPECIALS] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"];
pub const CONTINUATION: &str = "##";

/// One token with its half-open character range in the source text.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Token {
    pub id: u32,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    pieces: Vec<String>,
    index: HashMap<String, u32>,
    max_piece_chars: usize,
}

impl Vocabulary {
    pub fn from_pieces(pieces: Vec<String>) -> Result<Self, TokenizerError> {
        if pieces.len() <= NUM_SPECIALS {
            return Err(TokenizerError::Config(format!(
                "vocabulary needs the {NUM_SPECIALS} specials and at least one piece, got {} entries",
                pieces.len()
            )));
        }
        for (i, s) in SPECIALS.iter().enumerate() {
            if pieces[i] != *s {
                return Err(TokenizerError::Config(format!(
                    "entry {i} must be {s}, found {:?}",
                    pieces[i]
                )));
            }
        }
        let mut index = HashMap::with_capacity(pieces.len());
        for (i, p) in pieces.iter().enumerate() {
            if p.is_empty() || p == CONTINUATION || p.chars().any(char::is_whitespace) {
                return Err(TokenizerError::Config(format!("invalid piece {p:?} at id {i}")));
            }
            if index.insert(p.clone(), i as u32).is_some() {
                return Err(TokenizerError::Config(format!("duplicate piece {p:?}")));
            }
        }
        let max_piece_chars = pieces
            .iter()
            .skip(NUM_SPECIALS)
            .map(|p| p.trim_start_matches(CONTINUATION).chars().count())
            .max()
            .unwrap_or(1);
        Ok(Self {
            pieces,
            index,
            max_piece_chars,
        })
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn pieces(&self) -> &[String] {
        &self.pieces
    }

    pub fn piece(&self, id: u32) -> Option<&str> {
        self.pieces.get(id as usize).map(String::as_str)
    }

    pub fn id(&self, piece: &str) -> Option<u32> {
        self.index.get(piece).copied()
    }

    pub fn is_special(id: u32) -> bool {
        (id as usize) < NUM_SPECIALS
    }

    /// UTF-8 text, one piece per line; the line number is the id.
    pub fn to_text(&self) -> String {
        let mut s = self.pieces.join("\n");
        s.push('\n');
        s
    }

    pub fn from_text(text: &str) -> Result<Self, TokenizerError> {
        Self::from_pieces(text.lines().map(str::to_owned).collect())
    }

    pub fn save(&self, path: &Path) -> Result<(), TokenizerError> {
        std::fs::write(path, self.to_text()).map_err(|e| TokenizerError::Io(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, TokenizerError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| TokenizerError::Io(format!("{}: {e}", path.display())))?;
        Self::from_text(&text)
    }

    /// Greedy longest-match segmentation of one normalised word. Characters no
    /// piece covers become single-character `[UNK]` tokens. Ranges are
    /// character indices within `word`.
    pub fn segment_word(&self, word: &str) -> Vec<(u32, usize, usize)> {
        let chars: Vec<char> = word.chars().collect();
        let mut out = Vec::new();
        let mut i = 0;
        let mut candidate = String::new();
        while i < chars.len() {
            let mut found = None;
            let hi = chars.len().min(i + self.max_piece_chars);
            for j in (i + 1..=hi).rev() {
                candidate.clear();
                if i > 0 {
                    candidate.push_str(CONTINUATION);
                }
                candidate.extend(&chars[i..j]);
                if let Some(&id) = self.index.get(candidate.as_str()) {
                    if !Self::is_special(id) {
                        found = Some((id, j));
                        break;
                    }
                }
            }
            match found {
                Some((id, j)) => {
                    out.push((id, i, j));
                    i = j;
                }
                None => {
                    out.push((UNK, i, i + 1));
                    i += 1;
                }
            }
        }
        out
    }

    /// Tokenises raw text. Offsets index characters of `text` itself, not of
    /// its normalised form; pieces never overlap and never go backwards.
    pub fn encode(&self, text: &str) -> Vec<Token> {
        let mut out = Vec::new();
        let mut last_end = 0usize;
        for word in split_words(text) {
            for (id, a, b) in self.segment_word(&word.text) {
                let start = word.spans[a].0.max(last_end);
                let end = word.spans[b - 1].1.max(start);
                last_end = end;
                out.push(Token { id, start, end });
            }
        }
        out
    }

    /// Joins pieces back into text. Specials are dropped; word-initial pieces
    /// are separated by one space and `##` pieces attach to their left.
    pub fn decode(&self, ids: &[u32]) -> Result<String, TokenizerError> {
        let mut out = String::new();
        for &id in ids {
            let piece = self.piece(id).ok_or(TokenizerError::Index {
                id,
                vocab_size: self.len(),
            })?;
            if Self::is_special(id) {
                continue;
            }
            if let Some(rest) = piece.strip_prefix(CONTINUATION) {
                out.push_str(rest);
            } else {
                if !out.is_empty() {
                    out.push(' ');
                }
                out.push_str(piece);
            }
        }
        Ok(out)
    }
}

/// Induces a vocabulary of at most `vocab_size` entries from `corpus`.
///
/// Starts from single characters (both word-initial and `##` forms) and
/// repeatedly merges the most frequent adjacent pair, ties going to the
/// lexicographically smallest `(left, right)`. Stops early when every word
/// is a single piece.
pub fn train_vocab<S: AsRef<str>>(corpus: &[S], vocab_size: usize) -> Result<Vocabulary, TokenizerError> {
    if vocab_size < NUM_SPECIALS + 1 {
        return Err(TokenizerError::Config(format!(
            "vocab_size must be at least {}, got {vocab_size}",
            NUM_SPECIALS + 1
        )));
    }
    let mut word_counts: BTreeMap<String, u64> = BTreeMap::new();
    for line in corpus {
        for w in split_words(line.as_ref()) {
            *word_counts.entry(w.text).or_insert(0) += 1;
        }
    }
    if word_counts.is_empty() {
        return Err(TokenizerError::Input("corpus contains no words".into()));
    }

    let mut alphabet: BTreeMap<String, u64> = BTreeMap::new();
    for (w, &n) in &word_counts {
        for (i, c) in w.chars().enumerate() {
            *alphabet.entry(c.to_string()).or_insert(0) += if i == 0 { n } else { 0 };
            *alphabet.entry(format!("{CONTINUATION}{c}")).or_insert(0) += if i == 0 { 0 } else { n };
        }
    }
    let mut ranked: Vec<(String, u64)> = alphabet.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(vocab_size - NUM_SPECIALS);

    let mut pieces: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
    let mut seen: std::collections::HashSet<String> = pieces.iter().cloned().collect();
    for (p, _) in ranked {
        seen.insert(p.clone());
        pieces.push(p);
    }

    let mut words: Vec<(Vec<String>, u64)> = word_counts
        .into_iter()
        .map(|(w, n)| {
            let syms = w
                .chars()
                .enumerate()
                .map(|(i, c)| if i == 0 { c.to_string() } else { format!("{CONTINUATION}{c}") })
                .collect();
            (syms, n)
        })
        .collect();

    while pieces.len() < vocab_size {
        let mut pair_counts: BTreeMap<(&str, &str), u64> = BTreeMap::new();
        for (syms, n) in &words {
            for pair in syms.windows(2) {
                *pair_counts.entry((pair[0].as_str(), pair[1].as_str())).or_insert(0) += n;
            }
        }
        // BTreeMap iteration is lexicographic, so the first maximum wins ties.
        let Some(((l, r), _)) = pair_counts
            .iter()
            .fold(None, |best: Option<(&(&str, &str), u64)>, (k, &v)| match best {
                Some((_, bv)) if bv >= v => best,
                _ => Some((k, v)),
            })
        else {
            break;
        };
        let (left, right) = (l.to_string(), r.to_string());
        let merged = format!("{left}{}", right.trim_start_matches(CONTINUATION));
        for (syms, _) in &mut words {
            let mut i = 0;
            while i + 1 < syms.len() {
                if syms[i] == left && syms[i + 1] == right {
                    syms[i] = merged.clone();
                    syms.remove(i + 1);
                }
                i += 1;
            }
        }
        if seen.insert(merged.clone()) {
            pieces.push(merged);
        }
    }
    Vocabulary::from_pieces(pieces)
}
