use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::Arc;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::rng::SeedStream;
use crate::tokenizer::{normalize, normalize_for_match, EncodedWindow};

use super::schema::{Dataset, Issue, Provenance, QAExample, Subdomain};
use super::DatasetError;

/// Gold token span of `example` inside `window`, or `(0, 0)` (the `[CLS]`
/// slot) unless every context token overlapping the answer lies in the
/// window.
pub fn align_answer(example: &QAExample, window: &EncodedWindow) -> (usize, usize) {
    let a = example.answer_char_start;
    let b = example.answer_char_end();
    if b <= a {
        return (0, 0);
    }
    if window.prev_token_end.is_some_and(|e| e > a) || window.next_token_start.is_some_and(|s| s < b) {
        return (0, 0);
    }
    let mut start = None;
    let mut end = None;
    for pos in window.context_positions() {
        let Some((ts, te)) = window.offsets[pos] else { continue };
        if te > a && ts < b {
            start.get_or_insert(pos);
            end = Some(pos);
        }
    }
    match (start, end) {
        (Some(s), Some(e)) => (s, e),
        _ => (0, 0),
    }
}

/// Stratified split: each subdomain is shuffled with its own seeded stream
/// and its first `floor(fraction · n)` members go to train. Both halves keep
/// the dataset's original order.
pub fn split(dataset: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset), DatasetError> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(DatasetError::Input(format!("train fraction {train_fraction} outside (0, 1)")));
    }
    if dataset.is_empty() {
        return Err(DatasetError::Input("cannot split an empty dataset".into()));
    }
    let mut in_train = vec![false; dataset.len()];
    let root = SeedStream::new(seed);
    for sub in Subdomain::ALL {
        let mut members: Vec<usize> = (0..dataset.len())
            .filter(|&i| dataset.examples[i].subdomain == sub)
            .collect();
        let n_train = train_size(members.len(), train_fraction);
        members.shuffle(&mut root.fork("split", sub.index() as u64).rng());
        for &i in &members[..n_train] {
            in_train[i] = true;
        }
    }
    let (mut train, mut test) = (Dataset::default(), Dataset::default());
    for (ex, t) in dataset.examples.iter().zip(in_train) {
        if t {
            train.examples.push(ex.clone());
        } else {
            test.examples.push(ex.clone());
        }
    }
    Ok((train, test))
}

/// `floor(fraction · n)`, with a small allowance so that e.g. `0.8 · 10`
/// does not round down to 7.
pub fn train_size(n: usize, fraction: f64) -> usize {
    ((fraction * n as f64) + 1e-9).floor() as usize
}

/// A question/answer pair produced outside this toolkit for a known context.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawPair {
    pub context_id: String,
    #[serde(default)]
    pub qid: Option<String>,
    pub question: String,
    pub answer_text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Ingested {
    /// The base examples followed by every accepted pair.
    pub dataset: Dataset,
    pub accepted: usize,
    pub rejected: Vec<Issue>,
}

/// Normalises generated pairs and locates each answer at its first exact
/// occurrence in the referenced context.
pub fn ingest_generated(raw: &[RawPair], base: &Dataset) -> Ingested {
    let mut contexts: HashMap<&str, (&Arc<str>, Subdomain)> = HashMap::new();
    for ex in &base.examples {
        contexts
            .entry(ex.context_id.as_str())
            .or_insert((&ex.context, ex.subdomain));
    }
    let mut taken: std::collections::HashSet<String> = base.examples.iter().map(|e| e.id.clone()).collect();
    let mut out = Ingested {
        dataset: base.clone(),
        ..Ingested::default()
    };
    for (n, pair) in raw.iter().enumerate() {
        let id = pair.qid.clone().unwrap_or_else(|| format!("{}-gen{n}", pair.context_id));
        let mut reject = |reason: String| {
            out.rejected.push(Issue {
                id: id.clone(),
                reason,
            })
        };
        let Some(&(context, subdomain)) = contexts.get(pair.context_id.as_str()) else {
            reject(format!("unknown context id {}", pair.context_id));
            continue;
        };
        let question = normalize(&pair.question);
        let answer = normalize(&pair.answer_text);
        if question.is_empty() || answer.is_empty() {
            reject("empty question or answer".into());
            continue;
        }
        if taken.contains(&id) {
            reject("duplicate qid".into());
            continue;
        }
        let Some(byte) = context.find(&answer) else {
            reject("answer not found in context".into());
            continue;
        };
        taken.insert(id.clone());
        out.dataset.examples.push(QAExample {
            id,
            context_id: pair.context_id.clone(),
            subdomain,
            context: Arc::clone(context),
            question,
            answer_text: answer,
            answer_char_start: context[..byte].chars().count(),
            provenance: Provenance::Generated,
        });
        out.accepted += 1;
    }
    out
}

/// Function words ignored when comparing questions.
pub const STOP_WORDS: [&str; 21] = [
    "क्या", "में", "है", "हैं", "का", "की", "के", "को", "से", "पर", "और", "भी", "ने", "एक", "यह", "वह", "तो", "ही", "था",
    "थे", "थी",
];

fn is_stop_word(w: &str) -> bool {
    STOP_WORDS.contains(&w)
}

/// Character trigram counts of the question's content words joined by
/// single spaces.
pub fn trigram_profile(question: &str) -> BTreeMap<[char; 3], u32> {
    let m = normalize_for_match(question);
    let content: Vec<&str> = m.split(' ').filter(|w| !w.is_empty() && !is_stop_word(w)).collect();
    let chars: Vec<char> = content.join(" ").chars().collect();
    let mut counts = BTreeMap::new();
    for g in chars.windows(3) {
        *counts.entry([g[0], g[1], g[2]]).or_insert(0) += 1;
    }
    counts
}

/// Cosine similarity of trigram profiles. Two questions without any
/// trigram are identical (1) only if their match forms are equal.
pub fn question_similarity(a: &str, b: &str) -> f64 {
    let (pa, pb) = (trigram_profile(a), trigram_profile(b));
    if pa.is_empty() || pb.is_empty() {
        return if normalize_for_match(a) == normalize_for_match(b) { 1.0 } else { 0.0 };
    }
    if pa == pb {
        return 1.0;
    }
    let dot: f64 = pa
        .iter()
        .filter_map(|(g, &x)| pb.get(g).map(|&y| f64::from(x) * f64::from(y)))
        .sum();
    let norm = |p: &BTreeMap<[char; 3], u32>| p.values().map(|&v| f64::from(v).powi(2)).sum::<f64>().sqrt();
    (dot / (norm(&pa) * norm(&pb))).min(1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Removal {
    pub kept_id: String,
    pub dropped_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DedupResult {
    pub kept: Dataset,
    pub removed: Vec<Removal>,
}

/// Within each context, visits manual questions then generated ones (each
/// in dataset order) and drops any question whose similarity to an already
/// kept one reaches `threshold`.
pub fn dedup(dataset: &Dataset, threshold: f64) -> Result<DedupResult, DatasetError> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(DatasetError::Input(format!("similarity threshold {threshold} outside (0, 1]")));
    }
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, ex) in dataset.examples.iter().enumerate() {
        groups.entry(ex.context_id.as_str()).or_default().push(i);
    }
    let mut keep = vec![true; dataset.len()];
    let mut removed = Vec::new();
    for members in groups.values() {
        let mut order = members.clone();
        order.sort_by_key(|&i| (dataset.examples[i].provenance, i));
        let mut kept: Vec<usize> = Vec::new();
        for i in order {
            let q = &dataset.examples[i].question;
            let hit = kept
                .iter()
                .map(|&k| (k, question_similarity(&dataset.examples[k].question, q)))
                .find(|&(_, s)| s >= threshold);
            match hit {
                Some((k, score)) => {
                    keep[i] = false;
                    removed.push(Removal {
                        kept_id: dataset.examples[k].id.clone(),
                        dropped_id: dataset.examples[i].id.clone(),
                        score,
                    });
                }
                None => kept.push(i),
            }
        }
    }
    let kept = Dataset {
        examples: dataset
            .examples
            .iter()
            .zip(&keep)
            .filter(|(_, &k)| k)
            .map(|(e, _)| e.clone())
            .collect(),
    };
    Ok(DedupResult { kept, removed })
}

/// Cohen's κ for two raters over the same items.
pub fn cohen_kappa<L: Ord>(a: &[L], b: &[L]) -> Result<f64, DatasetError> {
    if a.len() != b.len() {
        return Err(DatasetError::Input(format!("label vectors differ in length: {} vs {}", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(DatasetError::Input("kappa needs at least one item".into()));
    }
    let n = a.len() as f64;
    let agree = a.iter().zip(b).filter(|(x, y)| x == y).count() as f64;
    let mut marg: BTreeMap<&L, (usize, usize)> = BTreeMap::new();
    for x in a {
        marg.entry(x).or_default().0 += 1;
    }
    for y in b {
        marg.entry(y).or_default().1 += 1;
    }
    let p_o = agree / n;
    let p_e: f64 = marg.values().map(|&(ca, cb)| (ca as f64 / n) * (cb as f64 / n)).sum();
    if (1.0 - p_e).abs() < 1e-15 {
        return Ok(if p_o == 1.0 { 1.0 } else { 0.0 });
    }
    Ok((p_o - p_e) / (1.0 - p_e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct CountRow {
    pub manual: usize,
    pub generated: usize,
}

impl CountRow {
    pub fn total(&self) -> usize {
        self.manual + self.generated
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SubdomainReport {
    pub rows: Vec<(Subdomain, CountRow)>,
    pub totals: CountRow,
}

pub fn subdomain_report(dataset: &Dataset) -> SubdomainReport {
    let mut rows: Vec<(Subdomain, CountRow)> = Subdomain::ALL.iter().map(|&s| (s, CountRow::default())).collect();
    for ex in &dataset.examples {
        let row = &mut rows[ex.subdomain.index()].1;
        match ex.provenance {
            Provenance::Manual => row.manual += 1,
            Provenance::Generated => row.generated += 1,
        }
    }
    let totals = rows.iter().fold(CountRow::default(), |acc, (_, r)| CountRow {
        manual: acc.manual + r.manual,
        generated: acc.generated + r.generated,
    });
    SubdomainReport { rows, totals }
}

impl SubdomainReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("subdomain,manual,generated,total\n");
        for (d, r) in &self.rows {
            s.push_str(&format!("{d},{},{},{}\n", r.manual, r.generated, r.total()));
        }
        let t = self.totals;
        s.push_str(&format!("total,{},{},{}\n", t.manual, t.generated, t.total()));
        s
    }
}

impl fmt::Display for SubdomainReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<14} {:>8} {:>10} {:>8}", "subdomain", "manual", "generated", "total")?;
        for (d, r) in &self.rows {
            writeln!(f, "{:<14} {:>8} {:>10} {:>8}", d.as_str(), r.manual, r.generated, r.total())?;
        }
        let t = self.totals;
        write!(f, "{:<14} {:>8} {:>10} {:>8}", "total", t.manual, t.generated, t.total())
    }
}
