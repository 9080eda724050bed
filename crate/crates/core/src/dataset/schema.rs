//! In-memory examples and the on-disk JSON document.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::tokenizer::normalize;

use super::DatasetError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subdomain {
    Temples,
    Kunds,
    Ashrams,
    Museums,
    Travel,
    GangaAarti,
    Cruise,
    FoodCourt,
    PublicToilet,
    General,
}

impl Subdomain {
    pub const ALL: [Subdomain; 10] = [
        Subdomain::Temples,
        Subdomain::Kunds,
        Subdomain::Ashrams,
        Subdomain::Museums,
        Subdomain::Travel,
        Subdomain::GangaAarti,
        Subdomain::Cruise,
        Subdomain::FoodCourt,
        Subdomain::PublicToilet,
        Subdomain::General,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Subdomain::Temples => "temples",
            Subdomain::Kunds => "kunds",
            Subdomain::Ashrams => "ashrams",
            Subdomain::Museums => "museums",
            Subdomain::Travel => "travel",
            Subdomain::GangaAarti => "ganga_aarti",
            Subdomain::Cruise => "cruise",
            Subdomain::FoodCourt => "food_court",
            Subdomain::PublicToilet => "public_toilet",
            Subdomain::General => "general",
        }
    }

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|&s| s == self).expect("listed")
    }
}

impl fmt::Display for Subdomain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Subdomain {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .iter()
            .copied()
            .find(|d| d.as_str() == s)
            .ok_or_else(|| format!("unknown subdomain {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Manual,
    Generated,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QAExample {
    pub id: String,
    pub context_id: String,
    pub subdomain: Subdomain,
    pub context: Arc<str>,
    pub question: String,
    pub answer_text: String,
    /// Offset in Unicode scalar values.
    pub answer_char_start: usize,
    pub provenance: Provenance,
}

impl QAExample {
    pub fn answer_char_end(&self) -> usize {
        self.answer_char_start + self.answer_text.chars().count()
    }

    /// Checks that the answer occurs at its recorded offset, comparing
    /// normalised forms.
    pub fn check(&self) -> Result<(), String> {
        if self.id.is_empty() {
            return Err("empty id".into());
        }
        if self.question.trim().is_empty() {
            return Err("empty question".into());
        }
        if self.answer_text.trim().is_empty() {
            return Err("empty answer_text".into());
        }
        let len = self.context.chars().count();
        let end = self.answer_char_end();
        if end > len {
            return Err(format!(
                "answer span {}..{end} runs past the context ({len} characters)",
                self.answer_char_start
            ));
        }
        let found: String = self
            .context
            .chars()
            .skip(self.answer_char_start)
            .take(end - self.answer_char_start)
            .collect();
        if normalize(&found) != normalize(&self.answer_text) {
            return Err(format!(
                "context at {} reads {found:?}, not {:?}",
                self.answer_char_start, self.answer_text
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Dataset {
    pub examples: Vec<QAExample>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QaRecord {
    pub qid: String,
    pub question: String,
    pub answer_text: String,
    pub answer_char_start: usize,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContextRecord {
    pub id: String,
    pub subdomain: String,
    pub context: String,
    pub qas: Vec<QaRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Document {
    pub version: u32,
    pub data: Vec<ContextRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Issue {
    pub id: String,
    pub reason: String,
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.id, self.reason)
    }
}

/// Valid examples plus everything that failed validation.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Validated {
    pub dataset: Dataset,
    pub issues: Vec<Issue>,
}

pub const SCHEMA_VERSION: u32 = 1;

impl Document {
    /// Converts and validates every record. With `strict`, stops at the
    /// first failure.
    pub fn validate(&self, strict: bool) -> Validated {
        let mut out = Validated::default();
        let mut seen_ctx = HashSet::new();
        let mut seen_q = HashSet::new();
        let fail = |out: &mut Validated, id: &str, reason: String| {
            out.issues.push(Issue {
                id: id.to_string(),
                reason,
            });
            strict
        };
        if self.version != SCHEMA_VERSION {
            fail(&mut out, "<document>", format!("unsupported version {}", self.version));
            return out;
        }
        for ctx in &self.data {
            if !seen_ctx.insert(ctx.id.as_str()) {
                if fail(&mut out, &ctx.id, "duplicate context id".into()) {
                    return out;
                }
                continue;
            }
            let subdomain = match ctx.subdomain.parse::<Subdomain>() {
                Ok(s) => s,
                Err(e) => {
                    if fail(&mut out, &ctx.id, e) {
                        return out;
                    }
                    continue;
                }
            };
            let context: Arc<str> = Arc::from(ctx.context.as_str());
            for qa in &ctx.qas {
                let ex = QAExample {
                    id: qa.qid.clone(),
                    context_id: ctx.id.clone(),
                    subdomain,
                    context: Arc::clone(&context),
                    question: qa.question.clone(),
                    answer_text: qa.answer_text.clone(),
                    answer_char_start: qa.answer_char_start,
                    provenance: qa.provenance,
                };
                let verdict = if !seen_q.insert(qa.qid.as_str()) {
                    Err("duplicate qid".to_string())
                } else {
                    ex.check()
                };
                match verdict {
                    Ok(()) => out.dataset.examples.push(ex),
                    Err(reason) => {
                        if fail(&mut out, &qa.qid, reason) {
                            return out;
                        }
                    }
                }
            }
        }
        out
    }
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn from_json(text: &str, strict: bool) -> Result<Self, DatasetError> {
        let doc: Document = serde_json::from_str(text).map_err(|e| DatasetError::Parse(e.to_string()))?;
        let v = doc.validate(strict);
        if v.issues.is_empty() {
            Ok(v.dataset)
        } else {
            Err(DatasetError::Validation(v.issues))
        }
    }

    pub fn load(path: &Path, strict: bool) -> Result<Self, DatasetError> {
        let text = std::fs::read_to_string(path).map_err(|e| DatasetError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text, strict)
    }

    /// Groups examples back under their contexts, in order of first use.
    pub fn to_document(&self) -> Document {
        let mut order: Vec<&str> = Vec::new();
        let mut groups: BTreeMap<&str, ContextRecord> = BTreeMap::new();
        for ex in &self.examples {
            let rec = groups.entry(ex.context_id.as_str()).or_insert_with(|| {
                order.push(ex.context_id.as_str());
                ContextRecord {
                    id: ex.context_id.clone(),
                    subdomain: ex.subdomain.as_str().to_string(),
                    context: ex.context.to_string(),
                    qas: Vec::new(),
                }
            });
            rec.qas.push(QaRecord {
                qid: ex.id.clone(),
                question: ex.question.clone(),
                answer_text: ex.answer_text.clone(),
                answer_char_start: ex.answer_char_start,
                provenance: ex.provenance,
            });
        }
        Document {
            version: SCHEMA_VERSION,
            data: order.into_iter().map(|id| groups.remove(id).expect("grouped")).collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("serializable")
    }

    pub fn save(&self, path: &Path) -> Result<(), DatasetError> {
        std::fs::write(path, self.to_json()).map_err(|e| DatasetError::Io(format!("{}: {e}", path.display())))
    }

    pub fn subdomains(&self) -> Vec<Subdomain> {
        let mut s: Vec<Subdomain> = self.examples.iter().map(|e| e.subdomain).collect();
        s.sort();
        s.dedup();
        s
    }
}
