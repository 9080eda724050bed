use std::fmt;

use serde::Serialize;

use crate::dataset::{Dataset, Subdomain};
use crate::encoder::Encoder;
use crate::exec::Exec;
use crate::tokenizer::{encode_pair, Vocabulary, WindowConfig};

use super::decode::{decode_spans, window_scores, DecodeConfig, Prediction};
use super::metrics::{bleu, rouge_l, token_f1};
use super::EvalError;

pub const MERGED: &str = "merged";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub subdomain: String,
    pub model: String,
    pub f1: f64,
    pub bleu: f64,
    #[serde(rename = "rougeL")]
    pub rouge_l: f64,
    pub examples: usize,
}

/// Per-subdomain means plus a pooled row over every example.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DomainReport {
    pub rows: Vec<ReportRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExampleScores {
    pub f1: f64,
    pub bleu: f64,
    pub rouge_l: f64,
}

pub fn score(prediction: &str, gold: &str) -> ExampleScores {
    ExampleScores {
        f1: token_f1(prediction, gold),
        bleu: bleu(prediction, gold),
        rouge_l: rouge_l(prediction, gold),
    }
}

fn mean_row(subdomain: &str, model: &str, scores: &[ExampleScores]) -> ReportRow {
    let n = scores.len() as f64;
    let avg = |f: fn(&ExampleScores) -> f64| scores.iter().map(f).sum::<f64>() / n;
    ReportRow {
        subdomain: subdomain.to_string(),
        model: model.to_string(),
        f1: avg(|s| s.f1),
        bleu: avg(|s| s.bleu),
        rouge_l: avg(|s| s.rouge_l),
        examples: scores.len(),
    }
}

/// Builds a report from predictions already aligned with `dataset`.
pub fn report_from_predictions(dataset: &Dataset, texts: &[String], model: &str) -> Result<DomainReport, EvalError> {
    if dataset.is_empty() || dataset.len() != texts.len() {
        return Err(EvalError::Input(format!(
            "{} examples with {} predictions",
            dataset.len(),
            texts.len()
        )));
    }
    let scores: Vec<ExampleScores> = dataset
        .examples
        .iter()
        .zip(texts)
        .map(|(ex, p)| score(p, &ex.answer_text))
        .collect();
    let mut rows = Vec::new();
    for sub in Subdomain::ALL {
        let mine: Vec<ExampleScores> = dataset
            .examples
            .iter()
            .zip(&scores)
            .filter(|(ex, _)| ex.subdomain == sub)
            .map(|(_, s)| *s)
            .collect();
        if !mine.is_empty() {
            rows.push(mean_row(sub.as_str(), model, &mine));
        }
    }
    rows.push(mean_row(MERGED, model, &scores));
    Ok(DomainReport { rows })
}

/// Encodes, scores and decodes every example, then aggregates metrics.
pub fn evaluate(
    model: &Encoder<f32>,
    vocab: &Vocabulary,
    dataset: &Dataset,
    window: WindowConfig,
    decode: DecodeConfig,
    tag: &str,
    exec: Exec,
) -> Result<(DomainReport, Vec<Prediction>), EvalError> {
    if dataset.is_empty() {
        return Err(EvalError::Input("cannot evaluate an empty split".into()));
    }
    let preds = exec.map(&dataset.examples, |_, ex| {
        predict(model, vocab, &ex.id, &ex.question, &ex.context, window, decode)
    });
    let preds: Vec<Prediction> = preds.into_iter().collect::<Result<_, _>>()?;
    let texts: Vec<String> = preds.iter().map(|p| p.text.clone()).collect();
    Ok((report_from_predictions(dataset, &texts, tag)?, preds))
}

pub fn predict(
    model: &Encoder<f32>,
    vocab: &Vocabulary,
    id: &str,
    question: &str,
    context: &str,
    window: WindowConfig,
    decode: DecodeConfig,
) -> Result<Prediction, EvalError> {
    let windows: Vec<_> = encode_pair(question, context, vocab, window)?
        .iter()
        .map(|w| w.trimmed())
        .collect();
    let scores = windows
        .iter()
        .map(|w| window_scores(model, w))
        .collect::<Result<Vec<_>, _>>()?;
    decode_spans(id, &windows, &scores, vocab, decode)
}

impl DomainReport {
    pub fn merged(&self) -> &ReportRow {
        self.rows.last().expect("report always has the merged row")
    }

    pub fn row(&self, subdomain: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.subdomain == subdomain)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("subdomain,model,f1,bleu,rougeL\n");
        for r in &self.rows {
            s.push_str(&format!("{},{},{},{},{}\n", r.subdomain, r.model, r.f1, r.bleu, r.rouge_l));
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable")
    }
}

impl fmt::Display for DomainReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mw = self.rows.iter().map(|r| r.model.chars().count()).max().unwrap_or(5).max(5);
        writeln!(f, "{:<14} {:<mw$} {:>8} {:>8} {:>8}", "subdomain", "model", "F1", "BLEU", "RougeL")?;
        for (i, r) in self.rows.iter().enumerate() {
            write!(
                f,
                "{:<14} {:<mw$} {:>8.3} {:>8.3} {:>8.3}",
                r.subdomain, r.model, r.f1, r.bleu, r.rouge_l
            )?;
            if i + 1 < self.rows.len() {
                writeln!(f)?;
            }
        }
        Ok(())
    }
}
