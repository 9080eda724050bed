//! Dataset schema and validation, answer alignment, splitting, ingestion of
//! generated pairs, duplicate filtering, annotator agreement and counts.

mod ops;
mod schema;

pub use ops::{
    align_answer, cohen_kappa, dedup, ingest_generated, question_similarity, split, subdomain_report, train_size,
    trigram_profile, CountRow, DedupResult, Ingested, RawPair, Removal, SubdomainReport, STOP_WORDS,
};
pub use schema::{
    ContextRecord, Dataset, Document, Issue, Provenance, QAExample, QaRecord, Subdomain, Validated, SCHEMA_VERSION,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DatasetError {
    #[error("cannot parse dataset: {0}")]
    Parse(String),
    #[error("dataset validation failed for {}", list_ids(.0))]
    Validation(Vec<Issue>),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("i/o error: {0}")]
    Io(String),
}

fn list_ids(issues: &[Issue]) -> String {
    issues.iter().map(|i| i.to_string()).collect::<Vec<_>>().join("; ")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::{encode_pair, train_vocab, WindowConfig};
    use std::collections::HashMap;
    use std::sync::Arc;

    fn example(id: &str, ctx_id: &str, sub: Subdomain, ctx: &str, q: &str, ans: &str, prov: Provenance) -> QAExample {
        let byte = ctx.find(ans).expect("answer in context");
        QAExample {
            id: id.into(),
            context_id: ctx_id.into(),
            subdomain: sub,
            context: Arc::from(ctx),
            question: q.into(),
            answer_text: ans.into(),
            answer_char_start: ctx[..byte].chars().count(),
            provenance: prov,
        }
    }

    #[test]
    fn load_empty_and_invalid() {
        let d = Dataset::from_json(r#"{"version":1,"data":[]}"#, true).unwrap();
        assert!(d.is_empty());
        let bad = r#"{"version":1,"data":[{"id":"c1","subdomain":"temples","context":"गंगा घाट पर आरती होती है।",
            "qas":[{"qid":"q1","question":"कहाँ?","answer_text":"आरती","answer_char_start":3,"provenance":"manual"}]}]}"#;
        match Dataset::from_json(bad, false) {
            Err(DatasetError::Validation(issues)) => {
                assert_eq!(issues.len(), 1);
                assert_eq!(issues[0].id, "q1");
            }
            other => panic!("unexpected {other:?}"),
        }
        let good = bad.replace("\"answer_char_start\":3", "\"answer_char_start\":12");
        let d = Dataset::from_json(&good, true).unwrap();
        assert_eq!(d.examples[0].answer_char_start, 12);
        assert_eq!(Dataset::from_json(&d.to_json(), true).unwrap(), d);
        let unknown = good.replace("temples", "beaches");
        assert!(matches!(Dataset::from_json(&unknown, true), Err(DatasetError::Validation(_))));
        assert!(matches!(Dataset::from_json("{", true), Err(DatasetError::Parse(_))));
    }

    #[test]
    fn strict_mode_stops_at_first_failure() {
        let text = r#"{"version":1,"data":[{"id":"c1","subdomain":"kunds","context":"abc def",
            "qas":[{"qid":"a","question":"x","answer_text":"zz","answer_char_start":0,"provenance":"manual"},
                   {"qid":"b","question":"x","answer_text":"yy","answer_char_start":0,"provenance":"manual"}]}]}"#;
        let doc: Document = serde_json::from_str(text).unwrap();
        assert_eq!(doc.validate(true).issues.len(), 1);
        assert_eq!(doc.validate(false).issues.len(), 2);
    }

    #[test]
    fn align_whole_context() {
        let ctx = "दशाश्वमेध घाट";
        let ex = example("q", "c", Subdomain::Temples, ctx, "कौन?", ctx, Provenance::Manual);
        let v = train_vocab(&[ctx, "कौन"], 40).unwrap();
        let ws = encode_pair(&ex.question, ctx, &v, WindowConfig { max_len: 32, stride: 4 }).unwrap();
        let w = &ws[0];
        let r = w.context_positions();
        assert_eq!(align_answer(&ex, w), (r.start, r.end - 1));
    }

    #[test]
    fn align_across_windows() {
        let words: Vec<String> = (0..30).map(|i| format!("w{i}")).collect();
        let ctx = words.join(" ");
        let ex = example("q", "c", Subdomain::Travel, &ctx, "q", "w25 w26", Provenance::Manual);
        let v = crate::tokenizer::Vocabulary::from_pieces(
            crate::tokenizer::SPECIALS
                .iter()
                .map(|s| s.to_string())
                .chain(words.iter().cloned())
                .chain(["q".to_string()])
                .collect(),
        )
        .unwrap();
        let ws = encode_pair("q", &ctx, &v, WindowConfig { max_len: 24, stride: 4 }).unwrap();
        assert_eq!(ws.len(), 2);
        assert_eq!(align_answer(&ex, &ws[0]), (0, 0));
        let (s, e) = align_answer(&ex, &ws[1]);
        // Brute force: find positions whose offsets equal the two words.
        let want: Vec<usize> = (0..ws[1].len())
            .filter(|&i| matches!(ws[1].offsets[i], Some(o) if o.0 >= ex.answer_char_start && o.1 <= ex.answer_char_end()))
            .collect();
        assert_eq!((s, e), (want[0], *want.last().unwrap()));
        assert_eq!(v.decode(&ws[1].token_ids[s..=e]).unwrap(), "w25 w26");
    }

    fn synthetic(counts: &[(Subdomain, usize)]) -> Dataset {
        let mut d = Dataset::default();
        for &(sub, n) in counts {
            for i in 0..n {
                d.examples.push(example(
                    &format!("{sub}-{i}"),
                    &format!("{sub}-c{i}"),
                    sub,
                    "क ख",
                    "?",
                    "ख",
                    Provenance::Manual,
                ));
            }
        }
        d
    }

    #[test]
    fn split_rules() {
        let d = synthetic(&[(Subdomain::Temples, 10)]);
        let (tr, te) = split(&d, 0.8, 3).unwrap();
        assert_eq!((tr.len(), te.len()), (8, 2));
        assert_eq!(split(&d, 0.8, 3).unwrap().0, tr);
        let d = synthetic(&[(Subdomain::Kunds, 5), (Subdomain::Cruise, 5)]);
        let (tr, te) = split(&d, 0.8, 1).unwrap();
        for sub in [Subdomain::Kunds, Subdomain::Cruise] {
            assert_eq!(tr.examples.iter().filter(|e| e.subdomain == sub).count(), 4);
            assert_eq!(te.examples.iter().filter(|e| e.subdomain == sub).count(), 1);
        }
        assert!(matches!(split(&Dataset::default(), 0.8, 0), Err(DatasetError::Input(_))));
        assert!(matches!(split(&d, 1.0, 0), Err(DatasetError::Input(_))));
        assert_eq!(train_size(7, 0.8), 5);
    }

    #[test]
    fn ingestion() {
        let base = Dataset {
            examples: vec![example("m1", "c1", Subdomain::Museums, "भारत कला भवन संग्रहालय", "क्या?", "कला भवन", Provenance::Manual)],
        };
        let raw = vec![
            RawPair {
                context_id: "c1".into(),
                qid: None,
                question: "कौन  सा संग्रहालय?".into(),
                answer_text: "संग्रहालय".into(),
            },
            RawPair {
                context_id: "c1".into(),
                qid: Some("g2".into()),
                question: "कहाँ?".into(),
                answer_text: "दिल्ली".into(),
            },
            RawPair {
                context_id: "c9".into(),
                qid: None,
                question: "x".into(),
                answer_text: "y".into(),
            },
        ];
        let out = ingest_generated(&raw, &base);
        assert_eq!(out.accepted, 1);
        assert_eq!(out.rejected.len(), 2);
        let g = &out.dataset.examples[1];
        assert_eq!((g.answer_char_start, g.provenance), (13, Provenance::Generated));
        assert_eq!(g.question, "कौन सा संग्रहालय?");
        assert!(g.check().is_ok());
    }

    fn oracle_similarity(a: &str, b: &str) -> f64 {
        let grams = |s: &str| -> HashMap<String, f64> {
            let m = crate::tokenizer::normalize_for_match(s);
            let kept: Vec<&str> = m.split_whitespace().filter(|w| !STOP_WORDS.contains(w)).collect();
            let c: Vec<char> = kept.join(" ").chars().collect();
            let mut h = HashMap::new();
            for i in 0..c.len().saturating_sub(2) {
                *h.entry(c[i..i + 3].iter().collect()).or_insert(0.0) += 1.0;
            }
            h
        };
        let (x, y) = (grams(a), grams(b));
        let dot: f64 = x.iter().map(|(k, v)| v * y.get(k).unwrap_or(&0.0)).sum();
        let n = |h: &HashMap<String, f64>| h.values().map(|v| v * v).sum::<f64>().sqrt();
        dot / (n(&x) * n(&y))
    }

    #[test]
    fn dedup_rules() {
        let ctx = "गंगा आरती दशाश्वमेध घाट पर होती है";
        let mk = |id: &str, q: &str, p| example(id, "c", Subdomain::GangaAarti, ctx, q, "दशाश्वमेध घाट", p);
        let d = Dataset {
            examples: vec![
                mk("a", "आरती कहाँ होती है?", Provenance::Generated),
                mk("b", "आरती कहाँ होती है?", Provenance::Manual),
                mk("c", "abc xyz", Provenance::Generated),
            ],
        };
        let r = dedup(&d, 0.85).unwrap();
        assert_eq!(r.kept.examples.iter().map(|e| e.id.as_str()).collect::<Vec<_>>(), ["b", "c"]);
        assert_eq!(r.removed.len(), 1);
        assert_eq!((r.removed[0].kept_id.as_str(), r.removed[0].dropped_id.as_str()), ("b", "a"));
        assert_eq!(r.removed[0].score, 1.0);
        assert_eq!(question_similarity("आरती घाट", "abc xyz"), 0.0);
        assert_eq!(dedup(&r.kept, 0.85).unwrap().kept, r.kept);
        assert!(matches!(dedup(&d, 0.0), Err(DatasetError::Input(_))));
        for (x, y) in [("दुर्गा मंदिर में कितनी बार आरती होती है?", "दुर्गा मंदिर में कितनी बार आरती का आयोजन होता है?")] {
            assert!((question_similarity(x, y) - oracle_similarity(x, y)).abs() < 1e-12);
        }
    }

    #[test]
    fn kappa_cases() {
        assert_eq!(cohen_kappa(&[1, 0, 1, 2], &[1, 0, 1, 2]).unwrap(), 1.0);
        assert_eq!(cohen_kappa(&[1, 1, 0, 0], &[1, 0, 1, 0]).unwrap(), 0.0);
        let mut a = vec![1u8; 50];
        a.extend(vec![0u8; 50]);
        let mut b = a.clone();
        for i in [0, 1, 2, 50, 51] {
            b[i] = 1 - b[i];
        }
        assert!((cohen_kappa(&a, &b).unwrap() - 0.9).abs() < 1e-12);
        assert_eq!(cohen_kappa(&[3, 3], &[3, 3]).unwrap(), 1.0);
        assert!(matches!(cohen_kappa(&[1], &[1, 2]), Err(DatasetError::Input(_))));
    }

    #[test]
    fn report_counts() {
        let empty = subdomain_report(&Dataset::default());
        assert_eq!(empty.totals.total(), 0);
        let mut d = synthetic(&[(Subdomain::Temples, 3), (Subdomain::General, 2)]);
        let before = subdomain_report(&d);
        d.examples[0].provenance = Provenance::Generated;
        d.examples.push(d.examples[4].clone());
        let after = subdomain_report(&d);
        assert_eq!(after.totals.total(), before.totals.total() + 1);
        assert_eq!(after.rows[Subdomain::General.index()].1.manual, 3);
        assert_eq!(after.rows[0].1, CountRow { manual: 2, generated: 1 });
        assert!(after.to_csv().ends_with("total,5,1,6\n"));
    }
}
