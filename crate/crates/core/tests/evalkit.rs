mod common;

use common::{fuzz, oracle};
use proptest::prelude::*;
use spanforge::evalkit::{
    bleu, decode_spans, lcs_len, match_tokens, report_from_predictions, rouge_l, token_f1, DecodeConfig, MERGED,
};

fn in_range(x: f64) -> bool {
    (0.0..=100.0).contains(&x)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn metrics_bounded(seed in any::<u64>()) {
        let (p, g) = fuzz::metric_pair(seed);
        for v in [token_f1(&p, &g), bleu(&p, &g), rouge_l(&p, &g)] {
            prop_assert!(in_range(v), "{v} for {p:?} / {g:?}");
        }
    }

    #[test]
    fn metrics_match_reference(seed in any::<u64>()) {
        let (p, g) = fuzz::metric_pair(seed);
        prop_assert!((token_f1(&p, &g) - oracle::f1(&p, &g)).abs() <= 1e-9);
        prop_assert!((bleu(&p, &g) - oracle::bleu(&p, &g)).abs() <= 1e-9);
        prop_assert!((rouge_l(&p, &g) - oracle::rouge(&p, &g)).abs() <= 1e-9);
    }

    #[test]
    fn self_score_is_full(seed in any::<u64>()) {
        let (p, _) = fuzz::metric_pair(seed);
        prop_assume!(!match_tokens(&p).is_empty());
        prop_assert_eq!(token_f1(&p, &p), 100.0);
        prop_assert!((bleu(&p, &p) - 100.0).abs() < 1e-9);
        prop_assert_eq!(rouge_l(&p, &p), 100.0);
    }

    #[test]
    fn lcs_bounded_by_shorter(a in proptest::collection::vec(0u8..4, 0..12), b in proptest::collection::vec(0u8..4, 0..12)) {
        let l = lcs_len(&a, &b);
        prop_assert!(l <= a.len().min(b.len()));
        prop_assert_eq!(l, lcs_len(&b, &a));
    }

    #[test]
    fn decoder_matches_enumeration(seed in any::<u64>()) {
        let c = fuzz::decode_case(seed);
        let cfg = DecodeConfig { max_answer_tokens: c.max_answer, n_best: c.n_best };
        let got = decode_spans("x", &c.windows, &c.scores, &c.vocab, cfg).unwrap();
        let want = oracle::decode(&c.windows, &c.scores, &c.vocab, c.max_answer);
        prop_assert!(oracle::same_prediction(&got, &want), "{got:?} vs {want:?}");
    }

    #[test]
    fn report_rows_conserve_examples(seed in any::<u64>(), n in 1usize..40) {
        let ds = fuzz::random_dataset(seed, n);
        let texts: Vec<String> = ds
            .examples
            .iter()
            .enumerate()
            .map(|(i, e)| if i % 3 == 0 { String::new() } else { e.answer_text.clone() })
            .collect();
        let report = report_from_predictions(&ds, &texts, "m").unwrap();
        let parts: Vec<_> = report.rows.iter().filter(|r| r.subdomain != MERGED).collect();
        let merged = report.merged();
        prop_assert_eq!(parts.iter().map(|r| r.examples).sum::<usize>(), n);
        prop_assert_eq!(merged.examples, n);
        let weighted: f64 = parts.iter().map(|r| r.f1 * r.examples as f64).sum::<f64>() / n as f64;
        prop_assert!((weighted - merged.f1).abs() < 1e-9);
        for r in &report.rows {
            prop_assert!(in_range(r.f1) && in_range(r.bleu) && in_range(r.rouge_l));
        }
    }
}

#[test]
fn hand_worked_metric_cases() {
    assert_eq!(token_f1("a b", "a c d"), 40.0);
    assert_eq!(oracle::f1("a b", "a c d"), 40.0);
    assert_eq!((rouge_l("a b c", "a x c") * 100.0).round() / 100.0, 66.67);
    assert_eq!(token_f1("", ""), 100.0);
    assert_eq!(token_f1("", "a"), 0.0);
    assert_eq!(bleu("", "a"), 0.0);
    assert_eq!(rouge_l("", "a b"), 0.0);
}

#[test]
fn decoder_rejects_empty_input() {
    let v = fuzz::numbered_vocab(3);
    assert!(decode_spans("x", &[], &[], &v, DecodeConfig::default()).is_err());
}
