mod common;

use common::fuzz;
use proptest::prelude::*;
use spanforge::dataset::{cohen_kappa, dedup, split, subdomain_report, train_size, Subdomain};
use spanforge::fixtures::{agreement_vectors, count_manifest, repeated_pairs, toy_qa};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn split_partitions_each_subdomain(seed in any::<u64>(), n in 1usize..60, frac in 0.05f64..0.95) {
        let ds = fuzz::random_dataset(seed, n);
        let (train, test) = split(&ds, frac, seed).unwrap();
        prop_assert_eq!(train.len() + test.len(), n);
        let mut ids: Vec<&str> = train.examples.iter().chain(&test.examples).map(|e| e.id.as_str()).collect();
        ids.sort();
        ids.dedup();
        prop_assert_eq!(ids.len(), n);
        for sub in Subdomain::ALL {
            let count = |d: &spanforge::dataset::Dataset| d.examples.iter().filter(|e| e.subdomain == sub).count();
            prop_assert_eq!(count(&train), train_size(count(&ds), frac));
        }
        prop_assert_eq!(split(&ds, frac, seed).unwrap(), (train, test));
    }

    #[test]
    fn dedup_is_idempotent(seed in any::<u64>(), n in 1usize..40, thr in 0.3f64..1.0) {
        let ds = fuzz::random_dataset(seed, n);
        let once = dedup(&ds, thr).unwrap();
        prop_assert_eq!(once.kept.len() + once.removed.len(), n);
        let twice = dedup(&once.kept, thr).unwrap();
        prop_assert!(twice.removed.is_empty());
        prop_assert_eq!(twice.kept, once.kept);
    }

    #[test]
    fn kappa_bounded(a in proptest::collection::vec(0u8..3, 1..50), flips in proptest::collection::vec(any::<bool>(), 50)) {
        let b: Vec<u8> = a.iter().zip(&flips).map(|(&x, &f)| if f { (x + 1) % 3 } else { x }).collect();
        let k = cohen_kappa(&a, &b).unwrap();
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&k), "{k}");
        prop_assert_eq!(cohen_kappa(&a, &a).unwrap(), 1.0);
        prop_assert!((k - cohen_kappa(&b, &a).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn aligned_spans_cover_the_answer(seed in any::<u64>()) {
        let case = fuzz::align_case(seed);
        if let Err(e) = fuzz::check_alignment(&case) {
            prop_assert!(false, "seed {seed}: {e}");
        }
    }
}

#[test]
fn manifest_totals() {
    let r = subdomain_report(&count_manifest());
    assert_eq!((r.totals.manual, r.totals.generated), (7715, 27455));
}

#[test]
fn repeated_paraphrases_removed() {
    let out = dedup(&repeated_pairs(), 0.8).unwrap();
    let mut dropped: Vec<&str> = out.removed.iter().map(|r| r.dropped_id.as_str()).collect();
    dropped.sort();
    assert_eq!(dropped, ["durga-3", "durga-4"]);
}

#[test]
fn constructed_kappa_values() {
    let (a, b) = agreement_vectors();
    assert!((cohen_kappa(&a, &b).unwrap() - 0.9).abs() < 1e-9);
    let ones = vec![1u8; 10];
    let mixed: Vec<u8> = (0..10).map(|i| (i % 2) as u8).collect();
    assert_eq!(cohen_kappa(&ones, &mixed).unwrap(), 0.0);
}

#[test]
fn toy_split_is_stratified() {
    let (train, test) = split(&toy_qa(), 0.5, 3).unwrap();
    assert_eq!((train.len(), test.len()), (10, 10));
    let r = subdomain_report(&train);
    assert!(r.rows.iter().all(|(_, c)| c.total() == 1));
}
