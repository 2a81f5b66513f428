use proptest::prelude::*;

use attnguide::analysis::{mann_whitney, mann_whitney_exact, mann_whitney_normal, partition_tensor, Partition};
use attnguide::code::parse;
use attnguide::harness::{gen_corpus, CorpusParams};
use attnguide::model::{ag_loss, AttentionMatrix};
use attnguide::patterns::{build_pattern, pattern_group};
use attnguide::subtok::{build_vocab, encode};

fn samples(max: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec((0..8u8).prop_map(f64::from), 1..=max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn patterns_are_row_stochastic_or_empty(seed in 0u64..500, idx in 0usize..20, max_len in 8usize..48) {
        let recs = gen_corpus(&CorpusParams { num_snippets: 20, seed });
        let unit = parse(&recs[idx].id, &recs[idx].code).unwrap();
        let vocab = build_vocab(std::slice::from_ref(&unit), 128).unwrap();
        let seq = encode(&unit, &vocab, max_len);
        for group in ["syntax", "ast", "global", "local"] {
            for spec in pattern_group(group).unwrap() {
                let p = build_pattern(&seq, &unit, spec).unwrap();
                for r in 0..p.n {
                    let row = &p.values[r * p.n..(r + 1) * p.n];
                    let s: f64 = row.iter().sum();
                    if p.row_included[r] {
                        prop_assert!((s - 1.0).abs() < 1e-12, "{spec:?} row {r} sums to {s}");
                        prop_assert!(row[seq.real_len..].iter().all(|&v| v == 0.0));
                    } else {
                        prop_assert!(row.iter().all(|&v| v == 0.0));
                    }
                }
                let h = AttentionMatrix::from_rows(
                    &(0..p.n).map(|r| p.values[r * p.n..(r + 1) * p.n].to_vec()).collect::<Vec<_>>(),
                );
                prop_assert_eq!(ag_loss(&h, &p).unwrap(), 0.0);
            }
        }
    }

    #[test]
    fn mann_whitney_is_symmetric(a in samples(30), b in samples(30)) {
        let ab = mann_whitney(&a, &b).unwrap();
        let ba = mann_whitney(&b, &a).unwrap();
        prop_assert_eq!(ab.statistic + ba.statistic, (a.len() * b.len()) as f64);
        prop_assert!((ab.p_value - ba.p_value).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&ab.p_value));
    }

    #[test]
    fn partition_conserves_counts(
        w in prop::collection::vec(
            prop::option::weighted(0.8, prop::collection::vec(prop::collection::vec(0.0f64..1.0, 3), 2)),
            0..40,
        )
    ) {
        let labels = partition_tensor(&w);
        prop_assert_eq!(labels.len(), w.len());
        for (l, x) in labels.iter().zip(&w) {
            if x.is_none() {
                prop_assert_eq!(*l, Partition::Excluded);
            }
        }
    }
}

#[test]
fn exact_and_normal_paths_agree() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    let mut worst = (0.0, Vec::new(), Vec::new());
    for _ in 0..1000 {
        let na = rng.random_range(4..=6);
        let nb = rng.random_range(4..=6);
        let a: Vec<f64> = (0..na).map(|_| rng.random_range(0..10) as f64).collect();
        let b: Vec<f64> = (0..nb).map(|_| rng.random_range(0..10) as f64).collect();
        let e = mann_whitney_exact(&a, &b).unwrap().p_value;
        let n = mann_whitney_normal(&a, &b).unwrap().p_value;
        if (e - n).abs() > worst.0 {
            worst = ((e - n).abs(), a, b);
        }
    }
    assert!(worst.0 <= 0.02, "|exact - normal| = {} on {:?} vs {:?}", worst.0, worst.1, worst.2);
}

/// Two-sided p by relabelling every split of the pooled sample.
fn enumerated_p(a: &[f64], b: &[f64]) -> f64 {
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let n = pooled.len();
    let u = |mask: u32| {
        let mut s = 0.0;
        for i in (0..n).filter(|i| mask >> i & 1 == 1) {
            for j in (0..n).filter(|j| mask >> j & 1 == 0) {
                s += if pooled[i] > pooled[j] {
                    1.0
                } else if pooled[i] == pooled[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
        s
    };
    let mean = (a.len() * b.len()) as f64 / 2.0;
    let observed = (u((1 << a.len()) - 1) - mean).abs();
    let splits: Vec<u32> = (0u32..1 << n).filter(|m| m.count_ones() as usize == a.len()).collect();
    let hits = splits.iter().filter(|&&m| (u(m) - mean).abs() >= observed - 1e-9).count();
    hits as f64 / splits.len() as f64
}

#[test]
fn exact_path_matches_enumeration_under_heavy_ties() {
    let a = [6.0, 2.0, 2.0, 2.0];
    let b = [2.0, 6.0, 2.0, 6.0];
    let e = mann_whitney_exact(&a, &b).unwrap().p_value;
    assert_eq!(enumerated_p(&a, &b), 1.0);
    assert!((e - 1.0).abs() < 1e-12);
    let n = mann_whitney_normal(&a, &b).unwrap().p_value;
    assert!(n < 0.7, "normal path gives {n}");
}
