use std::collections::BTreeSet;
use std::time::Instant;

use crtre_core::rulemine::{apriori, read_rules, rule_matrix, rule_metrics, write_rules, MiningConfig, Rule, RuleScaling};
use crtre_core::tabular::ItemizedDataset;
use crtre_core::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_dataset(rng: &mut ChaCha8Rng) -> ItemizedDataset {
    let items = rng.gen_range(1..=8);
    let n = rng.gen_range(1..=40);
    let density = rng.gen_range(0.2..0.8);
    let mut transactions = Vec::new();
    let mut labels = Vec::new();
    for _ in 0..n {
        let mut t: Vec<u32> = (0..items).filter(|_| rng.gen_bool(density)).collect();
        if t.is_empty() {
            t.push(rng.gen_range(0..items));
        }
        transactions.push(t);
        labels.push(u8::from(rng.gen_bool(0.5)));
    }
    let names = (0..items).map(|i| format!("i{i}")).collect();
    ItemizedDataset::new(transactions, labels, names).unwrap()
}

type Key = (u8, Vec<u32>, u64, u64);

/// Every non-empty itemset up to `max_len`, counted directly.
fn brute_force(data: &ItemizedDataset, cfg: &MiningConfig) -> BTreeSet<Key> {
    let m = data.item_names.len() as u32;
    let n = data.len() as f64;
    let mut out = BTreeSet::new();
    for mask in 1u32..(1 << m) {
        let set: Vec<u32> = (0..m).filter(|b| mask & (1 << b) != 0).collect();
        if set.len() > cfg.max_len {
            continue;
        }
        for class in [0u8, 1] {
            let (mut a, mut ac) = (0usize, 0usize);
            for (t, &l) in data.transactions.iter().zip(&data.labels) {
                if set.iter().all(|i| t.contains(i)) {
                    a += 1;
                    ac += usize::from(l == class);
                }
            }
            let support = ac as f64 / n;
            if a > 0 && support >= cfg.min_support && ac as f64 / a as f64 >= cfg.min_confidence {
                out.insert((class, set.clone(), ac as u64, a as u64));
            }
        }
    }
    out
}

fn keyed(rules: &[Rule], n: usize) -> BTreeSet<Key> {
    rules
        .iter()
        .map(|r| {
            let ac = (r.support * n as f64).round() as u64;
            let a = (ac as f64 / r.confidence).round() as u64;
            (r.consequent, r.antecedent.clone(), ac, a)
        })
        .collect()
}

#[test]
fn apriori_equals_brute_force_on_200_random_sets() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut mismatches = 0;
    for _ in 0..200 {
        let data = random_dataset(&mut rng);
        let cfg = MiningConfig {
            min_support: rng.gen_range(0.02..0.4),
            min_confidence: rng.gen_range(0.3..1.0),
            max_len: rng.gen_range(1..=4),
        };
        let mined = apriori(&data, &cfg).unwrap();
        if keyed(&mined, data.len()) != brute_force(&data, &cfg) {
            mismatches += 1;
        }
    }
    assert_eq!(mismatches, 0);
    assert!(start.elapsed().as_secs_f64() < 10.0);
}

fn three_rows() -> ItemizedDataset {
    ItemizedDataset::new(vec![vec![0], vec![0], vec![0]], vec![1, 1, 0], vec!["A".into()]).unwrap()
}

#[test]
fn hand_example_single_rule() {
    let cfg = MiningConfig { min_support: 0.5, min_confidence: 0.6, max_len: 3 };
    let rules = apriori(&three_rows(), &cfg).unwrap();
    assert_eq!(rules.len(), 1);
    let r = &rules[0];
    assert_eq!((r.antecedent.as_slice(), r.consequent), (&[0u32][..], 1));
    assert!((r.support - 2.0 / 3.0).abs() < 1e-12);
    assert!((r.confidence - 2.0 / 3.0).abs() < 1e-12);
    assert!((r.lift - 1.0).abs() < 1e-12);
}

#[test]
fn full_support_on_mixed_labels_gives_nothing() {
    let cfg = MiningConfig { min_support: 1.0, min_confidence: 0.1, max_len: 3 };
    assert!(apriori(&three_rows(), &cfg).unwrap().is_empty());
}

#[test]
fn empty_dataset_and_bad_thresholds() {
    let empty = ItemizedDataset::new(vec![], vec![], vec!["A".into()]).unwrap();
    assert!(apriori(&empty, &MiningConfig::default()).unwrap().is_empty());
    let bad = MiningConfig { min_support: 0.0, ..MiningConfig::default() };
    assert!(matches!(apriori(&three_rows(), &bad), Err(Error::InvalidConfig(_))));
}

#[test]
fn metric_examples() {
    // A everywhere, consequent 1 in half the rows.
    let d = ItemizedDataset::new(vec![vec![0]; 4], vec![1, 0, 1, 0], vec!["A".into()]).unwrap();
    assert_eq!(rule_metrics(&[0], 1, &d).unwrap().1, 0.5);

    // Product construction: A in half the rows independently of the label.
    let transactions = vec![vec![0], vec![0], vec![1], vec![1]];
    let d = ItemizedDataset::new(transactions, vec![1, 0, 1, 0], vec!["A".into(), "B".into()]).unwrap();
    assert!((rule_metrics(&[0], 1, &d).unwrap().2 - 1.0).abs() < 1e-12);

    let d = ItemizedDataset::new(vec![vec![1]], vec![1], vec!["A".into(), "B".into()]).unwrap();
    assert!(matches!(rule_metrics(&[0], 1, &d), Err(Error::UndefinedConfidence)));
    assert!(matches!(rule_metrics(&[1], 0, &d), Err(Error::UndefinedLift)));
}

#[test]
fn design_matrix_examples() {
    let d = ItemizedDataset::new(
        vec![vec![0, 1], vec![0], vec![1], vec![0, 1]],
        vec![1, 1, 0, 0],
        vec!["A".into(), "B".into(), "C".into()],
    )
    .unwrap();
    let rule = |items: Vec<u32>, consequent, confidence| Rule { antecedent: items, consequent, support: 0.1, confidence, lift: 1.0 };
    let rules = vec![rule(vec![2], 1, 0.8), rule(vec![0], 1, 0.8), rule(vec![0, 1], 0, 0.5)];

    let m = rule_matrix(&rules, &d, RuleScaling::Binary);
    assert!(m.values.column(0).iter().all(|v| *v == 0.0));
    for (j, r) in rules.iter().enumerate().skip(1) {
        let support = d.transactions.iter().filter(|t| r.matches(t)).count() as f64 / 4.0;
        assert!((m.values.column(j).mean() - support).abs() < 1e-12);
    }

    let m = rule_matrix(&rules, &d, RuleScaling::Confidence);
    assert!(m.values.column(1).iter().filter(|v| **v != 0.0).all(|v| *v == 0.8));
    assert!(m.values.column(2).iter().filter(|v| **v != 0.0).all(|v| *v == 2.0));
}

#[test]
fn rules_round_trip_through_json_lines() {
    let data = ItemizedDataset::new(
        vec![vec![0, 1], vec![0], vec![1, 2], vec![0, 2], vec![0, 1]],
        vec![1, 1, 0, 0, 1],
        vec!["a=low".into(), "b=high".into(), "c=mid".into()],
    )
    .unwrap();
    let rules = apriori(&data, &MiningConfig { min_support: 0.2, min_confidence: 0.5, max_len: 2 }).unwrap();
    assert!(!rules.is_empty());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("rules.jsonl");
    write_rules(&rules, &data.item_names, &path).unwrap();
    assert_eq!(read_rules(&path, &data.item_names).unwrap(), rules);
}

fn small_dataset() -> impl Strategy<Value = ItemizedDataset> {
    (1usize..=6, 1usize..=25).prop_flat_map(|(items, n)| {
        (
            prop::collection::vec(prop::collection::vec(0..items as u32, 1..=items), n),
            prop::collection::vec(0u8..=1, n),
        )
            .prop_map(move |(t, l)| {
                ItemizedDataset::new(t, l, (0..items).map(|i| format!("i{i}")).collect()).unwrap()
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn order_and_relabel_invariant(data in small_dataset(), shift in 0u32..6, min_support in 0.05f64..0.5) {
        let cfg = MiningConfig { min_support, min_confidence: 0.5, max_len: 3 };
        let names_of = |d: &ItemizedDataset, rules: &[Rule]| -> BTreeSet<(u8, Vec<String>)> {
            rules.iter().map(|r| {
                let mut a: Vec<String> = r.antecedent.iter().map(|&i| d.item_names[i as usize].clone()).collect();
                a.sort();
                (r.consequent, a)
            }).collect()
        };
        let base = names_of(&data, &apriori(&data, &cfg).unwrap());

        let mut rev = data.clone();
        rev.transactions.reverse();
        rev.labels.reverse();
        prop_assert_eq!(&names_of(&rev, &apriori(&rev, &cfg).unwrap()), &base);

        let m = data.item_names.len() as u32;
        let perm = |i: u32| (i + shift) % m;
        let mut names = vec![String::new(); m as usize];
        for i in 0..m {
            names[perm(i) as usize] = data.item_names[i as usize].clone();
        }
        let relabeled = ItemizedDataset::new(
            data.transactions.iter().map(|t| t.iter().map(|&i| perm(i)).collect()).collect(),
            data.labels.clone(),
            names,
        ).unwrap();
        prop_assert_eq!(&names_of(&relabeled, &apriori(&relabeled, &cfg).unwrap()), &base);
    }

    #[test]
    fn joint_support_bounded_by_marginals(data in small_dataset()) {
        let cfg = MiningConfig { min_support: 0.05, min_confidence: 0.1, max_len: 3 };
        for r in apriori(&data, &cfg).unwrap() {
            let n = data.len() as f64;
            let sa = data.transactions.iter().filter(|t| r.matches(t)).count() as f64 / n;
            let sc = data.labels.iter().filter(|&&l| l == r.consequent).count() as f64 / n;
            prop_assert!(r.support <= sa.min(sc) + 1e-12);
        }
    }

    #[test]
    fn supersets_have_lower_support(data in small_dataset()) {
        let m = data.item_names.len() as u32;
        let n = data.len() as f64;
        let support = |s: &[u32]| data.transactions.iter().filter(|t| s.iter().all(|i| t.contains(i))).count() as f64 / n;
        for a in 0..m {
            for b in 0..m {
                if a != b {
                    let mut big = vec![a, b];
                    big.sort();
                    prop_assert!(support(&big) <= support(&[a]));
                }
            }
        }
    }
}
