use std::collections::HashSet;

use proptest::prelude::*;
use recsearch::data::{
    batch_indices, fit_vocabulary, prepare, split_indices, Column, RawTable, Role, Schema,
    VocabOptions,
};

fn mixed_schema() -> Schema {
    Schema {
        columns: vec![
            Column::new("label", Role::LabelTarget),
            Column::new("x", Role::Dense),
            Column::new("c", Role::Categorical),
            Column::new("d", Role::Categorical),
        ],
        delimiter: "\t".into(),
        header: false,
    }
}

/// Rows drawn from small token pools, with empty and non-finite dense cells.
fn rows_strategy() -> impl Strategy<Value = Vec<Vec<String>>> {
    let dense = prop_oneof![
        (-5.0f64..100.0).prop_map(|x| x.to_string()),
        Just(String::new()),
        Just("nan".to_string()),
        Just("inf".to_string()),
    ];
    let row = (0u8..2, dense, 0u8..12, 0u8..40)
        .prop_map(|(y, x, c, d)| vec![y.to_string(), x, format!("c{c}"), format!("d{d}")]);
    prop::collection::vec(row, 10..300)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn split_is_a_disjoint_cover(n in 10usize..5000, seed in any::<u64>()) {
        let s = split_indices(n, seed).unwrap();
        prop_assert_eq!(s.train.len(), n * 8 / 10);
        prop_assert_eq!(s.val.len(), n / 10);
        prop_assert_eq!(s.train.len() + s.val.len() + s.test.len(), n);
        let all: HashSet<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        prop_assert_eq!(all.len(), n);
        prop_assert!(all.iter().all(|&i| i < n));
        prop_assert_eq!(split_indices(n, seed).unwrap(), s);
    }

    #[test]
    fn encoding_is_bounded_finite_and_repeatable(rows in rows_strategy(), seed in any::<u64>(), min_count in 1usize..4) {
        let schema = mixed_schema();
        let table = RawTable::from_rows(&schema, &rows).unwrap();
        let opts = VocabOptions { min_count, hash_buckets: None };
        let data = prepare(&schema, &table, seed, opts).unwrap();
        for split in [&data.train, &data.val, &data.test] {
            for (col, feat) in split.cat.iter().zip(&data.info.categorical) {
                prop_assert!(col.iter().all(|&i| (i as usize) < feat.vocab_size + 1));
            }
            prop_assert!(split.dense.iter().flatten().all(|x| x.is_finite()));
        }
        // Standardized on train: zero mean, unit or zero spread.
        let x = &data.train.dense[0];
        let mean = x.iter().sum::<f64>() / x.len() as f64;
        prop_assert!(mean.abs() < 1e-9);

        let again = prepare(&schema, &table, seed, opts).unwrap();
        for (a, b) in [(&data.train, &again.train), (&data.val, &again.val), (&data.test, &again.test)] {
            prop_assert_eq!(&a.cat, &b.cat);
            let bits = |d: &recsearch::data::EncodedDataset| {
                d.dense.iter().flatten().chain(&d.target).map(|v| v.to_bits()).collect::<Vec<_>>()
            };
            prop_assert_eq!(bits(a), bits(b));
        }
    }

    #[test]
    fn batches_partition_each_epoch(n in 0usize..3000, size in 1usize..600, seed in any::<u64>(), epoch in 0usize..5) {
        let chunks = batch_indices(n, size, Some((seed, epoch)));
        prop_assert_eq!(chunks.len(), n.div_ceil(size));
        let mut seen: Vec<usize> = chunks.concat();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..n).collect::<Vec<_>>());
        prop_assert_eq!(batch_indices(n, size, Some((seed, epoch))), chunks);
    }
}

#[test]
fn batch_sizes_for_2500_rows() {
    let sizes: Vec<usize> = batch_indices(2500, 1024, None)
        .iter()
        .map(Vec::len)
        .collect();
    assert_eq!(sizes, [1024, 1024, 452]);
    let e0 = batch_indices(2500, 1024, Some((3, 0)));
    let e1 = batch_indices(2500, 1024, Some((3, 1)));
    assert_ne!(e0, e1);
    assert_eq!(e0, batch_indices(2500, 1024, Some((3, 0))));
}

#[test]
fn unseen_and_rare_tokens_map_to_zero() {
    let v = fit_vocabulary(["a", "b", "a", "c", "a", "b"], 2, None);
    assert_eq!(v.size(), 2);
    assert_eq!(v.encode("a"), 1);
    assert_eq!(v.encode("b"), 2);
    assert_eq!(v.encode("c"), 0);
    assert_eq!(v.encode("never"), 0);
    let h = fit_vocabulary(["a"], 1, Some(7));
    assert_eq!(h.size(), 7);
    assert!((1..=7).contains(&h.encode("anything")));
}

#[test]
fn vocabulary_is_fit_on_train_only() {
    let schema = mixed_schema();
    // Each row has a unique `d` token, so only train tokens are known.
    let rows: Vec<Vec<String>> = (0..100)
        .map(|i| vec!["0".into(), "1".into(), "c".into(), format!("d{i}")])
        .collect();
    let table = RawTable::from_rows(&schema, &rows).unwrap();
    let data = prepare(&schema, &table, 0, VocabOptions::default()).unwrap();
    assert_eq!(data.info.categorical[1].vocab_size, 80);
    assert!(data.val.cat[1]
        .iter()
        .chain(&data.test.cat[1])
        .all(|&i| i == 0));
    assert!(data.train.cat[1].iter().all(|&i| i > 0));
}

#[test]
fn too_few_rows_cannot_be_split() {
    assert!(split_indices(9, 0).is_err());
}
