use std::collections::BTreeSet;

use irk_core::eval::{average_precision, hits_at_k, kfold_split, mrr, reciprocal_rank, BinaryMetrics};
use irk_core::ranking::Ranking;
use proptest::prelude::*;

fn ranking(ids: &[&str]) -> Ranking {
    let n = ids.len() as f64;
    Ranking::from_scores("q", ids.iter().enumerate().map(|(i, d)| (d.to_string(), n - i as f64)))
}

fn gold(ids: &[&str]) -> BTreeSet<String> {
    ids.iter().map(|s| s.to_string()).collect()
}

#[test]
fn gold_at_rank_three() {
    let r = ranking(&["c_list", "c_settings", "c_new", "c_save"]);
    let g = gold(&["c_new"]);
    let hits: Vec<u8> = (1..=3).map(|k| hits_at_k(&r, &g, k)).collect();
    assert_eq!(hits, vec![0, 0, 1]);
}

#[test]
fn mrr_hand_case() {
    let qs: Vec<(Ranking, BTreeSet<String>)> = [1usize, 2, 4]
        .iter()
        .map(|&rank| {
            let ids = ["a", "b", "c", "d"];
            (ranking(&ids), gold(&[ids[rank - 1]]))
        })
        .collect();
    assert!((mrr(&qs) - 0.583_333_333_333_333_3).abs() < 1e-12);
    let missing = (ranking(&["a"]), gold(&["z"]));
    assert_eq!(reciprocal_rank(&missing.0, &missing.1), 0.0);
}

#[test]
fn confusion_matrix_cases() {
    let m = BinaryMetrics::from_counts(3, 1, 2, 0);
    assert_eq!((m.precision, m.recall), (0.75, 0.6));
    assert!((m.f1 - 2.0 * 0.45 / 1.35).abs() < 1e-15);
    let perfect = BinaryMetrics::from_pairs([(1, 1), (0, 0), (1, 1)]);
    assert_eq!((perfect.precision, perfect.recall, perfect.f1), (1.0, 1.0, 1.0));
    let none = BinaryMetrics::from_pairs([(0, 1), (0, 0)]);
    assert_eq!((none.precision, none.recall, none.f1), (0.0, 0.0, 0.0));
}

#[test]
fn stratified_folds_keep_ratio() {
    let labels = [1, 1, 1, 1, 1, 1, 0, 0, 0];
    for seed in 0..20 {
        for fold in kfold_split(9, 3, seed, Some(&labels)).unwrap() {
            let pos = fold.test.iter().filter(|&&i| labels[i] == 1).count();
            assert_eq!((pos, fold.test.len() - pos), (2, 1));
        }
    }
}

#[test]
fn plain_folds_partition() {
    let folds = kfold_split(10, 5, 3, None).unwrap();
    assert_eq!(folds, kfold_split(10, 5, 3, None).unwrap());
    let mut all: Vec<usize> = folds.iter().flat_map(|f| f.test.clone()).collect();
    all.sort();
    assert_eq!(all, (0..10).collect::<Vec<_>>());
    assert!(folds.iter().all(|f| f.test.len() == 2 && f.train.len() == 8));
}

fn arb_ranking() -> impl Strategy<Value = (Ranking, BTreeSet<String>)> {
    (prop::collection::vec(-5.0f64..5.0, 1..30), prop::collection::btree_set(0usize..40, 0..4)).prop_map(
        |(scores, g)| {
            let r = Ranking::from_scores("q", scores.iter().enumerate().map(|(i, s)| (format!("d{i}"), *s)));
            (r, g.into_iter().map(|i| format!("d{i}")).collect())
        },
    )
}

proptest! {
    #[test]
    fn rankings_are_ordered(scores in prop::collection::vec(-1e3f64..1e3, 0..40)) {
        let r = Ranking::from_scores("q", scores.iter().enumerate().map(|(i, s)| (format!("d{i:02}"), *s)));
        prop_assert!(r.is_well_ordered());
        prop_assert_eq!(r.len(), scores.len());
    }

    #[test]
    fn hits_are_monotone_in_k((r, g) in arb_ranking()) {
        let mut prev = 0;
        for k in 1..=r.len() + 2 {
            let h = hits_at_k(&r, &g, k);
            prop_assert!(h >= prev);
            prev = h;
        }
    }

    #[test]
    fn reciprocal_rank_and_ap_in_unit_interval((r, g) in arb_ranking()) {
        let rr = reciprocal_rank(&r, &g);
        let ap = average_precision(&r, &g);
        prop_assert!((0.0..=1.0).contains(&rr));
        prop_assert!((0.0..=1.0).contains(&ap));
        prop_assert_eq!(rr > 0.0, hits_at_k(&r, &g, r.len().max(1)) == 1);
    }

    #[test]
    fn folds_partition_items(n in 2usize..60, k in 2usize..8, seed in any::<u64>()) {
        prop_assume!(k <= n);
        let folds = kfold_split(n, k, seed, None).unwrap();
        prop_assert_eq!(folds.len(), k);
        let mut seen = vec![0; n];
        for f in &folds {
            for &i in &f.test { seen[i] += 1; }
            prop_assert_eq!(f.train.len() + f.test.len(), n);
            prop_assert!(f.test.iter().all(|i| !f.train.contains(i)));
        }
        prop_assert!(seen.iter().all(|&c| c == 1));
    }
}
