use std::path::PathBuf;

use irk_core::corpus::load_corpus;
use irk_core::eval::Lcg;
use irk_core::solution::{
    adapt, ensemble_predict, evaluate, evaluate_model, featurize, loss_and_gradient, majority_vote, predict,
    separable_dataset, sigmoid, synthetic_dataset, tfidf_vector, train, transfer_evaluate, ClassifierKind,
    ClassifierModel, Design, EnsembleMember, Prediction, Scaling, TrainConfig, TrainingMeta, Vocabulary,
};
use proptest::prelude::*;

fn fixture() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/tiny")
}

fn embedding_config() -> TrainConfig {
    TrainConfig { kind: ClassifierKind::LinearEmbedding, ..TrainConfig::default() }
}

#[test]
fn tfidf_hand_case() {
    let corpus = load_corpus(fixture()).unwrap();
    let vocab = Vocabulary::fit(["theme restart", "theme reload", "crash"]);
    let text = &corpus.issue("notes-2").unwrap().comments[1].text;
    let v = tfidf_vector(text, &vocab);
    // theme twice (prose + ThemeManager), restart and reload once
    let theme = (1.0 + 2f64.ln()) * ((4.0f64 / 3.0).ln() + 1.0);
    let once = 2f64.ln() + 1.0;
    let norm = (theme * theme + 2.0 * once * once).sqrt();
    assert_eq!(v.len(), 3);
    assert!((v["theme"] - theme / norm).abs() < 1e-12);
    assert!((v["restart"] - once / norm).abs() < 1e-12);
    assert!((v["reload"] - once / norm).abs() < 1e-12);
}

#[test]
fn structural_features_of_fixture_comments() {
    let corpus = load_corpus(fixture()).unwrap();
    let vocab = Vocabulary::default();
    let n1 = corpus.issue("notes-1").unwrap();
    let f = featurize(&n1.comments[1], n1, &vocab).unwrap();
    assert_eq!(f.structural[0], 0.5);
    assert_eq!(&f.structural[2..], &[0.0, 1.0, 0.0, 0.0]);
    let f = featurize(&n1.comments[2], n1, &vocab).unwrap();
    assert_eq!(&f.structural[4..], &[1.0, 1.0]);
    let n2 = corpus.issue("notes-2").unwrap();
    let f = featurize(&n2.comments[1], n2, &vocab).unwrap();
    assert_eq!(f.structural[2], 1.0);
}

#[test]
fn sigmoid_hand_case() {
    let corpus = load_corpus(fixture()).unwrap();
    let vocab = Vocabulary::fit(["theme restart", "theme reload", "crash"]);
    let thread = corpus.issue("notes-2").unwrap();
    let features = featurize(&thread.comments[1], thread, &vocab).unwrap();
    // dimensions: crash, reload, restart, theme
    let mut weights = vec![0.0, 0.5, 0.5, 1.0];
    weights.extend([0.0; 6]);
    let model = ClassifierModel {
        model_version: 1,
        kind: ClassifierKind::LinearTfidf,
        vocabulary: Some(vocab),
        embedding_dim: None,
        weights,
        bias: -1.0,
        scaling: Scaling { min: [0.0; 6], max: [0.0; 6] },
        threshold: 0.5,
        training_meta: TrainingMeta { seed: 0, epochs: 0, lambda: 0.0, learning_rate: 0.0, accepted_steps: 0, final_loss: 0.0 },
    };
    let theme = (1.0 + 2f64.ln()) * ((4.0f64 / 3.0).ln() + 1.0);
    let once = 2f64.ln() + 1.0;
    let norm = (theme * theme + 2.0 * once * once).sqrt();
    let z = -1.0 + once / norm + theme / norm;
    let p = predict(&model, &features).unwrap();
    assert!((p.probability - 1.0 / (1.0 + (-z).exp())).abs() < 1e-12);
    assert!((p.probability - 0.5489).abs() < 1e-4);
    assert_eq!(p.label, 1);
    assert_eq!(ClassifierModel::from_json(&model.to_json()).unwrap(), model);
}

#[test]
fn sigmoid_limits() {
    assert_eq!(sigmoid(0.0), 0.5);
    assert!(sigmoid(800.0) == 1.0 && sigmoid(-800.0) == 0.0);
}

fn random_design(rng: &mut Lcg, n: usize, d: usize) -> Design {
    let rows = (0..n).map(|_| (0..d).map(|_| rng.next_f64() * 4.0 - 2.0).collect()).collect();
    let targets = (0..n).map(|i| (i % 3 == 0) as u8 as f64).collect();
    Design::new(rows, targets, true)
}

#[test]
fn gradient_matches_central_differences() {
    let mut rng = Lcg::new(5);
    for _ in 0..25 {
        let d = 1 + rng.below(6);
        let n = 4 + rng.below(20);
        let design = random_design(&mut rng, n, d);
        let w: Vec<f64> = (0..d).map(|_| rng.next_f64() * 2.0 - 1.0).collect();
        let b = rng.next_f64() - 0.5;
        let lambda = rng.next_f64() * 0.1;
        let (_, grad, grad_b) = loss_and_gradient(&w, b, &design, lambda);
        let h = 1e-5;
        let mut num = Vec::new();
        for j in 0..d {
            let (mut wp, mut wm) = (w.clone(), w.clone());
            wp[j] += h;
            wm[j] -= h;
            num.push((loss_and_gradient(&wp, b, &design, lambda).0 - loss_and_gradient(&wm, b, &design, lambda).0) / (2.0 * h));
        }
        num.push((loss_and_gradient(&w, b + h, &design, lambda).0 - loss_and_gradient(&w, b - h, &design, lambda).0) / (2.0 * h));
        let mut ana = grad.clone();
        ana.push(grad_b);
        let diff: f64 = ana.iter().zip(&num).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
        let scale = ana.iter().map(|a| a * a).sum::<f64>().sqrt().max(num.iter().map(|a| a * a).sum::<f64>().sqrt());
        assert!(diff / scale <= 1e-6, "relative error {}", diff / scale);
    }
}

#[test]
fn separable_set_is_fit() {
    let ds = separable_dataset(200, 1);
    let model = train(&ds, &embedding_config()).unwrap();
    assert!(evaluate_model(&model, &ds).unwrap().f1 >= 0.99);
    let centroid = train(&ds, &TrainConfig { kind: ClassifierKind::NearestCentroidEmbedding, ..TrainConfig::default() }).unwrap();
    assert!(evaluate_model(&centroid, &ds).unwrap().f1 >= 0.8);
}

#[test]
fn heavy_regularization_shrinks_weights() {
    let ds = separable_dataset(100, 2);
    let model = train(&ds, &TrainConfig { lambda: 1e6, ..embedding_config() }).unwrap();
    assert!(model.weights.iter().map(|w| w * w).sum::<f64>().sqrt() < 1e-2);
}

#[test]
fn training_is_deterministic() {
    let ds = separable_dataset(120, 3);
    let a = train(&ds, &embedding_config()).unwrap().to_json();
    let b = train(&ds, &embedding_config()).unwrap().to_json();
    assert_eq!(a, b);
}

#[test]
fn majority_truth_table() {
    for bits in 0..8u8 {
        let votes: Vec<Prediction> = (0..3)
            .map(|i| {
                let label = (bits >> i) & 1;
                Prediction { label, probability: if label == 1 { 0.9 } else { 0.1 } }
            })
            .collect();
        let mode = (bits.count_ones() >= 2) as u8;
        assert_eq!(majority_vote(&votes).unwrap().label, mode, "{bits:03b}");
    }
    let tie = [Prediction { label: 1, probability: 0.8 }, Prediction { label: 0, probability: 0.3 }];
    assert_eq!(majority_vote(&tie).unwrap().label, 1);
}

#[test]
fn single_member_ensemble_equals_model() {
    let ds = separable_dataset(60, 4);
    let model = train(&ds, &embedding_config()).unwrap();
    let members = [EnsembleMember::Model(model.clone())];
    for item in &ds.items {
        assert_eq!(ensemble_predict(&members, item).unwrap(), predict(&model, &item.features).unwrap());
    }
    assert_eq!(evaluate(&members, &ds).unwrap(), evaluate_model(&model, &ds).unwrap());
}

#[test]
fn transfer_with_no_adaptation_is_zero_shot() {
    let a = synthetic_dataset("pa", 100, 2, 1.0, 7, 1);
    let b = synthetic_dataset("pb", 100, 2, 1.0, 7, 2);
    let r = transfer_evaluate(&a, &b, 0.0, &embedding_config()).unwrap();
    assert_eq!(r.zero_shot, r.adapted);
    assert!(r.adapt_issues.is_empty());
    assert_eq!(transfer_evaluate(&a, &a, 0.0, &embedding_config()).unwrap_err().code(), "SAME_PROJECT");
}

#[test]
fn transfer_on_relabeled_copy_matches_in_domain() {
    let a = synthetic_dataset("pa", 100, 2, 1.0, 7, 1);
    let mut copy = a.clone();
    copy.project_id = "pa-copy".into();
    let r = transfer_evaluate(&a, &copy, 0.0, &embedding_config()).unwrap();
    let in_domain = evaluate_model(&train(&a, &embedding_config()).unwrap(), &a).unwrap();
    assert_eq!(r.zero_shot.f1, in_domain.f1);
}

#[test]
fn adaptation_does_not_hurt_much() {
    for seed in 0..5 {
        let a = synthetic_dataset("pa", 200, 2, 1.0, 7, seed);
        let b = synthetic_dataset("pb", 200, 2, 1.0, 7, seed + 1000);
        let r = transfer_evaluate(&a, &b, 0.2, &embedding_config()).unwrap();
        assert!(r.adapted.f1 >= r.zero_shot.f1 - 0.05);
        let model = train(&a, &embedding_config()).unwrap();
        let empty = b.subset(&[]);
        assert_eq!(adapt(&model, &empty, &embedding_config()).unwrap(), model);
    }
}

proptest! {
    #[test]
    fn recall_is_monotone_in_threshold(seed in 0u64..50, t1 in 0.01f64..0.99, t2 in 0.01f64..0.99) {
        let ds = synthetic_dataset("p", 60, 3, 0.2, seed, seed + 1);
        let base = train(&ds, &TrainConfig { epochs: 50, ..embedding_config() }).unwrap();
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        let at = |t: f64| {
            let m = ClassifierModel { threshold: t, ..base.clone() };
            evaluate_model(&m, &ds).unwrap().recall
        };
        prop_assert!(at(lo) >= at(hi));
    }
}

#[test]
fn scaling_uses_training_range() {
    let ds = separable_dataset(20, 9);
    let s = Scaling::fit(&ds.items);
    assert_eq!(s.apply(&[3.0; 6]), [0.0; 6]);
}
