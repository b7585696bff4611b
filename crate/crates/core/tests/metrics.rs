mod common;

use brighteye::dataset::{Task, NUM_FEATURES};
use brighteye::evaluate::ScoreTable;
use brighteye::metrics::{self, auc, normalized_hamming, roc_curve, tpr_at_specificity};
use common::*;
use proptest::prelude::*;
use rand::Rng;
use std::collections::BTreeMap;

fn random_instance(r: &mut rand_chacha::ChaCha8Rng) -> (Vec<f64>, Vec<bool>) {
    let n = r.random_range(2..=50);
    // a small score alphabet forces ties
    let levels = r.random_range(1..=n);
    loop {
        let scores: Vec<f64> = (0..n).map(|_| r.random_range(0..levels) as f64 / levels as f64).collect();
        let labels: Vec<bool> = (0..n).map(|_| r.random::<bool>()).collect();
        if labels.iter().any(|&l| l) && labels.iter().any(|&l| !l) {
            return (scores, labels);
        }
    }
}

#[test]
fn roc_tpr_and_auc_match_brute_force() {
    let mut r = rng(2024);
    for _ in 0..500 {
        let (scores, labels) = random_instance(&mut r);
        let curve = roc_curve(&scores, &labels).unwrap();
        let brute = brute_roc(&scores, &labels);
        assert_eq!(curve.points.len(), brute.len());
        for (p, &(t, fp, tp)) in curve.points.iter().zip(&brute) {
            assert_eq!(p.threshold, t);
            assert_eq!((p.false_positives, p.true_positives), (fp, tp));
        }
        assert!((auc(&curve) - brute_auc(&scores, &labels)).abs() <= 1e-12);
        for spec in [0.95, 0.9, 0.5, 1.0, 0.0] {
            let got = tpr_at_specificity(&scores, &labels, spec).unwrap();
            assert!((got - brute_tpr_at_spec(&scores, &labels, spec)).abs() <= 1e-12);
        }
    }
}

#[test]
fn hamming_is_a_metric() {
    let mut r = rng(99);
    for _ in 0..1000 {
        let n = r.random_range(1..=NUM_FEATURES);
        let mut v = || (0..n).map(|_| r.random::<bool>()).collect::<Vec<_>>();
        let (a, b, c) = (v(), v(), v());
        let d = |x: &[bool], y: &[bool]| normalized_hamming(x, y).unwrap();
        assert_eq!(d(&a, &a), 0.0);
        assert_eq!(d(&a, &b), d(&b, &a));
        assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c) + 1e-15);
        if a != b {
            assert!(d(&a, &b) > 0.0);
        }
        assert!((0.0..=1.0).contains(&d(&a, &b)));
    }
}

fn table(n: usize, seed: u64) -> ScoreTable {
    let mut r = rng(seed);
    let rg: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
    let features: Vec<[bool; NUM_FEATURES]> = (0..n).map(|_| std::array::from_fn(|_| r.random::<bool>())).collect();
    ScoreTable {
        ids: (0..n).map(|i| format!("s{i}")).collect(),
        rg,
        features,
        scores: BTreeMap::new(),
    }
}

#[test]
fn oracle_scores_give_perfect_report() {
    let mut t = table(30, 1);
    t.scores.insert(Task::Glaucoma, t.rg.iter().map(|&l| l as u8 as f64).collect());
    for k in 1..=NUM_FEATURES as u8 {
        let s = t.features.iter().map(|f| f[k as usize - 1] as u8 as f64).collect();
        t.scores.insert(Task::Feature(k), s);
    }
    let r = t.report(0.5).unwrap();
    assert_eq!(r.tpr_at_95, 1.0);
    assert_eq!(r.auc, 1.0);
    assert_eq!(r.nhd_mean, Some(0.0));
}

#[test]
fn constant_half_scores_flag_nothing() {
    let mut t = table(5, 2);
    t.scores.insert(Task::Glaucoma, vec![0.5; 5]);
    for k in 1..=NUM_FEATURES as u8 {
        t.scores.insert(Task::Feature(k), vec![0.5; 5]);
    }
    let r = t.report(0.5).unwrap();
    let truth_rate =
        t.features.iter().flatten().filter(|&&f| f).count() as f64 / (5 * NUM_FEATURES) as f64;
    assert!((r.nhd_mean.unwrap() - truth_rate).abs() < 1e-12);
    assert_eq!(r.auc, 0.5);
}

#[test]
fn report_recomputes_from_score_dump() {
    let mut t = table(40, 3);
    let mut r = rng(4);
    t.scores.insert(Task::Glaucoma, (0..40).map(|_| r.random::<f32>() as f64).collect());
    for k in [1u8, 5, 9] {
        t.scores.insert(Task::Feature(k), (0..40).map(|_| r.random::<f32>() as f64).collect());
    }
    let report = t.report(0.5).unwrap();
    let back = ScoreTable::from_csv(&t.to_csv()).unwrap();
    let g = &back.scores[&Task::Glaucoma];
    assert_eq!(tpr_at_specificity(g, &back.rg, 0.95).unwrap(), report.tpr_at_95);
    assert_eq!(auc(&roc_curve(g, &back.rg).unwrap()), report.auc);
    let nhd: f64 = (0..40)
        .map(|i| {
            let pred: Vec<bool> = (1..=NUM_FEATURES as u8)
                .map(|k| back.scores.get(&Task::Feature(k)).is_some_and(|s| s[i] > 0.5))
                .collect();
            normalized_hamming(&pred, &back.features[i]).unwrap()
        })
        .sum::<f64>()
        / 40.0;
    assert!((nhd - report.nhd_mean.unwrap()).abs() < 1e-15);
}

proptest! {
    #[test]
    fn roc_is_monotone_and_auc_bounded(
        pairs in prop::collection::vec((0u8..20, any::<bool>()), 2..60)
    ) {
        let scores: Vec<f64> = pairs.iter().map(|p| p.0 as f64).collect();
        let labels: Vec<bool> = pairs.iter().map(|p| p.1).collect();
        prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
        let c = roc_curve(&scores, &labels).unwrap();
        for w in c.points.windows(2) {
            prop_assert!(w[1].fpr >= w[0].fpr && w[1].tpr >= w[0].tpr);
            prop_assert!(w[1].threshold < w[0].threshold);
        }
        let last = c.points.last().unwrap();
        prop_assert_eq!((last.fpr, last.tpr), (1.0, 1.0));
        let a = auc(&c);
        prop_assert!((0.0..=1.0).contains(&a));
        // negating scores mirrors the curve
        let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
        let b = auc(&roc_curve(&neg, &labels).unwrap());
        prop_assert!((a + b - 1.0).abs() < 1e-12);
        // sensitivity never decreases as the specificity target loosens
        let t95 = metrics::tpr_at_specificity_on(&c, 0.95);
        let t80 = metrics::tpr_at_specificity_on(&c, 0.80);
        prop_assert!(t80 >= t95);
    }
}
