mod common;

use common::{brute_force_qwk, random_label_cases, test_rng};
use rand::Rng as _;
use shadow_rating::eval::{class_metrics, confusion, qwk, ConfusionMatrix};

#[test]
fn qwk_matches_brute_force() {
    for (i, (t, p, k)) in random_label_cases(1000, 11).iter().enumerate() {
        let fast = qwk(t, p, *k).unwrap();
        let slow = brute_force_qwk(t, p, *k);
        assert!((fast - slow).abs() <= 1e-12, "case {i}: {fast} vs {slow}");
    }
}

#[test]
fn qwk_hand_case() {
    let k = qwk(&[0, 0, 1, 2], &[0, 1, 1, 1], 3).unwrap();
    assert!((k - 0.428571).abs() <= 1e-6);
    assert!((brute_force_qwk(&[0, 0, 1, 2], &[0, 1, 1, 1], 3) - 3.0 / 7.0).abs() < 1e-15);
}

#[test]
fn qwk_identities() {
    for (t, _, k) in random_label_cases(200, 12) {
        if t.iter().all(|&x| x == t[0]) {
            continue;
        }
        assert_eq!(qwk(&t, &t, k).unwrap(), 1.0);
    }
    let mut r = test_rng(13);
    let n = 100_000;
    let t: Vec<usize> = (0..n).map(|_| r.random_range(0..9)).collect();
    let p: Vec<usize> = (0..n).map(|_| r.random_range(0..9)).collect();
    let k = qwk(&t, &p, 9).unwrap();
    assert!(k.abs() <= 0.01, "{k}");
}

#[test]
fn qwk_shift_invariance() {
    // Shifting both raters (and the class count) rescales every weight by
    // the same factor.
    let t = [1, 4, 6, 6, 1, 4, 4];
    let p = [1, 1, 6, 4, 4, 4, 6];
    let shifted = |v: &[usize]| -> Vec<usize> { v.iter().map(|x| x + 2).collect() };
    let a = qwk(&t, &p, 7).unwrap();
    let b = qwk(&shifted(&t), &shifted(&p), 9).unwrap();
    assert!((a - b).abs() < 1e-12);
}

fn assert_f1_harmonic(cm: &ConfusionMatrix) {
    for s in class_metrics(cm).classes {
        let expected = if s.precision + s.recall == 0.0 {
            0.0
        } else {
            2.0 * s.precision * s.recall / (s.precision + s.recall)
        };
        assert!(
            (s.f1 - expected).abs() < 1e-15,
            "{}: {} vs {expected}",
            s.class,
            s.f1
        );
    }
}

#[test]
fn f1_is_harmonic_mean_and_accuracy_is_trace() {
    for (t, p, k) in random_label_cases(300, 14) {
        let cm = confusion(&t, &p, k).unwrap();
        assert_f1_harmonic(&cm);
        let matches = t.iter().zip(&p).filter(|(a, b)| a == b).count();
        assert_eq!(cm.accuracy(), matches as f64 / t.len() as f64);
        for c in 0..k {
            assert_eq!(
                cm.row_sum(c) as usize,
                t.iter().filter(|&&x| x == c).count()
            );
        }
    }
}

#[test]
fn class_metric_hand_case() {
    // class 0: TP 2, FP 1, FN 0
    let cm = confusion(&[0, 0, 1, 1], &[0, 0, 0, 1], 3).unwrap();
    let m = class_metrics(&cm);
    let c0 = &m.classes[0];
    assert!((c0.precision - 2.0 / 3.0).abs() < 1e-15);
    assert_eq!(c0.recall, 1.0);
    assert!((c0.f1 - 0.8).abs() < 1e-15);
    let c2 = &m.classes[2];
    assert_eq!(
        (c2.precision, c2.recall, c2.f1, c2.support),
        (0.0, 0.0, 0.0, 0)
    );
    let diag = confusion(&[0, 1, 2], &[0, 1, 2], 3).unwrap();
    assert!(class_metrics(&diag).classes.iter().all(|c| c.f1 == 1.0));
}
