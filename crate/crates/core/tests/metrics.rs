use faceprobe_core::encoding::ResponseMatrix;
use faceprobe_core::metrics::{
    pearson, permutation_null, permutation_pvalue, pvalue_from_null, spearman, summarize_layer, Statistic,
    SummaryOptions,
};
use faceprobe_core::rng;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

/// Textbook two-pass sample correlation.
fn naive_pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}

fn normals(n: usize, seed: u64) -> Vec<f64> {
    let mut g = rng::stream(seed, 11);
    (0..n).map(|_| g.sample(StandardNormal)).collect()
}

#[test]
fn hand_computed_pearson() {
    // cov = 0.8 * 4 / 4, var = 1.25 each
    let r = pearson(&[1.0, 2.0, 3.0, 4.0], &[2.0, 1.0, 4.0, 3.0]).unwrap();
    assert!((r - 0.6).abs() < 1e-12);
}

#[test]
fn spearman_with_tied_ranks() {
    let r = spearman(&[1.0, 2.0, 3.0], &[9.0, 9.0, 1.0]).unwrap();
    assert!((r - naive_pearson(&[1.0, 2.0, 3.0], &[2.5, 2.5, 1.0])).abs() < 1e-12);
    assert!((r + 0.866025).abs() < 1e-6);
}

#[test]
fn perfect_correlation_beats_every_permutation() {
    let x: Vec<f64> = (0..20).map(|i| (i as f64 * 0.37).sin() + i as f64 * 0.1).collect();
    let p = permutation_pvalue(&x, &x, Statistic::Pearson, 999, 4).unwrap();
    assert_eq!(p, 1.0 / 1000.0);
}

#[test]
fn independent_data_is_rarely_significant() {
    let hits = (0..100u64)
        .filter(|&rep| {
            let x = normals(50, 2 * rep);
            let y = normals(50, 2 * rep + 1);
            permutation_pvalue(&x, &y, Statistic::Pearson, 199, rep).unwrap() > 0.05
        })
        .count();
    assert!(hits >= 90, "{hits}");
}

#[test]
fn tiny_permutation_test_matches_enumeration() {
    let x = [1.0, 2.0, 4.0];
    let y = [3.0, 1.0, 2.0];
    let all: Vec<f64> = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]]
        .iter()
        .map(|perm| naive_pearson(&x, &perm.map(|k| y[k])).abs())
        .collect();
    let observed = naive_pearson(&x, &y).abs();
    let (obs, null) = permutation_null(&x, &y, Statistic::Pearson, 5, 8).unwrap();
    assert!((obs - observed).abs() < 1e-12);
    assert_eq!(null.len(), 5);
    for v in &null {
        assert!(all.iter().any(|a| (a - v).abs() < 1e-12));
    }
    let c = null.iter().filter(|v| **v >= observed - 1e-12).count();
    let p = permutation_pvalue(&x, &y, Statistic::Pearson, 5, 8).unwrap();
    assert_eq!(p, (1 + c) as f64 / 6.0);
}

#[test]
fn identical_layers_summarize_to_one() {
    let v = DMatrix::from_fn(4, 30, |i, j| ((i * 7 + j * 3) % 11) as f64 + j as f64 * 0.01);
    let r = ResponseMatrix::from_matrix(v.clone()).unwrap();
    let opts = SummaryOptions { n_perm: 99, seed: 1, alpha: 0.05 };
    let s = summarize_layer(&r, &r, &opts).unwrap();
    assert!((s.mean_pearson - 1.0).abs() < 1e-12);
    assert!((s.mean_spearman - 1.0).abs() < 1e-12);
    assert_eq!(s.fraction_significant, Some(1.0));

    let affine = ResponseMatrix::from_matrix(v.map(|x| 3.0 * x - 2.0)).unwrap();
    let s = summarize_layer(&r, &affine, &opts).unwrap();
    assert!((s.mean_pearson - 1.0).abs() < 1e-12);
}

fn vec_pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (3usize..40).prop_flat_map(|n| {
        (
            prop::collection::vec(-100.0f64..100.0, n),
            prop::collection::vec(-100.0f64..100.0, n),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pearson_matches_two_pass_formula((x, y) in vec_pair()) {
        let r = pearson(&x, &y).unwrap();
        prop_assert!((r - naive_pearson(&x, &y)).abs() < 1e-12);
    }

    #[test]
    fn pearson_is_affine_equivariant((x, y) in vec_pair(), a in -10.0f64..10.0, c in -50.0f64..50.0) {
        prop_assume!(a.abs() > 1e-3);
        let moved: Vec<f64> = y.iter().map(|v| a * v + c).collect();
        let want = a.signum() * pearson(&x, &y).unwrap();
        prop_assert!((pearson(&x, &moved).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn spearman_ignores_monotone_transforms((x, y) in vec_pair()) {
        let base = spearman(&x, &y).unwrap();
        let tx: Vec<f64> = x.iter().map(|v| (v / 40.0).exp()).collect();
        let ty: Vec<f64> = y.iter().map(|v| v.powi(3) + v).collect();
        let flipped: Vec<f64> = y.iter().map(|v| -v).collect();
        prop_assert!((spearman(&tx, &ty).unwrap() - base).abs() < 1e-12);
        prop_assert!((spearman(&x, &flipped).unwrap() + base).abs() < 1e-12);
    }

    #[test]
    fn correlations_are_symmetric((x, y) in vec_pair()) {
        prop_assert!((pearson(&x, &y).unwrap() - pearson(&y, &x).unwrap()).abs() < 1e-12);
        prop_assert!((spearman(&x, &y).unwrap() - spearman(&y, &x).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn pvalue_is_deterministic((x, y) in vec_pair(), seed in any::<u64>()) {
        for stat in [Statistic::Pearson, Statistic::Spearman] {
            let a = permutation_pvalue(&x, &y, stat, 100, seed).unwrap();
            prop_assert_eq!(a, permutation_pvalue(&x, &y, stat, 100, seed).unwrap());
            prop_assert!(a > 0.0 && a <= 1.0);
        }
    }

    #[test]
    fn pvalue_falls_as_the_statistic_grows((x, y) in vec_pair(), seed in any::<u64>(), a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let (_, null) = permutation_null(&x, &y, Statistic::Pearson, 100, seed).unwrap();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(pvalue_from_null(lo, &null) >= pvalue_from_null(hi, &null));
        prop_assert!(pvalue_from_null(-hi, &null) == pvalue_from_null(hi, &null));
    }
}
