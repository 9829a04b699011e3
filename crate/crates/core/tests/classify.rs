use faceprobe_core::classify::{self, hinge_loss, loss, predict, softmax_loss, train, LossKind, TrainOptions};
use faceprobe_core::rng;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

fn gaussian(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut g = rng::stream(seed, 42);
    DMatrix::from_fn(rows, cols, |_, _| g.sample(StandardNormal))
}

fn labels(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut g = rng::stream(seed, 43);
    (0..n).map(|_| g.random_range(0..k)).collect()
}

/// Largest entrywise relative gap between the analytic gradient and central
/// differences with step 1e-5.
fn fd_error(kind: LossKind, theta: &DMatrix<f64>, x: &DMatrix<f64>, y: &[usize], lambda: f64) -> f64 {
    let h = 1e-5;
    let (_, grad) = loss(kind, theta, x, y, lambda).unwrap();
    let mut worst = 0.0_f64;
    for idx in 0..theta.len() {
        let mut up = theta.clone();
        let mut down = theta.clone();
        up[idx] += h;
        down[idx] -= h;
        let fd = (loss(kind, &up, x, y, lambda).unwrap().0 - loss(kind, &down, x, y, lambda).unwrap().0) / (2.0 * h);
        let denom = grad[idx].abs().max(fd.abs()).max(1e-8);
        worst = worst.max((grad[idx] - fd).abs() / denom);
    }
    worst
}

/// Distance of the nearest sample to a hinge kink or a rival tie.
fn kink_distance(theta: &DMatrix<f64>, x: &DMatrix<f64>, y: &[usize]) -> f64 {
    let scores = theta.tr_mul(x);
    let mut closest = f64::INFINITY;
    for i in 0..x.ncols() {
        let mut rivals: Vec<f64> = (0..theta.ncols()).filter(|&j| j != y[i]).map(|j| scores[(j, i)]).collect();
        rivals.sort_by(|a, b| b.total_cmp(a));
        closest = closest.min((1.0 - scores[(y[i], i)] + rivals[0]).abs());
        if rivals.len() > 1 {
            closest = closest.min(rivals[0] - rivals[1]);
        }
    }
    closest
}

#[test]
fn gradients_match_finite_differences() {
    for kind in [LossKind::Softmax, LossKind::Hinge] {
        let mut checked = 0;
        let mut seed = 0;
        while checked < 20 {
            seed += 1;
            let theta = gaussian(4, 3, seed);
            let x = gaussian(4, 15, seed + 1000);
            let y = labels(15, 3, seed);
            if kind == LossKind::Hinge && kink_distance(&theta, &x, &y) < 1e-3 {
                continue;
            }
            let err = fd_error(kind, &theta, &x, &y, 0.05);
            assert!(err < 1e-5, "{kind:?} seed {seed}: {err}");
            checked += 1;
        }
    }
}

#[test]
fn two_class_single_sample_by_hand() {
    let theta = DMatrix::from_row_slice(2, 2, &[0.5, -0.25, 0.1, 0.3]);
    let x = DMatrix::from_column_slice(2, 1, &[1.0, 2.0]);
    let lambda = 0.1;
    let (value, grad) = softmax_loss(&theta, &x, &[1], lambda).unwrap();
    // scores 0.7 and 0.35
    let gap: f64 = 0.35;
    let p0 = 1.0 / (1.0 + (-gap).exp());
    let frob = 0.25 + 0.0625 + 0.01 + 0.09;
    assert!((value - (gap.exp().ln_1p() + 0.05 * frob)).abs() < 1e-12);
    let want = DMatrix::from_row_slice(2, 2, &[p0, -p0, 2.0 * p0, -2.0 * p0]) + &theta * lambda;
    assert!((grad - want).amax() < 1e-12);
}

#[test]
fn zero_parameters_give_the_trivial_losses() {
    let x = gaussian(3, 10, 9);
    let y = labels(10, 5, 9);
    let zero = DMatrix::zeros(3, 5);
    assert_eq!(softmax_loss(&zero, &x, &y, 0.3).unwrap().0, 5.0_f64.ln());
    assert_eq!(hinge_loss(&zero, &x, &y, 0.3).unwrap().0, 1.0);
    let counts = y.iter().filter(|&&l| l == 0).count() as f64;
    assert_eq!(classify::accuracy(&zero, &x, &y).unwrap(), counts / 10.0);
}

#[test]
fn separable_gaussians_are_learned_exactly() {
    let mut g = rng::stream(3, 1);
    let n = 60;
    let mut x = DMatrix::zeros(3, n);
    let mut y = Vec::new();
    for j in 0..n {
        let label = j % 2;
        let cx = if label == 0 { -3.0 } else { 3.0 };
        x[(0, j)] = cx + 0.3 * g.sample::<f64, _>(StandardNormal);
        x[(1, j)] = 0.3 * g.sample::<f64, _>(StandardNormal);
        x[(2, j)] = 1.0;
        y.push(label);
    }
    for kind in [LossKind::Softmax, LossKind::Hinge] {
        let c = train(&x, &y, 2, kind, &TrainOptions::default()).unwrap();
        assert_eq!(c.accuracy(&x, &y).unwrap(), 1.0);
    }
}

#[test]
fn identical_inputs_cap_accuracy() {
    let x = DMatrix::from_element(2, 4, 1.0);
    let c = train(&x, &[0, 1, 2, 3], 4, LossKind::Softmax, &TrainOptions::default()).unwrap();
    assert_eq!(c.accuracy(&x, &[0, 1, 2, 3]).unwrap(), 0.25);
}

#[test]
fn heavy_regularization_flattens_theta() {
    let x = gaussian(3, 20, 4);
    let y = labels(20, 3, 4);
    let opts = TrainOptions { lambda: 1e6, learning_rate: 1e-7, ..Default::default() };
    let c = train(&x, &y, 3, LossKind::Softmax, &opts).unwrap();
    assert!(c.theta.norm() < 1e-6);
    assert!((softmax_loss(&c.theta, &x, &y, 0.0).unwrap().0 - 3.0_f64.ln()).abs() < 1e-6);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn softmax_ignores_a_common_shift(seed in 0u64..100_000, k in 2usize..6) {
        let theta = gaussian(4, k, seed);
        let x = gaussian(4, 12, seed + 1);
        let y = labels(12, k, seed);
        let v = DVector::from_fn(4, |i, _| (i as f64 + seed as f64).cos() * 3.0);
        let mut shifted = theta.clone();
        for mut col in shifted.column_iter_mut() {
            col += &v;
        }
        let a = softmax_loss(&theta, &x, &y, 0.0).unwrap().0;
        let b = softmax_loss(&shifted, &x, &y, 0.0).unwrap().0;
        prop_assert!((a - b).abs() < 1e-10);
        prop_assert_eq!(predict(&theta, &x).unwrap(), predict(&shifted, &x).unwrap());
    }

    #[test]
    fn small_steps_descend_monotonically(seed in 0u64..100_000) {
        let x = gaussian(3, 20, seed);
        let y = labels(20, 3, seed);
        let opts = TrainOptions { learning_rate: 1e-3, log_interval: 1, max_iters: 300, ..Default::default() };
        let c = train(&x, &y, 3, LossKind::Softmax, &opts).unwrap();
        for w in c.training_log.windows(2) {
            prop_assert!(w[1].1 <= w[0].1);
        }
    }

    #[test]
    fn argmax_ignores_positive_scaling(seed in 0u64..100_000, c in 1e-3f64..1e3) {
        let theta = gaussian(5, 4, seed);
        let x = gaussian(5, 10, seed + 1);
        prop_assert_eq!(predict(&theta, &x).unwrap(), predict(&(&theta * c), &x).unwrap());
    }
}
