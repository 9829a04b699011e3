//! Independent oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use faceprobe_core::paramspace::LandmarkSet;
use faceprobe_core::rng;
use nalgebra::{DMatrix, DVector, Matrix2};
use rand::Rng;
use rand_distr::StandardNormal;

/// Cyclic Jacobi eigen-decomposition of a symmetric matrix. Eigenvalues
/// descending, eigenvectors as columns.
pub fn jacobi_eigen(a: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let mut a = a.clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[(i, j)].powi(2)).sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[(p, q)].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * a[(p, q)]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[(k, p)], a[(k, q)]);
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[(p, k)], a[(q, k)]);
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[(k, p)], v[(k, q)]);
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(j, j)].total_cmp(&a[(i, i)]));
    let vals = order.iter().map(|&i| a[(i, i)]).collect();
    let vecs = DMatrix::from_columns(&order.iter().map(|&i| v.column(i).into_owned()).collect::<Vec<_>>());
    (vals, vecs)
}

pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut g = rng::stream(seed, 99);
    DMatrix::from_fn(rows, cols, |_, _| g.sample(StandardNormal))
}

pub fn kabsch_rotation(src: &DVector<f64>, dst: &DVector<f64>) -> Matrix2<f64> {
    let mut h = Matrix2::zeros();
    for i in 0..src.len() / 2 {
        h[(0, 0)] += src[2 * i] * dst[2 * i];
        h[(0, 1)] += src[2 * i] * dst[2 * i + 1];
        h[(1, 0)] += src[2 * i + 1] * dst[2 * i];
        h[(1, 1)] += src[2 * i + 1] * dst[2 * i + 1];
    }
    let svd = h.svd(true, true);
    let (u, vt): (Matrix2<f64>, Matrix2<f64>) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut d = Matrix2::identity();
    if (vt.transpose() * u.transpose()).determinant() < 0.0 {
        d[(1, 1)] = -1.0;
    }
    vt.transpose() * d * u.transpose()
}

pub fn apply(r: &Matrix2<f64>, x: &DVector<f64>) -> DVector<f64> {
    let mut out = x.clone();
    for i in 0..x.len() / 2 {
        out[2 * i] = r[(0, 0)] * x[2 * i] + r[(0, 1)] * x[2 * i + 1];
        out[2 * i + 1] = r[(1, 0)] * x[2 * i] + r[(1, 1)] * x[2 * i + 1];
    }
    out
}

pub fn centered_unit(x: &DVector<f64>) -> DVector<f64> {
    let l = x.len() / 2;
    let (mx, my) = (
        (0..l).map(|i| x[2 * i]).sum::<f64>() / l as f64,
        (0..l).map(|i| x[2 * i + 1]).sum::<f64>() / l as f64,
    );
    let c = DVector::from_fn(x.len(), |k, _| x[k] - if k % 2 == 0 { mx } else { my });
    let n = c.norm();
    c / n
}

/// Plain GPA: pairwise SVD alignment to the running mean, iterated; the
/// final mean is turned so that the first-to-last landmark vector points
/// along +x.
pub fn brute_force_gpa(shapes: &[DVector<f64>]) -> DVector<f64> {
    let norm: Vec<DVector<f64>> = shapes.iter().map(centered_unit).collect();
    let mut mean = norm[0].clone();
    for _ in 0..1000 {
        let mut sum = DVector::zeros(mean.len());
        for s in &norm {
            sum += apply(&kabsch_rotation(s, &mean), s);
        }
        let next = centered_unit(&sum);
        let next = apply(&kabsch_rotation(&next, &mean), &next);
        let done = (&next - &mean).norm() < 1e-14;
        mean = next;
        if done {
            break;
        }
    }
    let l = mean.len() / 2;
    let (dx, dy) = (mean[2 * (l - 1)] - mean[0], mean[2 * (l - 1) + 1] - mean[1]);
    let a = -dy.atan2(dx);
    apply(&Matrix2::new(a.cos(), -a.sin(), a.sin(), a.cos()), &mean)
}

pub fn random_shapes(n: usize, l: usize, seed: u64) -> Vec<LandmarkSet> {
    let mut g = rng::stream(seed, 7);
    let base: Vec<[f64; 2]> = (0..l).map(|_| [g.sample(StandardNormal), g.sample(StandardNormal)]).collect();
    (0..n)
        .map(|_| {
            let a: f64 = g.random_range(-3.0..3.0);
            let s: f64 = g.random_range(0.5..2.0);
            let t = [g.random_range(-5.0..5.0), g.random_range(-5.0..5.0)];
            let pts = base
                .iter()
                .map(|p| {
                    let (x, y): (f64, f64) = (p[0] + 0.1 * g.sample::<f64, _>(StandardNormal), p[1] + 0.1 * g.sample::<f64, _>(StandardNormal));
                    [s * (a.cos() * x - a.sin() * y) + t[0], s * (a.sin() * x + a.cos() * y) + t[1]]
                })
                .collect();
            LandmarkSet::new(pts).unwrap()
        })
        .collect()
}

/// Applies one rotation, scaling and translation to every shape.
pub fn similar(shapes: &[LandmarkSet], angle: f64, scale: f64, t: [f64; 2]) -> Vec<LandmarkSet> {
    let (c, s) = (angle.cos(), angle.sin());
    shapes
        .iter()
        .map(|shape| {
            let pts = shape
                .points()
                .iter()
                .map(|p| [scale * (c * p[0] - s * p[1]) + t[0], scale * (s * p[0] + c * p[1]) + t[1]])
                .collect();
            LandmarkSet::new(pts).unwrap()
        })
        .collect()
}
