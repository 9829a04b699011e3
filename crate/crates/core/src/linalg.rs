//! Dense least-squares and polynomial helpers shared by the encoding and
//! axis models.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative pivot threshold below which a QR factor is treated as singular.
const QR_RANK_TOL: f64 = 1e-12;

/// Solves `min ||A X - Y||_F` column by column with a single Householder QR
/// of `A`. `A` must have at least as many rows as columns and full column
/// rank.
pub fn lstsq_qr(a: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (rows, cols) = a.shape();
    if y.nrows() != rows {
        return Err(Error::DimensionMismatch(format!(
            "design has {rows} rows, targets have {}",
            y.nrows()
        )));
    }
    if rows < cols {
        return Err(Error::IllPosed(format!(
            "{rows} equations for {cols} unknowns"
        )));
    }
    let qr = a.clone().qr();
    let r = qr.r();
    let max_pivot = r.diagonal().iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if max_pivot == 0.0 || r.diagonal().iter().any(|v| v.abs() <= QR_RANK_TOL * max_pivot) {
        return Err(Error::IllPosed("design matrix is rank deficient".into()));
    }
    let mut qty = y.clone();
    qr.q_tr_mul(&mut qty);
    let qty = qty.rows(0, cols).into_owned();
    r.solve_upper_triangular(&qty)
        .ok_or_else(|| Error::IllPosed("triangular solve failed".into()))
}

/// Minimum-norm least-squares solution through the SVD.
#[derive(Debug, Clone)]
pub struct MinNormSolver {
    pinv: DMatrix<f64>,
    pub rank: usize,
    pub cols: usize,
}

impl MinNormSolver {
    /// Singular values below `rel_tol * sigma_max` are treated as zero.
    pub fn new(a: &DMatrix<f64>, rel_tol: f64) -> Self {
        let cols = a.ncols();
        if a.nrows() == 0 || cols == 0 {
            return Self {
                pinv: DMatrix::zeros(cols, a.nrows()),
                rank: 0,
                cols,
            };
        }
        let svd = a.clone().svd(true, true);
        let smax = svd.singular_values.iter().fold(0.0_f64, |m, v| m.max(*v));
        let cutoff = rel_tol * smax;
        let u = svd.u.as_ref().expect("u requested");
        let vt = svd.v_t.as_ref().expect("v_t requested");
        let mut pinv = DMatrix::zeros(cols, a.nrows());
        let mut rank = 0;
        for (k, &s) in svd.singular_values.iter().enumerate() {
            if s > cutoff && s > 0.0 {
                rank += 1;
                pinv += (vt.row(k).transpose() / s) * u.column(k).transpose();
            }
        }
        Self { pinv, rank, cols }
    }

    pub fn rank_deficient(&self) -> bool {
        self.rank < self.cols
    }

    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        &self.pinv * b
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        &self.pinv * b
    }
}

/// Least-squares polynomial fit in raw `x`, computed on standardized `x`
/// and mapped back. Returns coefficients in increasing degree.
pub fn fit_polynomial(x: &[f64], y: &[f64], degree: usize) -> Result<Vec<f64>> {
    let n = x.len();
    if y.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{n} abscissae, {} ordinates",
            y.len()
        )));
    }
    let distinct = count_distinct(x);
    if distinct <= degree {
        return Err(Error::IllPosed(format!(
            "degree-{degree} fit needs {} distinct abscissae, got {distinct}",
            degree + 1
        )));
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let scale = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    let design = DMatrix::from_fn(n, degree + 1, |i, j| ((x[i] - mean) / scale).powi(j as i32));
    let target = DMatrix::from_column_slice(n, 1, y);
    let beta = lstsq_qr(&design, &target)?;
    let std_coeffs: Vec<f64> = beta.column(0).iter().copied().collect();
    Ok(rebase_polynomial(&std_coeffs, mean, scale))
}

/// Given `q(z) = sum beta_j z^j` with `z = (x - shift) / scale`, returns the
/// coefficients of the same polynomial in `x`.
pub fn rebase_polynomial(beta: &[f64], shift: f64, scale: f64) -> Vec<f64> {
    let deg = beta.len();
    let mut out = vec![0.0; deg];
    for (j, &bj) in beta.iter().enumerate() {
        let inv = bj / scale.powi(j as i32);
        for (i, slot) in out.iter_mut().enumerate().take(j + 1) {
            *slot += inv * binomial(j, i) * (-shift).powi((j - i) as i32);
        }
    }
    out
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Number of distinct values, counting values within `1e-12` of the range
/// as equal.
pub fn count_distinct(x: &[f64]) -> usize {
    let mut v: Vec<f64> = x.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let range = v.last().copied().unwrap_or(0.0) - v.first().copied().unwrap_or(0.0);
    let tol = 1e-12 * range.abs().max(f64::MIN_POSITIVE);
    let mut count = 0;
    let mut last = f64::NEG_INFINITY;
    for val in v {
        if count == 0 || val - last > tol {
            count += 1;
            last = val;
        }
    }
    count
}

/// Evaluates `sum c_i x^i` by Horner's rule.
pub fn polyval(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c)
}

fn polyder_val(coeffs: &[f64], x: f64) -> f64 {
    coeffs
        .iter()
        .enumerate()
        .skip(1)
        .rev()
        .fold(0.0, |acc, (i, c)| acc * x + i as f64 * c)
}

/// Real roots of a polynomial of degree at most three (coefficients in
/// increasing degree). Leading coefficients that are negligible relative to
/// the largest one are dropped. Roots are Newton-polished.
pub fn real_roots_cubic(coeffs: &[f64; 4]) -> Vec<f64> {
    let max = coeffs.iter().fold(0.0_f64, |m, c| m.max(c.abs()));
    if max == 0.0 {
        return Vec::new();
    }
    let tol = 1e-13 * max;
    let degree = (0..4).rev().find(|&i| coeffs[i].abs() > tol).unwrap_or(0);
    let mut roots = match degree {
        0 => Vec::new(),
        1 => vec![-coeffs[0] / coeffs[1]],
        2 => quadratic_roots(coeffs[2], coeffs[1], coeffs[0]),
        _ => monic_cubic_roots(
            coeffs[2] / coeffs[3],
            coeffs[1] / coeffs[3],
            coeffs[0] / coeffs[3],
        ),
    };
    for r in roots.iter_mut() {
        for _ in 0..3 {
            let d = polyder_val(coeffs, *r);
            if d == 0.0 {
                break;
            }
            let step = polyval(coeffs, *r) / d;
            if !step.is_finite() {
                break;
            }
            *r -= step;
        }
    }
    roots.sort_by(|a, b| a.total_cmp(b));
    roots
}

fn quadratic_roots(a: f64, b: f64, c: f64) -> Vec<f64> {
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return Vec::new();
    }
    let q = -0.5 * (b + b.signum() * disc.sqrt());
    if q == 0.0 {
        return vec![0.0];
    }
    vec![q / a, c / q]
}

// x^3 + a x^2 + b x + c = 0
fn monic_cubic_roots(a: f64, b: f64, c: f64) -> Vec<f64> {
    let q = (a * a - 3.0 * b) / 9.0;
    let r = (2.0 * a * a * a - 9.0 * a * b + 27.0 * c) / 54.0;
    let shift = a / 3.0;
    if r * r < q * q * q {
        let theta = (r / (q * q * q).sqrt()).clamp(-1.0, 1.0).acos();
        let m = -2.0 * q.sqrt();
        let two_pi = 2.0 * std::f64::consts::PI;
        vec![
            m * (theta / 3.0).cos() - shift,
            m * ((theta + two_pi) / 3.0).cos() - shift,
            m * ((theta - two_pi) / 3.0).cos() - shift,
        ]
    } else {
        let big_a = -r.signum() * (r.abs() + (r * r - q * q * q).sqrt()).cbrt();
        let big_b = if big_a == 0.0 { 0.0 } else { q / big_a };
        vec![big_a + big_b - shift]
    }
}

/// Flips the sign of each row so that its largest-magnitude entry is
/// positive (first such entry on ties).
pub fn canonical_row_signs(basis: &mut DMatrix<f64>) {
    for mut row in basis.row_iter_mut() {
        let mut best = 0.0_f64;
        let mut sign = 1.0;
        for v in row.iter() {
            if v.abs() > best {
                best = v.abs();
                sign = v.signum();
            }
        }
        if sign < 0.0 {
            row *= -1.0;
        }
    }
}

pub fn ensure_finite(m: &DMatrix<f64>, what: &'static str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}
