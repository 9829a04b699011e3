//! Generalized Procrustes alignment of 2-D landmark sets under similarity
//! transforms.
//!
//! Shapes are handled as flat vectors `(x1, y1, x2, y2, ...)`. After every
//! iteration the mean is re-centered, rescaled to unit centroid size and
//! rotated into a canonical orientation, so the result does not depend on
//! the pose of the inputs.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::LandmarkSet;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ProcrustesOptions {
    pub max_iterations: usize,
    pub tolerance: f64,
    /// Landmark pair `(a, b)` whose difference vector `b - a` is rotated onto
    /// the +x axis in the final mean. `None` picks a default from the
    /// landmark count.
    pub orientation: Option<(usize, usize)>,
}

impl Default for ProcrustesOptions {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            tolerance: 1e-10,
            orientation: None,
        }
    }
}

impl ProcrustesOptions {
    /// For the 68-point iBUG layout the outer eye corners (36, 45) are used,
    /// otherwise the first and last landmarks.
    pub fn orientation_pair(&self, n_points: usize) -> (usize, usize) {
        self.orientation.unwrap_or(if n_points == 68 {
            (36, 45)
        } else {
            (0, n_points - 1)
        })
    }
}

#[derive(Debug, Clone)]
pub struct ProcrustesResult {
    pub aligned: Vec<LandmarkSet>,
    /// Flat `2L` mean in the aligned frame: centered, unit centroid size.
    pub mean: DVector<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Removes translation and scale. Fails when every point coincides.
pub(crate) fn normalize(flat: &DVector<f64>, index: usize) -> Result<DVector<f64>> {
    let centered = center(flat);
    let size = centered.norm();
    if size <= 1e-12 * flat.amax().max(1.0) {
        return Err(Error::DegenerateShape { index });
    }
    Ok(centered / size)
}

pub(crate) fn center(flat: &DVector<f64>) -> DVector<f64> {
    let n = flat.len() / 2;
    let (mut cx, mut cy) = (0.0, 0.0);
    for i in 0..n {
        cx += flat[2 * i];
        cy += flat[2 * i + 1];
    }
    cx /= n as f64;
    cy /= n as f64;
    DVector::from_fn(flat.len(), |k, _| {
        if k % 2 == 0 {
            flat[k] - cx
        } else {
            flat[k] - cy
        }
    })
}

/// Angle of the rotation that best maps centered `src` onto centered
/// `target` in the least-squares sense, as `(cos, sin)`.
pub(crate) fn optimal_rotation(src: &DVector<f64>, target: &DVector<f64>) -> (f64, f64) {
    let (mut dot, mut cross) = (0.0, 0.0);
    for i in 0..src.len() / 2 {
        let (x, y) = (src[2 * i], src[2 * i + 1]);
        let (tx, ty) = (target[2 * i], target[2 * i + 1]);
        dot += x * tx + y * ty;
        cross += x * ty - y * tx;
    }
    let r = dot.hypot(cross);
    if r == 0.0 {
        (1.0, 0.0)
    } else {
        (dot / r, cross / r)
    }
}

pub(crate) fn rotate(flat: &DVector<f64>, (c, s): (f64, f64)) -> DVector<f64> {
    let mut out = flat.clone();
    for i in 0..flat.len() / 2 {
        let (x, y) = (flat[2 * i], flat[2 * i + 1]);
        out[2 * i] = c * x - s * y;
        out[2 * i + 1] = s * x + c * y;
    }
    out
}

/// Rotates a centered shape so the `(a, b)` landmark vector points along +x.
/// Falls back to the landmark farthest from the centroid if `a` and `b`
/// coincide.
pub(crate) fn canonical_orientation(flat: &DVector<f64>, (a, b): (usize, usize)) -> DVector<f64> {
    let mut dx = flat[2 * b] - flat[2 * a];
    let mut dy = flat[2 * b + 1] - flat[2 * a + 1];
    if dx.hypot(dy) < 1e-9 {
        let far = (0..flat.len() / 2)
            .max_by(|&i, &j| {
                let ni = flat[2 * i].hypot(flat[2 * i + 1]);
                let nj = flat[2 * j].hypot(flat[2 * j + 1]);
                ni.total_cmp(&nj).then(j.cmp(&i))
            })
            .unwrap_or(0);
        dx = flat[2 * far];
        dy = flat[2 * far + 1];
    }
    let r = dx.hypot(dy);
    if r == 0.0 {
        return flat.clone();
    }
    rotate(flat, (dx / r, -dy / r))
}

/// Generalized Procrustes analysis.
pub fn procrustes_align(
    shapes: &[LandmarkSet],
    opts: &ProcrustesOptions,
) -> Result<ProcrustesResult> {
    if shapes.len() < 2 {
        return Err(Error::IllPosed(format!(
            "Procrustes alignment needs at least 2 shapes, got {}",
            shapes.len()
        )));
    }
    let n_points = shapes[0].len();
    if let Some((i, s)) = shapes.iter().enumerate().find(|(_, s)| s.len() != n_points) {
        return Err(Error::DimensionMismatch(format!(
            "shape {i} has {} landmarks, expected {n_points}",
            s.len()
        )));
    }
    let pair = opts.orientation_pair(n_points);
    if pair.0 >= n_points || pair.1 >= n_points {
        return Err(Error::Config(format!(
            "orientation landmarks {pair:?} out of range for {n_points} points"
        )));
    }

    let normalized = shapes
        .iter()
        .enumerate()
        .map(|(i, s)| normalize(&s.to_flat(), i))
        .collect::<Result<Vec<_>>>()?;

    let mut mean = canonical_orientation(&normalized[0], pair);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iterations {
        iterations += 1;
        let mut sum = DVector::zeros(mean.len());
        for s in &normalized {
            sum += rotate(s, optimal_rotation(s, &mean));
        }
        let avg = center(&(sum / normalized.len() as f64));
        let size = avg.norm();
        if size <= 1e-300 {
            break;
        }
        let next = canonical_orientation(&(avg / size), pair);
        let delta = (&next - &mean).norm();
        mean = next;
        if delta < opts.tolerance {
            converged = true;
            break;
        }
    }

    let aligned = normalized
        .iter()
        .map(|s| LandmarkSet::from_flat(rotate(s, optimal_rotation(s, &mean)).as_slice()))
        .collect::<Result<Vec<_>>>()?;
    Ok(ProcrustesResult {
        aligned,
        mean,
        iterations,
        converged,
    })
}

/// Similarity-aligns one shape to a unit-size mean and projects it into the
/// tangent space at the mean: the result `x` satisfies `x . mean = 1`.
/// Shape displacements that are orthogonal to the mean and to its
/// infinitesimal rotation survive this mapping unchanged.
pub fn align_to_mean(shape: &LandmarkSet, mean: &DVector<f64>) -> Result<DVector<f64>> {
    let flat = shape.to_flat();
    if flat.len() != mean.len() {
        return Err(Error::DimensionMismatch(format!(
            "shape has {} coordinates, mean has {}",
            flat.len(),
            mean.len()
        )));
    }
    let centered = center(&flat);
    if centered.norm() <= 1e-12 * flat.amax().max(1.0) {
        return Err(Error::DegenerateShape { index: 0 });
    }
    let rotated = rotate(&centered, optimal_rotation(&centered, mean));
    let proj = rotated.dot(mean);
    if proj <= 0.0 {
        return Err(Error::IllPosed(
            "shape cannot be aligned to the mean shape".into(),
        ));
    }
    Ok(rotated / proj)
}
