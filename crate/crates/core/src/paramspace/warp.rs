//! Piecewise-affine warping between a landmark configuration and the
//! reference (mean-shape) frame.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use spade::{DelaunayTriangulation, Point2, Triangulation};

use super::raster::GrayImage;
use super::LandmarkSet;
use crate::error::{Error, Result};

/// Barycentric slack when testing triangle membership.
const INSIDE_TOL: f64 = 1e-9;

/// Delaunay triangulation of a point set, as landmark index triples.
pub fn delaunay(points: &[[f64; 2]]) -> Result<Vec<[usize; 3]>> {
    let mut tri: DelaunayTriangulation<Point2<f64>> = DelaunayTriangulation::new();
    let mut handle_to_landmark = vec![usize::MAX; points.len()];
    for (i, p) in points.iter().enumerate() {
        let h = tri
            .insert(Point2::new(p[0], p[1]))
            .map_err(|e| Error::IllPosed(format!("cannot triangulate landmark {i}: {e:?}")))?;
        let idx = h.index();
        if idx < i && handle_to_landmark[idx] != usize::MAX {
            return Err(Error::IllPosed(format!(
                "landmarks {} and {i} coincide in the mean shape",
                handle_to_landmark[idx]
            )));
        }
        handle_to_landmark[idx] = i;
    }
    let mut out: Vec<[usize; 3]> = tri
        .inner_faces()
        .map(|f| {
            let v = f.vertices();
            [
                handle_to_landmark[v[0].fix().index()],
                handle_to_landmark[v[1].fix().index()],
                handle_to_landmark[v[2].fix().index()],
            ]
        })
        .collect();
    if out.is_empty() {
        return Err(Error::IllPosed("mean shape is collinear; no triangles".into()));
    }
    // Deterministic order independent of the triangulation's internals.
    for t in out.iter_mut() {
        let min_pos = (0..3).min_by_key(|&k| t[k]).unwrap_or(0);
        t.rotate_left(min_pos);
    }
    out.sort();
    Ok(out)
}

/// Barycentric coordinates of `p` in triangle `(a, b, c)`.
pub fn barycentric(p: [f64; 2], a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> Option<[f64; 3]> {
    let det = (b[1] - c[1]) * (a[0] - c[0]) + (c[0] - b[0]) * (a[1] - c[1]);
    if det.abs() < 1e-300 {
        return None;
    }
    let l1 = ((b[1] - c[1]) * (p[0] - c[0]) + (c[0] - b[0]) * (p[1] - c[1])) / det;
    let l2 = ((c[1] - a[1]) * (p[0] - c[0]) + (a[0] - c[0]) * (p[1] - c[1])) / det;
    Some([l1, l2, 1.0 - l1 - l2])
}

/// First triangle (in list order) containing `p`, with its barycentric
/// coordinates.
pub fn locate(
    p: [f64; 2],
    vertices: &[[f64; 2]],
    triangles: &[[usize; 3]],
) -> Option<(usize, [f64; 3])> {
    triangles.iter().enumerate().find_map(|(t, tri)| {
        let (a, b, c) = (vertices[tri[0]], vertices[tri[1]], vertices[tri[2]]);
        let min_x = a[0].min(b[0]).min(c[0]) - 1e-7;
        let max_x = a[0].max(b[0]).max(c[0]) + 1e-7;
        let min_y = a[1].min(b[1]).min(c[1]) - 1e-7;
        let max_y = a[1].max(b[1]).max(c[1]) + 1e-7;
        if p[0] < min_x || p[0] > max_x || p[1] < min_y || p[1] > max_y {
            return None;
        }
        let bary = barycentric(p, a, b, c)?;
        bary.iter().all(|&l| l >= -INSIDE_TOL).then_some((t, bary))
    })
}

/// Triangulated mean shape placed on a pixel grid, with the list of pixels
/// it covers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshGeometry {
    pub width: usize,
    pub height: usize,
    /// Mean-shape landmarks in reference pixel coordinates.
    pub reference: Vec<[f64; 2]>,
    pub triangles: Vec<[usize; 3]>,
    /// Covered pixels `(x, y)` in row-major order.
    pub mask: Vec<[u32; 2]>,
    #[serde(skip)]
    cells: Vec<(usize, [f64; 3])>,
}

impl MeshGeometry {
    pub fn new(reference: Vec<[f64; 2]>, width: usize, height: usize) -> Result<Self> {
        let triangles = delaunay(&reference)?;
        let mut mask = Vec::new();
        let mut cells = Vec::new();
        for y in 0..height {
            for x in 0..width {
                if let Some(cell) = locate([x as f64, y as f64], &reference, &triangles) {
                    mask.push([x as u32, y as u32]);
                    cells.push(cell);
                }
            }
        }
        if mask.is_empty() {
            return Err(Error::IllPosed("mean shape covers no pixels".into()));
        }
        Ok(Self {
            width,
            height,
            reference,
            triangles,
            mask,
            cells,
        })
    }

    /// Rebuilds derived lookup data after deserialization and checks that
    /// the stored triangulation and mask are consistent.
    pub fn restore(
        reference: Vec<[f64; 2]>,
        triangles: Vec<[usize; 3]>,
        mask: Vec<[u32; 2]>,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let n = reference.len();
        if triangles.iter().flatten().any(|&i| i >= n) {
            return Err(Error::Config("triangle index out of range".into()));
        }
        let cells = mask
            .iter()
            .map(|&[x, y]| {
                locate([x as f64, y as f64], &reference, &triangles).ok_or_else(|| {
                    Error::Config(format!("mask pixel ({x}, {y}) lies outside the mesh"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            width,
            height,
            reference,
            triangles,
            mask,
            cells,
        })
    }

    pub fn n_pixels(&self) -> usize {
        self.mask.len()
    }

    /// Samples `image` at the points that the mask pixels map to under the
    /// piecewise-affine map sending the reference landmarks to `landmarks`.
    pub fn warp_to_mean(&self, image: &GrayImage, landmarks: &LandmarkSet) -> Result<WarpResult> {
        if landmarks.len() != self.reference.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} landmarks, mesh has {}",
                landmarks.len(),
                self.reference.len()
            )));
        }
        let pts = landmarks.points();
        let mut out_of_bounds = 0;
        let values = self
            .cells
            .iter()
            .map(|&(t, l)| {
                let tri = self.triangles[t];
                let sx = l[0] * pts[tri[0]][0] + l[1] * pts[tri[1]][0] + l[2] * pts[tri[2]][0];
                let sy = l[0] * pts[tri[0]][1] + l[1] * pts[tri[1]][1] + l[2] * pts[tri[2]][1];
                let (v, oob) = image.sample_bilinear(sx, sy);
                out_of_bounds += oob as usize;
                v
            })
            .collect::<Vec<_>>();
        if out_of_bounds > 0 {
            log::debug!("{out_of_bounds} warped samples clamped to the image border");
        }
        Ok(WarpResult {
            appearance: DVector::from_vec(values),
            out_of_bounds,
        })
    }

    /// Inverse warp: paints `appearance` (defined on the mask) onto a canvas
    /// so that the reference landmarks land on `landmarks`. Pixels outside
    /// the warped mesh get `background`; values are clamped to `[0, 1]`.
    pub fn render(
        &self,
        appearance: &DVector<f64>,
        landmarks: &LandmarkSet,
        canvas: (usize, usize),
        background: f64,
    ) -> Result<GrayImage> {
        if appearance.len() != self.mask.len() {
            return Err(Error::DimensionMismatch(format!(
                "appearance has {} values, mask has {} pixels",
                appearance.len(),
                self.mask.len()
            )));
        }
        if landmarks.len() != self.reference.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} landmarks, mesh has {}",
                landmarks.len(),
                self.reference.len()
            )));
        }
        let mut lookup = vec![usize::MAX; self.width * self.height];
        for (i, &[x, y]) in self.mask.iter().enumerate() {
            lookup[y as usize * self.width + x as usize] = i;
        }
        let sample = |x: f64, y: f64| -> Option<f64> {
            let x0 = x.floor();
            let y0 = y.floor();
            let (fx, fy) = (x - x0, y - y0);
            let mut acc = 0.0;
            let mut weight = 0.0;
            for (dx, dy, w) in [
                (0, 0, (1.0 - fx) * (1.0 - fy)),
                (1, 0, fx * (1.0 - fy)),
                (0, 1, (1.0 - fx) * fy),
                (1, 1, fx * fy),
            ] {
                let (px, py) = (x0 as i64 + dx, y0 as i64 + dy);
                if w <= 0.0
                    || px < 0
                    || py < 0
                    || px as usize >= self.width
                    || py as usize >= self.height
                {
                    continue;
                }
                let idx = lookup[py as usize * self.width + px as usize];
                if idx != usize::MAX {
                    acc += w * appearance[idx];
                    weight += w;
                }
            }
            (weight > 0.0).then(|| acc / weight)
        };

        let target = landmarks.points();
        let (w, h) = canvas;
        let mut img = GrayImage::new(w, h, background);
        for y in 0..h {
            for x in 0..w {
                if let Some((t, l)) = locate([x as f64, y as f64], target, &self.triangles) {
                    let tri = self.triangles[t];
                    let r = &self.reference;
                    let rx = l[0] * r[tri[0]][0] + l[1] * r[tri[1]][0] + l[2] * r[tri[2]][0];
                    let ry = l[0] * r[tri[0]][1] + l[1] * r[tri[1]][1] + l[2] * r[tri[2]][1];
                    if let Some(v) = sample(rx, ry) {
                        img.set(x, y, v.clamp(0.0, 1.0));
                    }
                }
            }
        }
        Ok(img)
    }

    /// Reads the mask pixels of an image directly.
    pub fn sample_mask(&self, image: &GrayImage) -> DVector<f64> {
        DVector::from_iterator(
            self.mask.len(),
            self.mask
                .iter()
                .map(|&[x, y]| image.get(x as usize, y as usize)),
        )
    }
}

#[derive(Debug, Clone)]
pub struct WarpResult {
    pub appearance: DVector<f64>,
    /// Number of samples that fell outside the source image and were clamped.
    pub out_of_bounds: usize,
}
