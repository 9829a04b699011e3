//! Shape-appearance parameter space.
//!
//! Landmark sets are Procrustes-aligned and reduced by PCA to shape
//! coefficients; images are warped onto the mean shape and their gray
//! values reduced by a second PCA to appearance coefficients. A face vector
//! is the concatenation of both coefficient sets.

pub mod pca;
pub mod procrustes;
pub mod raster;
pub mod warp;

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use pca::Pca;
pub use procrustes::{align_to_mean, procrustes_align, ProcrustesOptions, ProcrustesResult};
pub use raster::GrayImage;
pub use warp::{MeshGeometry, WarpResult};

pub const FORMAT_VERSION: u32 = 1;

/// Ordered 2-D landmark coordinates in pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandmarkSet {
    points: Vec<[f64; 2]>,
}

impl LandmarkSet {
    pub fn new(points: Vec<[f64; 2]>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::IllPosed("empty landmark set".into()));
        }
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("landmark coordinates"));
        }
        Ok(Self { points })
    }

    /// From `(x1, y1, x2, y2, ...)`.
    pub fn from_flat(flat: &[f64]) -> Result<Self> {
        if flat.len() % 2 != 0 {
            return Err(Error::DimensionMismatch(format!(
                "odd coordinate count {}",
                flat.len()
            )));
        }
        Self::new(flat.chunks_exact(2).map(|c| [c[0], c[1]]).collect())
    }

    pub fn to_flat(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.points.len() * 2,
            self.points.iter().flat_map(|p| [p[0], p[1]]),
        )
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Concatenated shape and appearance coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceVector {
    pub coeffs: DVector<f64>,
    pub shape_dim: usize,
}

impl FaceVector {
    pub fn new(coeffs: DVector<f64>, shape_dim: usize) -> Result<Self> {
        if shape_dim > coeffs.len() {
            return Err(Error::DimensionMismatch(format!(
                "shape dimension {shape_dim} exceeds vector length {}",
                coeffs.len()
            )));
        }
        if coeffs.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("face vector"));
        }
        Ok(Self { coeffs, shape_dim })
    }

    pub fn shape(&self) -> DVector<f64> {
        self.coeffs.rows(0, self.shape_dim).into_owned()
    }

    pub fn appearance(&self) -> DVector<f64> {
        self.coeffs
            .rows(self.shape_dim, self.coeffs.len() - self.shape_dim)
            .into_owned()
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpaceConfig {
    pub shape_components: usize,
    pub appearance_components: usize,
    /// Side length in pixels of the square reference frame that holds the
    /// mean shape.
    pub reference_size: usize,
    /// Border in pixels between the mean shape's bounding box and the frame.
    pub reference_margin: f64,
    /// Standardize each warped appearance vector (zero mean, unit variance)
    /// before PCA. Off by default: raw gray values in `[0, 1]`.
    pub normalize_appearance: bool,
    pub procrustes: ProcrustesOptions,
}

impl Default for ParamSpaceConfig {
    fn default() -> Self {
        Self {
            shape_components: 25,
            appearance_components: 25,
            reference_size: 64,
            reference_margin: 2.0,
            normalize_appearance: false,
            procrustes: ProcrustesOptions::default(),
        }
    }
}

/// Maps the unit-size aligned frame to reference pixels:
/// `pixel = scale * aligned + offset`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceFrame {
    pub scale: f64,
    pub offset: [f64; 2],
    pub size: usize,
}

impl ReferenceFrame {
    fn fit(mean: &DVector<f64>, size: usize, margin: f64) -> Result<Self> {
        let (mut min_x, mut max_x, mut min_y, mut max_y) = (
            f64::INFINITY,
            f64::NEG_INFINITY,
            f64::INFINITY,
            f64::NEG_INFINITY,
        );
        for i in 0..mean.len() / 2 {
            min_x = min_x.min(mean[2 * i]);
            max_x = max_x.max(mean[2 * i]);
            min_y = min_y.min(mean[2 * i + 1]);
            max_y = max_y.max(mean[2 * i + 1]);
        }
        let extent = (max_x - min_x).max(max_y - min_y);
        let usable = size as f64 - 1.0 - 2.0 * margin;
        if usable <= 0.0 || extent <= 0.0 {
            return Err(Error::Config(format!(
                "reference frame of {size} px with margin {margin} is too small"
            )));
        }
        let scale = usable / extent;
        let center = (size as f64 - 1.0) / 2.0;
        Ok(Self {
            scale,
            offset: [
                center - scale * (min_x + max_x) / 2.0,
                center - scale * (min_y + max_y) / 2.0,
            ],
            size,
        })
    }

    pub fn to_pixels(&self, aligned: &DVector<f64>) -> Result<LandmarkSet> {
        LandmarkSet::new(
            (0..aligned.len() / 2)
                .map(|i| {
                    [
                        self.scale * aligned[2 * i] + self.offset[0],
                        self.scale * aligned[2 * i + 1] + self.offset[1],
                    ]
                })
                .collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShapeModel {
    pub pca: Pca,
    /// Unit-size Procrustes mean. Shapes are aligned to it before
    /// projection; it differs slightly from `pca.mean`, the average of the
    /// tangent-space vectors.
    pub procrustes_mean: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AppearanceModel {
    pub pca: Pca,
    pub geometry: MeshGeometry,
}

/// A fitted parameter space. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpace {
    pub shape: ShapeModel,
    pub appearance: AppearanceModel,
    pub frame: ReferenceFrame,
    pub config: ParamSpaceConfig,
}

/// Output of [`ParamSpace::fit`].
#[derive(Debug, Clone)]
pub struct ParamSpaceFit {
    pub space: ParamSpace,
    /// Face vectors of the training samples, one per column.
    pub face_vectors: DMatrix<f64>,
    pub procrustes_iterations: usize,
    pub procrustes_converged: bool,
    pub out_of_bounds_samples: usize,
}

#[derive(Debug, Clone)]
pub struct DecodedFace {
    pub landmarks: LandmarkSet,
    /// Unclamped appearance over the mask.
    pub appearance: DVector<f64>,
    pub image: GrayImage,
}

#[derive(Debug, Clone)]
pub struct EncodedFace {
    pub vector: FaceVector,
    pub out_of_bounds: usize,
}

impl ParamSpace {
    /// Builds the parameter space from landmarked training images.
    pub fn fit(samples: &[(LandmarkSet, GrayImage)], config: &ParamSpaceConfig) -> Result<ParamSpaceFit> {
        let shapes: Vec<LandmarkSet> = samples.iter().map(|(l, _)| l.clone()).collect();
        let gpa = procrustes_align(&shapes, &config.procrustes)?;
        if !gpa.converged {
            log::warn!(
                "Procrustes alignment stopped after {} iterations without converging",
                gpa.iterations
            );
        }
        let tangent = shapes
            .iter()
            .map(|s| align_to_mean(s, &gpa.mean))
            .collect::<Result<Vec<_>>>()?;
        let shape_pca = Pca::fit(&DMatrix::from_columns(&tangent), config.shape_components)?;

        let frame = ReferenceFrame::fit(&gpa.mean, config.reference_size, config.reference_margin)?;
        let reference = frame.to_pixels(&gpa.mean)?;
        let geometry = MeshGeometry::new(
            reference.points().to_vec(),
            config.reference_size,
            config.reference_size,
        )?;

        let mut oob = 0;
        let mut columns = Vec::with_capacity(samples.len());
        for (lm, img) in samples {
            let w = geometry.warp_to_mean(img, lm)?;
            oob += w.out_of_bounds;
            columns.push(photometric(w.appearance, config.normalize_appearance));
        }
        let app_pca = Pca::fit(&DMatrix::from_columns(&columns), config.appearance_components)?;

        let space = ParamSpace {
            shape: ShapeModel {
                pca: shape_pca,
                procrustes_mean: gpa.mean.clone(),
            },
            appearance: AppearanceModel {
                pca: app_pca,
                geometry,
            },
            frame,
            config: config.clone(),
        };
        let mut face_vectors = DMatrix::zeros(space.dim(), samples.len());
        for (j, (t, a)) in tangent.iter().zip(&columns).enumerate() {
            let v = space.vector_from_parts(t, a);
            face_vectors.set_column(j, &v.coeffs);
        }
        Ok(ParamSpaceFit {
            space,
            face_vectors,
            procrustes_iterations: gpa.iterations,
            procrustes_converged: gpa.converged,
            out_of_bounds_samples: oob,
        })
    }

    pub fn shape_dim(&self) -> usize {
        self.shape.pca.n_components()
    }

    pub fn appearance_dim(&self) -> usize {
        self.appearance.pca.n_components()
    }

    /// Face-vector dimension: shape plus appearance components.
    pub fn dim(&self) -> usize {
        self.shape_dim() + self.appearance_dim()
    }

    pub fn n_landmarks(&self) -> usize {
        self.shape.pca.dim() / 2
    }

    fn vector_from_parts(&self, tangent: &DVector<f64>, appearance: &DVector<f64>) -> FaceVector {
        let s = self.shape.pca.project(tangent);
        let a = self.appearance.pca.project(appearance);
        let coeffs = DVector::from_iterator(s.len() + a.len(), s.iter().chain(a.iter()).copied());
        FaceVector {
            coeffs,
            shape_dim: s.len(),
        }
    }

    /// Encodes landmarks plus an already shape-normalized appearance vector.
    pub fn encode_parts(&self, landmarks: &LandmarkSet, appearance: &DVector<f64>) -> Result<FaceVector> {
        if appearance.len() != self.appearance.pca.dim() {
            return Err(Error::DimensionMismatch(format!(
                "appearance has {} values, model expects {}",
                appearance.len(),
                self.appearance.pca.dim()
            )));
        }
        let tangent = align_to_mean(landmarks, &self.shape.procrustes_mean)?;
        let app = photometric(appearance.clone(), self.config.normalize_appearance);
        Ok(self.vector_from_parts(&tangent, &app))
    }

    /// Encodes a landmarked image.
    pub fn encode_face(&self, landmarks: &LandmarkSet, image: &GrayImage) -> Result<EncodedFace> {
        let w = self.appearance.geometry.warp_to_mean(image, landmarks)?;
        Ok(EncodedFace {
            vector: self.encode_parts(landmarks, &w.appearance)?,
            out_of_bounds: w.out_of_bounds,
        })
    }

    /// Decoded landmarks in reference pixel coordinates.
    pub fn decode_shape(&self, shape_coeffs: &DVector<f64>) -> Result<LandmarkSet> {
        let aligned = self.shape.pca.reconstruct(shape_coeffs);
        self.frame.to_pixels(&aligned)
    }

    /// Decodes a face vector and renders it on a canvas (the reference frame
    /// size when `canvas` is `None`).
    pub fn decode_face(&self, v: &FaceVector, canvas: Option<(usize, usize)>) -> Result<DecodedFace> {
        if v.len() != self.dim() || v.shape_dim != self.shape_dim() {
            return Err(Error::DimensionMismatch(format!(
                "face vector has {} ({} shape) coefficients, space has {} ({} shape)",
                v.len(),
                v.shape_dim,
                self.dim(),
                self.shape_dim()
            )));
        }
        if v.coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("face vector"));
        }
        let landmarks = self.decode_shape(&v.shape())?;
        let appearance = self.appearance.pca.reconstruct(&v.appearance());
        let size = self.frame.size;
        let image = self.appearance.geometry.render(
            &appearance,
            &landmarks,
            canvas.unwrap_or((size, size)),
            0.0,
        )?;
        Ok(DecodedFace {
            landmarks,
            appearance,
            image,
        })
    }

    /// Wraps a raw coefficient slice with this space's shape split.
    pub fn face_vector(&self, coeffs: &[f64]) -> Result<FaceVector> {
        if coeffs.len() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "{} coefficients for a {}-dimensional space",
                coeffs.len(),
                self.dim()
            )));
        }
        FaceVector::new(DVector::from_column_slice(coeffs), self.shape_dim())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ParamSpaceFile::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ParamSpaceFile = serde_json::from_str(text)?;
        file.into_space()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

fn photometric(mut v: DVector<f64>, normalize: bool) -> DVector<f64> {
    if normalize && v.len() > 1 {
        let mean = v.mean();
        let std = v.variance().sqrt();
        v.add_scalar_mut(-mean);
        if std > 0.0 {
            v /= std;
        }
    }
    v
}

#[derive(Serialize, Deserialize)]
struct PcaFile {
    dim: usize,
    components: usize,
    requested: usize,
    mean: Vec<f64>,
    /// Row-major `components x dim`.
    basis: Vec<f64>,
    eigenvalues: Vec<f64>,
}

impl From<&Pca> for PcaFile {
    fn from(p: &Pca) -> Self {
        Self {
            dim: p.dim(),
            components: p.n_components(),
            requested: p.requested,
            mean: p.mean.iter().copied().collect(),
            basis: p.basis.transpose().iter().copied().collect(),
            eigenvalues: p.eigenvalues.iter().copied().collect(),
        }
    }
}

impl PcaFile {
    fn into_pca(self, what: &str) -> Result<Pca> {
        if self.mean.len() != self.dim
            || self.basis.len() != self.dim * self.components
            || self.eigenvalues.len() != self.components
        {
            return Err(Error::Config(format!("inconsistent {what} model dimensions")));
        }
        Ok(Pca {
            mean: DVector::from_vec(self.mean),
            basis: DMatrix::from_row_slice(self.components, self.dim, &self.basis),
            eigenvalues: DVector::from_vec(self.eigenvalues),
            requested: self.requested,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct ParamSpaceFile {
    format_version: u32,
    n_landmarks: usize,
    shape_dim: usize,
    appearance_dim: usize,
    config: ParamSpaceConfig,
    frame: ReferenceFrame,
    shape: PcaFile,
    procrustes_mean: Vec<f64>,
    appearance: PcaFile,
    reference_landmarks: Vec<[f64; 2]>,
    triangulation: Vec<[usize; 3]>,
    mask: Vec<[u32; 2]>,
}

impl From<&ParamSpace> for ParamSpaceFile {
    fn from(s: &ParamSpace) -> Self {
        let g = &s.appearance.geometry;
        Self {
            format_version: FORMAT_VERSION,
            n_landmarks: s.n_landmarks(),
            shape_dim: s.shape_dim(),
            appearance_dim: s.appearance_dim(),
            config: s.config.clone(),
            frame: s.frame,
            shape: PcaFile::from(&s.shape.pca),
            procrustes_mean: s.shape.procrustes_mean.iter().copied().collect(),
            appearance: PcaFile::from(&s.appearance.pca),
            reference_landmarks: g.reference.clone(),
            triangulation: g.triangles.clone(),
            mask: g.mask.clone(),
        }
    }
}

impl ParamSpaceFile {
    fn into_space(self) -> Result<ParamSpace> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Config(format!(
                "unsupported parameter-space format_version {}",
                self.format_version
            )));
        }
        let shape = self.shape.into_pca("shape")?;
        let appearance = self.appearance.into_pca("appearance")?;
        if shape.dim() != 2 * self.n_landmarks
            || self.procrustes_mean.len() != shape.dim()
            || self.reference_landmarks.len() != self.n_landmarks
            || appearance.dim() != self.mask.len()
            || shape.n_components() != self.shape_dim
            || appearance.n_components() != self.appearance_dim
        {
            return Err(Error::Config("inconsistent parameter-space dimensions".into()));
        }
        let size = self.frame.size;
        let geometry =
            MeshGeometry::restore(self.reference_landmarks, self.triangulation, self.mask, size, size)?;
        Ok(ParamSpace {
            shape: ShapeModel {
                pca: shape,
                procrustes_mean: DVector::from_vec(self.procrustes_mean),
            },
            appearance: AppearanceModel {
                pca: appearance,
                geometry,
            },
            frame: self.frame,
            config: self.config,
        })
    }
}
