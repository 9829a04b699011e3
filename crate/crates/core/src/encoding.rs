//! Linear encoding model `R = T P + b 1^T` between face vectors and layer
//! responses, and its least-squares inverse.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, lstsq_qr, MinNormSolver};

pub const FORMAT_VERSION: u32 = 1;

/// Relative singular-value cutoff used when decoding.
pub const DECODE_RANK_TOL: f64 = 1e-10;

/// Neuron responses: one row per unit, one column per stimulus.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseMatrix {
    values: DMatrix<f64>,
    neuron_ids: Vec<String>,
    stimulus_ids: Vec<String>,
}

impl ResponseMatrix {
    pub fn new(values: DMatrix<f64>, neuron_ids: Vec<String>, stimulus_ids: Vec<String>) -> Result<Self> {
        let (m, n) = values.shape();
        if m == 0 || n == 0 {
            return Err(Error::DimensionMismatch(format!(
                "response matrix must be non-empty, got {m}x{n}"
            )));
        }
        if neuron_ids.len() != m || stimulus_ids.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "{m}x{n} responses with {} neuron ids and {} stimulus ids",
                neuron_ids.len(),
                stimulus_ids.len()
            )));
        }
        linalg::ensure_finite(&values, "response matrix")?;
        Ok(Self {
            values,
            neuron_ids,
            stimulus_ids,
        })
    }

    /// Uses generated labels `u0..` for neurons and `s0..` for stimuli.
    pub fn from_matrix(values: DMatrix<f64>) -> Result<Self> {
        let (m, n) = values.shape();
        Self::new(
            values,
            (0..m).map(|i| format!("u{i}")).collect(),
            (0..n).map(|j| format!("s{j}")).collect(),
        )
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn neuron_ids(&self) -> &[String] {
        &self.neuron_ids
    }

    pub fn stimulus_ids(&self) -> &[String] {
        &self.stimulus_ids
    }

    pub fn n_neurons(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_stimuli(&self) -> usize {
        self.values.ncols()
    }

    pub fn stimulus_index(&self) -> HashMap<&str, usize> {
        self.stimulus_ids
            .iter()
            .enumerate()
            .map(|(i, s)| (s.as_str(), i))
            .collect()
    }

    /// Columns at the given positions, in that order.
    pub fn select_columns(&self, cols: &[usize]) -> Result<Self> {
        if cols.is_empty() {
            return Err(Error::DimensionMismatch("empty stimulus selection".into()));
        }
        Self::new(
            self.values.select_columns(cols),
            self.neuron_ids.clone(),
            cols.iter().map(|&c| self.stimulus_ids[c].clone()).collect(),
        )
    }

    /// Columns for the given stimulus ids, in that order.
    pub fn select_stimuli<S: AsRef<str>>(&self, ids: &[S]) -> Result<Self> {
        let index = self.stimulus_index();
        let cols = ids
            .iter()
            .map(|id| {
                index
                    .get(id.as_ref())
                    .copied()
                    .ok_or_else(|| Error::MissingStimulus(id.as_ref().to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        self.select_columns(&cols)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFitOptions {
    pub ridge_lambda: f64,
    /// Z-score each face-vector coordinate before fitting. Only changes the
    /// result when `ridge_lambda > 0`; the stored model is always expressed
    /// in raw coordinates.
    pub standardize_inputs: bool,
}

impl Default for LinearFitOptions {
    fn default() -> Self {
        Self {
            ridge_lambda: 0.0,
            standardize_inputs: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearEncodingModel {
    /// `m x p` transformation.
    pub transform: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub ridge_lambda: f64,
    pub standardized_inputs: bool,
    pub neuron_ids: Vec<String>,
    /// Training sum of squared residuals per neuron.
    pub residual_ss: DVector<f64>,
}

impl LinearEncodingModel {
    pub fn n_neurons(&self) -> usize {
        self.transform.nrows()
    }

    pub fn dim(&self) -> usize {
        self.transform.ncols()
    }

    pub fn to_json(&self) -> Result<String> {
        let file = LinearModelFile {
            format_version: FORMAT_VERSION,
            n_neurons: self.n_neurons(),
            dim: self.dim(),
            transform: self.transform.transpose().iter().copied().collect(),
            bias: self.bias.iter().copied().collect(),
            ridge_lambda: self.ridge_lambda,
            standardized_inputs: self.standardized_inputs,
            neuron_ids: self.neuron_ids.clone(),
            residual_ss: self.residual_ss.iter().copied().collect(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: LinearModelFile = serde_json::from_str(text)?;
        if f.format_version != FORMAT_VERSION {
            return Err(Error::Config(format!(
                "unsupported linear model format_version {}",
                f.format_version
            )));
        }
        if f.transform.len() != f.n_neurons * f.dim
            || f.bias.len() != f.n_neurons
            || f.neuron_ids.len() != f.n_neurons
            || f.residual_ss.len() != f.n_neurons
        {
            return Err(Error::Config("inconsistent linear model dimensions".into()));
        }
        Ok(Self {
            transform: DMatrix::from_row_slice(f.n_neurons, f.dim, &f.transform),
            bias: DVector::from_vec(f.bias),
            ridge_lambda: f.ridge_lambda,
            standardized_inputs: f.standardized_inputs,
            neuron_ids: f.neuron_ids,
            residual_ss: DVector::from_vec(f.residual_ss),
        })
    }
}

#[derive(Serialize, Deserialize)]
struct LinearModelFile {
    format_version: u32,
    n_neurons: usize,
    dim: usize,
    transform: Vec<f64>,
    bias: Vec<f64>,
    ridge_lambda: f64,
    standardized_inputs: bool,
    neuron_ids: Vec<String>,
    residual_ss: Vec<f64>,
}

/// Fits `T` and `b` by least squares on the augmented design `[P^T 1]`.
/// One QR factorization of the shared design serves all neurons. The ridge
/// penalty, when non-zero, applies to `T` only.
pub fn fit_linear(p: &DMatrix<f64>, r: &ResponseMatrix, opts: &LinearFitOptions) -> Result<LinearEncodingModel> {
    let (dim, n) = p.shape();
    if r.n_stimuli() != n {
        return Err(Error::DimensionMismatch(format!(
            "{n} face vectors but {} response columns",
            r.n_stimuli()
        )));
    }
    if !(opts.ridge_lambda >= 0.0 && opts.ridge_lambda.is_finite()) {
        return Err(Error::Config(format!(
            "ridge_lambda must be a non-negative number, got {}",
            opts.ridge_lambda
        )));
    }
    linalg::ensure_finite(p, "face vectors")?;
    if opts.ridge_lambda == 0.0 && n < dim + 1 {
        return Err(Error::IllPosed(format!(
            "{n} stimuli cannot determine {dim} weights plus a bias without ridge regularization"
        )));
    }

    let (center, scale) = if opts.standardize_inputs {
        let mean = p.column_mean();
        let scale = DVector::from_fn(dim, |i, _| {
            let row = p.row(i);
            let var = row.iter().map(|v| (v - mean[i]).powi(2)).sum::<f64>() / n as f64;
            if var > 0.0 {
                var.sqrt()
            } else {
                1.0
            }
        });
        (mean, scale)
    } else {
        (DVector::zeros(dim), DVector::from_element(dim, 1.0))
    };

    let extra = if opts.ridge_lambda > 0.0 { dim } else { 0 };
    let mut design = DMatrix::zeros(n + extra, dim + 1);
    for j in 0..n {
        for i in 0..dim {
            design[(j, i)] = (p[(i, j)] - center[i]) / scale[i];
        }
        design[(j, dim)] = 1.0;
    }
    let root = opts.ridge_lambda.sqrt();
    for i in 0..extra {
        design[(n + i, i)] = root;
    }
    let mut targets = DMatrix::zeros(n + extra, r.n_neurons());
    targets
        .rows_mut(0, n)
        .copy_from(&r.values().transpose());

    let w = lstsq_qr(&design, &targets)?;
    let t_std = w.rows(0, dim).transpose();
    let b_std = w.row(dim).transpose();
    let mut transform = t_std.clone();
    for (i, mut col) in transform.column_iter_mut().enumerate() {
        col /= scale[i];
    }
    let shift = center.component_div(&scale);
    let bias = b_std - &t_std * shift;

    let mut model = LinearEncodingModel {
        transform,
        bias,
        ridge_lambda: opts.ridge_lambda,
        standardized_inputs: opts.standardize_inputs,
        neuron_ids: r.neuron_ids().to_vec(),
        residual_ss: DVector::zeros(r.n_neurons()),
    };
    let predicted = predict_matrix(&model, p);
    let resid = r.values() - predicted;
    model.residual_ss = DVector::from_fn(r.n_neurons(), |i, _| resid.row(i).norm_squared());
    Ok(model)
}

fn predict_matrix(model: &LinearEncodingModel, p: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = &model.transform * p;
    for mut col in out.column_iter_mut() {
        col += &model.bias;
    }
    out
}

/// `T P + b 1^T`, labelled with the model's neuron ids and the given
/// stimulus ids (generated ones when `None`).
pub fn predict_responses(
    model: &LinearEncodingModel,
    p: &DMatrix<f64>,
    stimulus_ids: Option<&[String]>,
) -> Result<ResponseMatrix> {
    if p.nrows() != model.dim() {
        return Err(Error::DimensionMismatch(format!(
            "model expects {}-dimensional face vectors, got {}",
            model.dim(),
            p.nrows()
        )));
    }
    let ids = match stimulus_ids {
        Some(ids) => ids.to_vec(),
        None => (0..p.ncols()).map(|j| format!("s{j}")).collect(),
    };
    ResponseMatrix::new(predict_matrix(model, p), model.neuron_ids.clone(), ids)
}

#[derive(Debug, Clone)]
pub struct DecodedVectors {
    /// `p x n` decoded face vectors.
    pub vectors: DMatrix<f64>,
    pub rank: usize,
    pub rank_deficient: bool,
}

/// Per stimulus, the minimum-norm minimizer of `||T x - (r - b)||`.
pub fn decode_vectors(model: &LinearEncodingModel, r: &ResponseMatrix) -> Result<DecodedVectors> {
    if r.n_neurons() != model.n_neurons() {
        return Err(Error::DimensionMismatch(format!(
            "model has {} neurons, responses have {}",
            model.n_neurons(),
            r.n_neurons()
        )));
    }
    let solver = MinNormSolver::new(&model.transform, DECODE_RANK_TOL);
    if solver.rank_deficient() {
        log::warn!(
            "decoding with rank-deficient transform (rank {} of {})",
            solver.rank,
            model.dim()
        );
    }
    let mut centered = r.values().clone();
    for mut col in centered.column_iter_mut() {
        col -= &model.bias;
    }
    Ok(DecodedVectors {
        vectors: solver.solve(&centered),
        rank: solver.rank,
        rank_deficient: solver.rank_deficient(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CubicRectification {
    /// Coefficients in increasing degree.
    pub coeffs: [f64; 4],
    pub rectified: Vec<f64>,
}

/// Least-squares cubic mapping fitted responses onto observed ones.
pub fn rectify_cubic(r_fit: &[f64], r_true: &[f64]) -> Result<CubicRectification> {
    if r_fit.len() < 4 {
        return Err(Error::IllPosed(format!(
            "cubic rectification needs at least 4 responses, got {}",
            r_fit.len()
        )));
    }
    let c = linalg::fit_polynomial(r_fit, r_true, 3)?;
    let coeffs = [c[0], c[1], c[2], c[3]];
    let rectified = r_fit.iter().map(|&x| linalg::polyval(&coeffs, x)).collect();
    Ok(CubicRectification { coeffs, rectified })
}
