//! Decoded face vectors written as coefficient tables and rendered images.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::config::ReconstructConfig;
use super::io::write_file;
use crate::error::{Error, Result};
use crate::paramspace::ParamSpace;

pub const COEFFICIENT_FILE: &str = "coefficients.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionSummary {
    pub stimulus_ids: Vec<String>,
    /// Over the selected stimuli and all coefficients.
    pub max_abs_error: f64,
    pub mean_abs_error: f64,
    /// Max error per coefficient index.
    pub per_coefficient_max_error: Vec<f64>,
    pub images_written: usize,
}

/// Rows `stimulus_id,coefficient,original,reconstructed,abs_error`.
pub fn coefficient_csv(ids: &[String], original: &DMatrix<f64>, decoded: &DMatrix<f64>) -> String {
    let mut out = String::from("stimulus_id,coefficient,original,reconstructed,abs_error\n");
    for (j, id) in ids.iter().enumerate() {
        for i in 0..original.nrows() {
            let (a, b) = (original[(i, j)], decoded[(i, j)]);
            let _ = writeln!(out, "{id},{i},{a},{b},{}", (a - b).abs());
        }
    }
    out
}

/// Writes the first `max_stimuli` test stimuli: a coefficient table and,
/// with a parameter space, `{id}_original.pgm` / `{id}_reconstructed.pgm`.
pub fn write_reconstructions(
    cfg: &ReconstructConfig,
    ids: &[String],
    original: &DMatrix<f64>,
    decoded: &DMatrix<f64>,
    dir: &Path,
) -> Result<ReconstructionSummary> {
    if original.shape() != decoded.shape() || original.ncols() != ids.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} ids, original {:?}, decoded {:?}",
            ids.len(),
            original.shape(),
            decoded.shape()
        )));
    }
    let n = cfg.max_stimuli.min(ids.len());
    let ids = &ids[..n];
    let original = original.columns(0, n).into_owned();
    let decoded = decoded.columns(0, n).into_owned();
    write_file(&dir.join(COEFFICIENT_FILE), coefficient_csv(ids, &original, &decoded).as_bytes())?;

    let err = (&original - &decoded).abs();
    let per_coefficient_max_error = err.row_iter().map(|r| r.max()).collect();
    let mut images_written = 0;
    if let Some(path) = &cfg.paramspace {
        let space = ParamSpace::load(path)?;
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (j, id) in ids.iter().enumerate() {
            for (tag, m) in [("original", &original), ("reconstructed", &decoded)] {
                let coeffs: Vec<f64> = m.column(j).iter().copied().collect();
                let face = space.decode_face(&space.face_vector(&coeffs)?, cfg.canvas)?;
                face.image.write_pgm(&dir.join(format!("{id}_{tag}.pgm")))?;
                images_written += 1;
            }
        }
    }
    Ok(ReconstructionSummary {
        stimulus_ids: ids.to_vec(),
        max_abs_error: if err.is_empty() { 0.0 } else { err.max() },
        mean_abs_error: if err.is_empty() { 0.0 } else { err.mean() },
        per_coefficient_max_error,
        images_written,
    })
}
