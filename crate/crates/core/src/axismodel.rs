//! Axis model: each neuron responds to a cubic function of the projection of
//! the face vector onto its spike-triggered average (STA).

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoding::{DecodedVectors, ResponseMatrix, DECODE_RANK_TOL};
use crate::error::{Error, Result};
use crate::linalg::{self, MinNormSolver};

pub const FORMAT_VERSION: u32 = 1;

/// Relative threshold on `|sum r|` below which the STA is undefined.
pub const STA_DEGENERACY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisNeuronModel {
    pub neuron_id: String,
    /// Unnormalized STA axis.
    pub sta: DVector<f64>,
    /// `(a, b, c, d)` of `a + b s + c s^2 + d s^3`.
    pub coeffs: [f64; 4],
    /// Smallest and largest training projection.
    pub proj_range: [f64; 2],
    /// Training sum of squared residuals.
    pub residual_ss: f64,
}

impl AxisNeuronModel {
    pub fn dim(&self) -> usize {
        self.sta.len()
    }

    pub fn rectify(&self, s: f64) -> f64 {
        linalg::polyval(&self.coeffs, s)
    }

    pub fn response(&self, x: &DVector<f64>) -> f64 {
        self.rectify(self.sta.dot(x))
    }

    /// A model whose response does not depend on the input.
    pub fn is_constant(&self) -> bool {
        self.coeffs[1..].iter().all(|c| *c == 0.0)
    }

    /// Preimage of `r` under the rectifying cubic. Prefers roots inside the
    /// training projection range, then the smallest `|s|`; otherwise the
    /// root nearest the range midpoint. When no real root exists the point
    /// where the polynomial comes closest to `r` is returned. `None` for
    /// constant models.
    pub fn invert(&self, r: f64) -> Option<f64> {
        if self.is_constant() {
            return None;
        }
        let [a, b, c, d] = self.coeffs;
        let roots = linalg::real_roots_cubic(&[a - r, b, c, d]);
        let [lo, hi] = self.proj_range;
        let slack = 1e-9 * (hi - lo).abs().max(1e-300);
        let inside = roots
            .iter()
            .copied()
            .filter(|s| *s >= lo - slack && *s <= hi + slack)
            .min_by(|x, y| x.abs().total_cmp(&y.abs()));
        if inside.is_some() {
            return inside;
        }
        let mid = 0.5 * (lo + hi);
        if let Some(s) = roots
            .iter()
            .copied()
            .min_by(|x, y| (x - mid).abs().total_cmp(&(y - mid).abs()))
        {
            return Some(s);
        }
        // Only an even-degree polynomial can miss a value; its extremum is
        // the closest point.
        if c != 0.0 {
            Some(-b / (2.0 * c))
        } else {
            Some(mid)
        }
    }
}

/// Response-weighted average of the columns of `p`.
pub fn compute_sta(p: &DMatrix<f64>, r: &[f64]) -> Result<DVector<f64>> {
    let n = p.ncols();
    if r.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{n} face vectors, {} responses",
            r.len()
        )));
    }
    if n == 0 {
        return Err(Error::IllPosed("STA needs at least one stimulus".into()));
    }
    let sum: f64 = r.iter().sum();
    let max = r.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if sum.abs() <= STA_DEGENERACY_TOL * max * n as f64 {
        return Err(Error::DegenerateResponses {
            neuron: String::new(),
            sum,
        });
    }
    Ok(p * DVector::from_column_slice(r) / sum)
}

fn projection_range(s: &[f64]) -> [f64; 2] {
    s.iter()
        .fold([f64::INFINITY, f64::NEG_INFINITY], |[lo, hi], v| [lo.min(*v), hi.max(*v)])
}

/// Fits one neuron: STA, then a least-squares cubic in the projections.
pub fn fit_axis(p: &DMatrix<f64>, r: &[f64], neuron_id: &str) -> Result<AxisNeuronModel> {
    let sta = compute_sta(p, r).map_err(|e| match e {
        Error::DegenerateResponses { sum, .. } => Error::DegenerateResponses {
            neuron: neuron_id.to_string(),
            sum,
        },
        other => other,
    })?;
    let s: Vec<f64> = p.tr_mul(&sta).iter().copied().collect();
    let proj_range = projection_range(&s);

    let (rmin, rmax) = r
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
    let coeffs = if rmax - rmin <= 1e-12 * rmax.abs().max(rmin.abs()) {
        let mean = r.iter().sum::<f64>() / r.len() as f64;
        [mean, 0.0, 0.0, 0.0]
    } else {
        if r.len() < 4 {
            return Err(Error::IllPosed(format!(
                "cubic fit for neuron {neuron_id} needs at least 4 stimuli"
            )));
        }
        let c = linalg::fit_polynomial(&s, r, 3).map_err(|e| match e {
            Error::IllPosed(msg) => Error::IllPosed(format!("neuron {neuron_id}: {msg}")),
            other => other,
        })?;
        [c[0], c[1], c[2], c[3]]
    };
    let mut model = AxisNeuronModel {
        neuron_id: neuron_id.to_string(),
        sta,
        coeffs,
        proj_range,
        residual_ss: 0.0,
    };
    model.residual_ss = s
        .iter()
        .zip(r)
        .map(|(si, ri)| (model.rectify(*si) - ri).powi(2))
        .sum();
    Ok(model)
}

#[derive(Debug, Clone)]
pub struct AxisPopulationFit {
    pub models: Vec<AxisNeuronModel>,
    /// Neurons that could not be fitted, with the reason.
    pub excluded: Vec<(String, String)>,
}

/// Fits every neuron of `r` independently. Neurons whose STA or cubic fit
/// is degenerate are excluded and listed, not fatal.
pub fn fit_axis_population(p: &DMatrix<f64>, r: &ResponseMatrix) -> Result<AxisPopulationFit> {
    if r.n_stimuli() != p.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "{} face vectors but {} response columns",
            p.ncols(),
            r.n_stimuli()
        )));
    }
    linalg::ensure_finite(p, "face vectors")?;
    let results: Vec<Result<AxisNeuronModel>> = (0..r.n_neurons())
        .into_par_iter()
        .map(|i| {
            let row: Vec<f64> = r.values().row(i).iter().copied().collect();
            fit_axis(p, &row, &r.neuron_ids()[i])
        })
        .collect();
    let mut models = Vec::new();
    let mut excluded = Vec::new();
    for (i, res) in results.into_iter().enumerate() {
        match res {
            Ok(m) => models.push(m),
            Err(e @ (Error::DegenerateResponses { .. } | Error::IllPosed(_))) => {
                log::warn!("excluding neuron {}: {e}", r.neuron_ids()[i]);
                excluded.push((r.neuron_ids()[i].clone(), e.to_string()));
            }
            Err(e) => return Err(e),
        }
    }
    Ok(AxisPopulationFit { models, excluded })
}

fn check_dims(models: &[AxisNeuronModel], p: usize) -> Result<()> {
    if let Some(m) = models.iter().find(|m| m.dim() != p) {
        return Err(Error::DimensionMismatch(format!(
            "neuron {} has a {}-dimensional axis, expected {p}",
            m.neuron_id,
            m.dim()
        )));
    }
    Ok(())
}

/// Row `i` is the cubic of the projections onto model `i`'s axis.
pub fn predict_axis(
    models: &[AxisNeuronModel],
    p: &DMatrix<f64>,
    stimulus_ids: Option<&[String]>,
) -> Result<ResponseMatrix> {
    if models.is_empty() {
        return Err(Error::DimensionMismatch("no axis models to predict with".into()));
    }
    check_dims(models, p.nrows())?;
    let mut out = DMatrix::zeros(models.len(), p.ncols());
    for (i, m) in models.iter().enumerate() {
        let s = p.tr_mul(&m.sta);
        for j in 0..p.ncols() {
            out[(i, j)] = m.rectify(s[j]);
        }
    }
    let ids = match stimulus_ids {
        Some(ids) => ids.to_vec(),
        None => (0..p.ncols()).map(|j| format!("s{j}")).collect(),
    };
    ResponseMatrix::new(out, models.iter().map(|m| m.neuron_id.clone()).collect(), ids)
}

/// Inverts each neuron's cubic and solves the stacked axis constraints
/// `<sta_i, x> = s_i` for the minimum-norm least-squares `x`, per stimulus.
/// Constant models carry no information and are skipped.
pub fn decode_axis(models: &[AxisNeuronModel], r: &ResponseMatrix) -> Result<DecodedVectors> {
    if models.len() != r.n_neurons() {
        return Err(Error::DimensionMismatch(format!(
            "{} axis models, {} response rows",
            models.len(),
            r.n_neurons()
        )));
    }
    if let Some((m, id)) = models
        .iter()
        .zip(r.neuron_ids())
        .find(|(m, id)| m.neuron_id != **id)
    {
        return Err(Error::DimensionMismatch(format!(
            "model for neuron {} paired with response row {id}",
            m.neuron_id
        )));
    }
    let dim = models.first().map(|m| m.dim()).unwrap_or(0);
    check_dims(models, dim)?;
    let used: Vec<usize> = (0..models.len()).filter(|&i| !models[i].is_constant()).collect();
    let axes = DMatrix::from_fn(used.len(), dim, |k, j| models[used[k]].sta[j]);
    let solver = MinNormSolver::new(&axes, DECODE_RANK_TOL);
    if solver.rank_deficient() {
        log::warn!(
            "axis decoding is rank deficient (rank {} of {dim})",
            solver.rank
        );
    }
    let n = r.n_stimuli();
    let mut targets = DMatrix::zeros(used.len(), n);
    for (k, &i) in used.iter().enumerate() {
        for j in 0..n {
            targets[(k, j)] = models[i]
                .invert(r.values()[(i, j)])
                .expect("non-constant model is invertible");
        }
    }
    Ok(DecodedVectors {
        vectors: solver.solve(&targets),
        rank: solver.rank,
        rank_deficient: solver.rank_deficient(),
    })
}

#[derive(Serialize, Deserialize)]
struct AxisFile {
    format_version: u32,
    models: Vec<AxisEntry>,
}

#[derive(Serialize, Deserialize)]
struct AxisEntry {
    neuron_id: String,
    sta: Vec<f64>,
    a: f64,
    b: f64,
    c: f64,
    d: f64,
    proj_min: f64,
    proj_max: f64,
    #[serde(default)]
    residual_ss: f64,
}

pub fn models_to_json(models: &[AxisNeuronModel]) -> Result<String> {
    let file = AxisFile {
        format_version: FORMAT_VERSION,
        models: models
            .iter()
            .map(|m| AxisEntry {
                neuron_id: m.neuron_id.clone(),
                sta: m.sta.iter().copied().collect(),
                a: m.coeffs[0],
                b: m.coeffs[1],
                c: m.coeffs[2],
                d: m.coeffs[3],
                proj_min: m.proj_range[0],
                proj_max: m.proj_range[1],
                residual_ss: m.residual_ss,
            })
            .collect(),
    };
    Ok(serde_json::to_string_pretty(&file)?)
}

pub fn models_from_json(text: &str) -> Result<Vec<AxisNeuronModel>> {
    let file: AxisFile = serde_json::from_str(text)?;
    if file.format_version != FORMAT_VERSION {
        return Err(Error::Config(format!(
            "unsupported axis model format_version {}",
            file.format_version
        )));
    }
    Ok(file
        .models
        .into_iter()
        .map(|e| AxisNeuronModel {
            neuron_id: e.neuron_id,
            sta: DVector::from_vec(e.sta),
            coeffs: [e.a, e.b, e.c, e.d],
            proj_range: [e.proj_min, e.proj_max],
            residual_ss: e.residual_ss,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_p() -> DMatrix<f64> {
        DMatrix::from_fn(3, 12, |i, j| {
            (((i + 1) * (j + 2) * (j + 3) * (i + j + 5)) as f64 * 0.618_033_988_7).fract() + 0.2
        })
    }

    #[test]
    fn equal_responses_give_mean() {
        let p = sample_p();
        let sta = compute_sta(&p, &[2.5; 12]).unwrap();
        assert!((sta - p.column_mean()).amax() < 1e-14);
    }

    #[test]
    fn indicator_picks_column() {
        let p = sample_p();
        let mut r = vec![0.0; 12];
        r[4] = 3.0;
        let sta = compute_sta(&p, &r).unwrap();
        assert!((sta - p.column(4)).amax() < 1e-15);
    }

    #[test]
    fn vanishing_sum_is_degenerate() {
        let p = sample_p();
        let r: Vec<f64> = (0..12).map(|j| if j % 2 == 0 { 1.0 } else { -1.0 }).collect();
        assert!(matches!(compute_sta(&p, &r), Err(Error::DegenerateResponses { .. })));
        assert!(compute_sta(&p, &[0.0; 12]).is_err());
    }

    #[test]
    fn constant_neuron_shortcut() {
        let p = sample_p();
        let m = fit_axis(&p, &[1.75; 12], "u").unwrap();
        assert_eq!(m.coeffs, [1.75, 0.0, 0.0, 0.0]);
        assert!(m.is_constant());
        assert!(m.invert(1.0).is_none());
    }

    #[test]
    fn affine_responses_fit_without_curvature() {
        // In one dimension every axis gives proportional projections.
        let p = sample_p().rows(0, 1).into_owned();
        let r: Vec<f64> = p.iter().map(|s| 3.0 + 2.0 * s).collect();
        let m = fit_axis(&p, &r, "u").unwrap();
        assert!(m.coeffs[2].abs() < 1e-8 && m.coeffs[3].abs() < 1e-8);
        assert!(m.residual_ss < 1e-18);
    }

    #[test]
    fn zero_input_predicts_intercept() {
        let m = AxisNeuronModel {
            neuron_id: "u".into(),
            sta: DVector::from_vec(vec![1.0, 2.0]),
            coeffs: [0.7, 1.0, -2.0, 0.5],
            proj_range: [-1.0, 1.0],
            residual_ss: 0.0,
        };
        let pred = predict_axis(&[m], &DMatrix::zeros(2, 3), None).unwrap();
        assert!(pred.values().iter().all(|v| *v == 0.7));
    }

    #[test]
    fn inversion_prefers_in_range_root() {
        // s^3 - s has roots -1, 0, 1 at r = 0
        let m = AxisNeuronModel {
            neuron_id: "u".into(),
            sta: DVector::from_vec(vec![1.0]),
            coeffs: [0.0, -1.0, 0.0, 1.0],
            proj_range: [0.5, 2.0],
            residual_ss: 0.0,
        };
        assert!((m.invert(0.0).unwrap() - 1.0).abs() < 1e-12);
        let wide = AxisNeuronModel {
            proj_range: [-2.0, 2.0],
            ..m.clone()
        };
        assert!(wide.invert(0.0).unwrap().abs() < 1e-12);
        let quad = AxisNeuronModel {
            coeffs: [1.0, 0.0, 1.0, 0.0],
            ..m
        };
        // 1 + s^2 never reaches 0: nearest point is the vertex
        assert_eq!(quad.invert(0.0).unwrap(), 0.0);
    }

    #[test]
    fn single_neuron_decode_is_consistent() {
        let m = AxisNeuronModel {
            neuron_id: "u0".into(),
            sta: DVector::from_vec(vec![0.6, 0.8, 0.0]),
            coeffs: [0.1, 1.0, 0.3, 0.2],
            proj_range: [-2.0, 2.0],
            residual_ss: 0.0,
        };
        let r = ResponseMatrix::from_matrix(DMatrix::from_row_slice(1, 2, &[0.5, -0.4])).unwrap();
        let d = decode_axis(std::slice::from_ref(&m), &r).unwrap();
        assert!(d.rank_deficient);
        let again = predict_axis(&[m], &d.vectors, None).unwrap();
        assert!((again.values() - r.values()).amax() < 1e-8);
    }

    #[test]
    fn json_round_trip() {
        let p = sample_p();
        let r: Vec<f64> = (0..12).map(|j| 1.0 + (j as f64 * 0.4).cos()).collect();
        let m = fit_axis(&p, &r, "n7").unwrap();
        let back = models_from_json(&models_to_json(std::slice::from_ref(&m)).unwrap()).unwrap();
        assert_eq!(back, vec![m]);
    }
}
