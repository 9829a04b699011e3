//! Seeded synthetic data with known ground truth: face-vector populations,
//! linear and axis neuron populations, identity clusters and toy faces.
//!
//! All randomness is ChaCha8 (see [`crate::rng`]); each purpose draws from
//! its own stream so that, for example, adding neurons does not change the
//! face vectors.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::axismodel::{self, AxisNeuronModel};
use crate::encoding::ResponseMatrix;
use crate::error::{Error, Result};
use crate::paramspace::{raster::GrayImage, LandmarkSet};
use crate::rng;
use crate::verify::{balanced_pairs, PairSet};

const STREAM_FACES: u64 = 1;
const STREAM_LINEAR: u64 = 2;
const STREAM_NOISE: u64 = 3;
const STREAM_AXIS_ORDER: u64 = 4;
const STREAM_CENTERS: u64 = 5;
const STREAM_CLUSTER_SAMPLES: u64 = 6;
const STREAM_PAIRS: u64 = 7;
const STREAM_AXIS_NEURON: u64 = 1 << 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub seed: u64,
    pub n_stimuli: usize,
    pub n_neurons: usize,
    pub dim: usize,
    /// Noise standard deviation relative to each neuron's noise-free
    /// response standard deviation.
    #[serde(default)]
    pub noise_sigma: f64,
    /// Coordinate `j` of the face vectors has standard deviation
    /// `exp(-variance_decay * j)`. Defaults to 0.05 for axis populations
    /// and 0 otherwise.
    #[serde(default)]
    pub variance_decay: Option<f64>,
    pub kind: SynthKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SynthKind {
    Linear,
    Axis(AxisParams),
    IdentityClusters(ClusterParams),
}

/// Axis coefficient ranges, in units where the projections onto the axis
/// have unit root-mean-square.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AxisParams {
    /// Range of `|b|`.
    pub linear: [f64; 2],
    /// Range of `|d|`; `d` takes the sign of `b`.
    pub cubic: [f64; 2],
    /// `|c| <= quadratic_fraction * sqrt(3 b d)`, which keeps the cubic
    /// monotone for fractions below one.
    pub quadratic_fraction: f64,
}

impl Default for AxisParams {
    fn default() -> Self {
        Self {
            linear: [0.5, 1.5],
            cubic: [0.1, 0.5],
            quadratic_fraction: 0.9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterParams {
    pub identities: usize,
    pub per_identity: usize,
    /// Per-coordinate standard deviation of samples around their center.
    pub spread: f64,
    /// Per-coordinate standard deviation of the centers.
    #[serde(default = "default_center_scale")]
    pub center_scale: f64,
    /// Centers are at least `separation * spread * sqrt(dim)` apart.
    #[serde(default = "default_separation")]
    pub separation: f64,
    #[serde(default)]
    pub n_pairs: usize,
}

fn default_center_scale() -> f64 {
    1.0
}

fn default_separation() -> f64 {
    6.0
}

impl SynthSpec {
    pub fn variance_decay(&self) -> f64 {
        self.variance_decay.unwrap_or(match self.kind {
            SynthKind::Axis(_) => 0.05,
            _ => 0.0,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.n_stimuli == 0 || self.n_neurons == 0 {
            return Err(Error::Config("dim, n_stimuli and n_neurons must be positive".into()));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Config(format!("noise_sigma must be >= 0, got {}", self.noise_sigma)));
        }
        if !self.variance_decay().is_finite() {
            return Err(Error::Config("variance_decay must be finite".into()));
        }
        match &self.kind {
            SynthKind::Linear => {}
            SynthKind::Axis(a) => {
                let ok = a.linear[0] <= a.linear[1]
                    && a.cubic[0] <= a.cubic[1]
                    && a.linear[0] > 0.0
                    && a.cubic[0] >= 0.0
                    && a.quadratic_fraction >= 0.0;
                if !ok {
                    return Err(Error::Config(format!("invalid axis coefficient ranges {a:?}")));
                }
                if self.n_stimuli < 4 {
                    return Err(Error::Config("axis populations need at least 4 stimuli".into()));
                }
            }
            SynthKind::IdentityClusters(c) => {
                if c.identities < 2 || c.per_identity < 2 {
                    return Err(Error::Config(
                        "identity clusters need at least 2 identities with 2 samples each".into(),
                    ));
                }
                if c.identities * c.per_identity != self.n_stimuli {
                    return Err(Error::Config(format!(
                        "n_stimuli {} must equal identities * per_identity = {}",
                        self.n_stimuli,
                        c.identities * c.per_identity
                    )));
                }
                if !(c.spread >= 0.0) || !(c.center_scale > 0.0) || !(c.separation >= 0.0) {
                    return Err(Error::Config(format!("invalid cluster parameters {c:?}")));
                }
            }
        }
        Ok(())
    }
}

pub fn stimulus_ids(n: usize) -> Vec<String> {
    (0..n).map(|j| format!("s{j:05}")).collect()
}

pub fn neuron_ids(m: usize) -> Vec<String> {
    (0..m).map(|i| format!("u{i}")).collect()
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// `dim x n_stimuli` Gaussian face vectors, zero mean, independent
/// coordinates with standard deviations `exp(-variance_decay * j)`.
pub fn gen_face_vectors(spec: &SynthSpec) -> DMatrix<f64> {
    let decay = spec.variance_decay();
    let mut g = rng::stream(spec.seed, STREAM_FACES);
    let mut p = DMatrix::zeros(spec.dim, spec.n_stimuli);
    for j in 0..spec.n_stimuli {
        for i in 0..spec.dim {
            p[(i, j)] = normal(&mut g) * (-decay * i as f64).exp();
        }
    }
    p
}

/// Adds `sigma * std(row) * N(0, 1)` to every row; a constant row uses
/// scale 1.
fn add_noise(r: &mut DMatrix<f64>, sigma: f64, seed: u64) {
    if sigma == 0.0 {
        return;
    }
    let n = r.ncols() as f64;
    let mut g = rng::stream(seed, STREAM_NOISE);
    for i in 0..r.nrows() {
        let row = r.row(i);
        let mean = row.sum() / n;
        let std = (row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        let scale = if std > 0.0 { std } else { 1.0 };
        for j in 0..r.ncols() {
            r[(i, j)] += sigma * scale * normal(&mut g);
        }
    }
}

#[derive(Debug, Clone)]
pub struct LinearPopulation {
    pub t0: DMatrix<f64>,
    pub b0: DVector<f64>,
    pub responses: ResponseMatrix,
}

/// Responses `t0 p + b0 1^T`, plus relative noise drawn from `seed`.
pub fn linear_responses(
    t0: &DMatrix<f64>,
    b0: &DVector<f64>,
    p: &DMatrix<f64>,
    noise_sigma: f64,
    seed: u64,
) -> Result<ResponseMatrix> {
    if t0.ncols() != p.nrows() || t0.nrows() != b0.len() {
        return Err(Error::DimensionMismatch(format!(
            "transform {}x{}, bias {}, face vectors {}x{}",
            t0.nrows(),
            t0.ncols(),
            b0.len(),
            p.nrows(),
            p.ncols()
        )));
    }
    let mut r = t0 * p;
    for mut col in r.column_iter_mut() {
        col += b0;
    }
    add_noise(&mut r, noise_sigma, seed);
    ResponseMatrix::new(r, neuron_ids(t0.nrows()), stimulus_ids(p.ncols()))
}

/// Random `T0`, `b0` with entries uniform in `[-1, 1]`.
pub fn gen_linear_population(spec: &SynthSpec, p: &DMatrix<f64>) -> Result<LinearPopulation> {
    if p.nrows() != spec.dim {
        return Err(Error::DimensionMismatch(format!(
            "spec dim {} but face vectors have {} rows",
            spec.dim,
            p.nrows()
        )));
    }
    let mut g = rng::stream(spec.seed, STREAM_LINEAR);
    let t0 = DMatrix::from_fn(spec.n_neurons, spec.dim, |_, _| g.random_range(-1.0..=1.0));
    let b0 = DVector::from_fn(spec.n_neurons, |_, _| g.random_range(-1.0..=1.0));
    let responses = linear_responses(&t0, &b0, p, spec.noise_sigma, spec.seed)?;
    Ok(LinearPopulation { t0, b0, responses })
}

#[derive(Debug, Clone)]
pub struct AxisPopulation {
    /// Ground truth: `sta` equals the STA of the noise-free responses.
    pub models: Vec<AxisNeuronModel>,
    pub responses: ResponseMatrix,
    /// Coefficient re-draws needed per neuron.
    pub redraws: Vec<usize>,
}

pub const AXIS_MAX_REDRAWS: usize = 10;
const NEWTON_ITERS: usize = 12;
const NEWTON_BUDGET: usize = 500;

/// Second-moment eigenpairs of the stimuli, largest first.
struct Moments {
    values: Vec<f64>,
    vectors: DMatrix<f64>,
}

impl Moments {
    fn new(p: &DMatrix<f64>) -> Self {
        let s2 = p * p.transpose() / p.ncols() as f64;
        let eig = SymmetricEigen::new(s2);
        let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
        Self {
            values: order.iter().map(|&i| eig.eigenvalues[i]).collect(),
            vectors: DMatrix::from_fn(p.nrows(), order.len(), |r, c| eig.eigenvectors[(r, order[c])]),
        }
    }
}

/// Newton solve of the self-consistency equations for the axis `w` and the
/// intercept `a`, with `b, c, d` fixed:
///
///   sum_i f(s_i) (P_i - w) = 0,   s_i = <P_i, w>,   <w, v> = target
///
/// where `f(s) = a + b s + c s^2 + d s^3`. The first equation says `w` is
/// the STA of the responses `f(s_i)`. The last one pins the axis scale.
struct AxisSystem<'a> {
    p: &'a DMatrix<f64>,
    col_sum: DVector<f64>,
    v: DVector<f64>,
    target: f64,
}

impl AxisSystem<'_> {
    /// Returns the state after at most `NEWTON_ITERS` steps and whether the
    /// last step was below `1e-13` relative.
    fn solve(&self, mut x: DVector<f64>, b: f64, c: f64, d: f64, budget: &mut usize) -> (DVector<f64>, bool) {
        let (dim, n) = self.p.shape();
        let nf = n as f64;
        for _ in 0..NEWTON_ITERS {
            if *budget == 0 {
                return (x, false);
            }
            *budget -= 1;
            let w = x.rows(0, dim).into_owned();
            let a = x[dim];
            let s = self.p.tr_mul(&w);
            let r = s.map(|v| a + v * (b + v * (c + v * d)));
            let fp = s.map(|v| b + v * (2.0 * c + 3.0 * d * v));
            let rsum = r.sum();

            let mut g = DVector::zeros(dim + 1);
            g.rows_mut(0, dim)
                .copy_from(&((self.p * &r - &w * rsum) / nf));
            g[dim] = w.dot(&self.v) - self.target;

            let mut scaled = self.p.clone();
            for (j, mut col) in scaled.column_iter_mut().enumerate() {
                col *= fp[j];
            }
            let pf = self.p * &fp;
            let mut jac = DMatrix::zeros(dim + 1, dim + 1);
            let mut jw = scaled * self.p.transpose() - &w * pf.transpose();
            for k in 0..dim {
                jw[(k, k)] -= rsum;
            }
            jac.view_mut((0, 0), (dim, dim)).copy_from(&(jw / nf));
            jac.view_mut((0, dim), (dim, 1))
                .copy_from(&((&self.col_sum - &w * nf) / nf));
            jac.view_mut((dim, 0), (1, dim)).copy_from(&self.v.transpose());

            let Some(step) = jac.lu().solve(&(-g)) else {
                return (x, false);
            };
            if !step.iter().all(|v| v.is_finite()) {
                return (x, false);
            }
            x += &step;
            if step.norm() < 1e-13 * x.norm() {
                return (x, true);
            }
        }
        (x, false)
    }
}

/// Finds a self-consistent axis neuron for the given coefficients by
/// continuation from the purely linear neuron (where the axis is an
/// eigenvector of the stimulus second-moment matrix) to the full cubic.
fn self_consistent_neuron(
    sys: &AxisSystem,
    lambda: f64,
    b: f64,
    c: f64,
    d: f64,
) -> Option<(DVector<f64>, f64)> {
    let dim = sys.p.nrows();
    let mut x = DVector::zeros(dim + 1);
    x.rows_mut(0, dim).copy_from(&(&sys.v * sys.target));
    x[dim] = b * lambda;
    let mut budget = NEWTON_BUDGET;
    let (mut x, ok) = sys.solve(x, b, 0.0, 0.0, &mut budget);
    if !ok {
        return None;
    }
    let (mut t, mut h) = (0.0_f64, 0.1_f64);
    while t < 1.0 {
        let next = (t + h).min(1.0);
        let (trial, ok) = sys.solve(x.clone(), b, next * c, next * d, &mut budget);
        if ok {
            x = trial;
            t = next;
            h = (h * 1.5).min(0.2);
        } else {
            h *= 0.5;
            if h < 1e-4 || budget == 0 {
                return None;
            }
        }
    }
    let a = x[dim];
    Some((x.rows(0, dim).into_owned(), a))
}

/// Self-consistent axis population: every neuron's generating axis is the
/// STA of its own noise-free responses.
///
/// Each neuron's axis starts at an eigenvector `v_k` of the stimulus
/// second-moment matrix (eigenvectors assigned by a seeded permutation so
/// the population spans the face space), scaled so projections have unit
/// root-mean-square. The axis and intercept are then solved for by Newton
/// continuation while the quadratic and cubic terms are switched on. A
/// neuron whose continuation stalls is re-drawn with fresh coefficients and
/// a random eigenvector, up to [`AXIS_MAX_REDRAWS`] times.
pub fn gen_axis_population(spec: &SynthSpec, p: &DMatrix<f64>) -> Result<AxisPopulation> {
    let SynthKind::Axis(params) = &spec.kind else {
        return Err(Error::Config("gen_axis_population needs an axis spec".into()));
    };
    let (dim, n) = p.shape();
    if dim != spec.dim {
        return Err(Error::DimensionMismatch(format!(
            "spec dim {} but face vectors have {dim} rows",
            spec.dim
        )));
    }
    let moments = Moments::new(p);
    if moments.values.last().copied().unwrap_or(0.0) <= 1e-12 * moments.values[0].max(f64::MIN_POSITIVE) {
        return Err(Error::IllPosed("stimulus second-moment matrix is singular".into()));
    }
    let order = rng::permutation(dim, &mut rng::stream(spec.seed, STREAM_AXIS_ORDER));
    let col_sum = p.column_sum();
    let ids = neuron_ids(spec.n_neurons);

    let neurons: Vec<Result<(AxisNeuronModel, usize)>> = (0..spec.n_neurons)
        .into_par_iter()
        .map(|i| {
            for attempt in 0..=AXIS_MAX_REDRAWS {
                let mut g = rng::stream(spec.seed, STREAM_AXIS_NEURON + (i as u64) * 64 + attempt as u64);
                let k = if attempt == 0 {
                    order[i % dim]
                } else {
                    g.random_range(0..dim)
                };
                let sign = if g.random_bool(0.5) { 1.0 } else { -1.0 };
                let b = if g.random_bool(0.5) { 1.0 } else { -1.0 } * g.random_range(params.linear[0]..=params.linear[1]);
                let d = b.signum() * g.random_range(params.cubic[0]..=params.cubic[1]);
                let c = g.random_range(-1.0..=1.0) * params.quadratic_fraction * (3.0 * b * d).sqrt();
                let lambda = moments.values[k];
                let sys = AxisSystem {
                    p,
                    col_sum: col_sum.clone(),
                    v: moments.vectors.column(k) * sign,
                    target: 1.0 / lambda.sqrt(),
                };
                let Some((w, a)) = self_consistent_neuron(&sys, lambda, b, c, d) else {
                    log::debug!("neuron {i}: continuation failed on attempt {attempt}");
                    continue;
                };
                let coeffs = [a, b, c, d];
                let s: Vec<f64> = p.tr_mul(&w).iter().copied().collect();
                let r: Vec<f64> = s.iter().map(|v| crate::linalg::polyval(&coeffs, *v)).collect();
                let Ok(sta) = axismodel::compute_sta(p, &r) else {
                    continue;
                };
                if (&sta - &w).amax() > 1e-10 * w.amax() {
                    continue;
                }
                let range = s.iter().fold([f64::INFINITY, f64::NEG_INFINITY], |[lo, hi], v| [lo.min(*v), hi.max(*v)]);
                let model = AxisNeuronModel {
                    neuron_id: ids[i].clone(),
                    sta: w,
                    coeffs,
                    proj_range: range,
                    residual_ss: 0.0,
                };
                return Ok((model, attempt));
            }
            Err(Error::FixedPointFailure {
                neuron: i,
                redraws: AXIS_MAX_REDRAWS,
            })
        })
        .collect();

    let mut models = Vec::with_capacity(spec.n_neurons);
    let mut redraws = Vec::with_capacity(spec.n_neurons);
    for res in neurons {
        let (m, r) = res?;
        models.push(m);
        redraws.push(r);
    }
    let mut r = DMatrix::zeros(spec.n_neurons, n);
    for (i, m) in models.iter().enumerate() {
        let s = p.tr_mul(&m.sta);
        for j in 0..n {
            r[(i, j)] = m.rectify(s[j]);
        }
    }
    add_noise(&mut r, spec.noise_sigma, spec.seed);
    Ok(AxisPopulation {
        models,
        responses: ResponseMatrix::new(r, ids, stimulus_ids(n))?,
        redraws,
    })
}

#[derive(Debug, Clone)]
pub struct IdentityClusters {
    pub p: DMatrix<f64>,
    pub labels: Vec<usize>,
    pub stimulus_ids: Vec<String>,
    pub pairs: PairSet,
    pub centers: DMatrix<f64>,
    /// Smallest distance between two centers.
    pub min_center_separation: f64,
    /// The separation that was required.
    pub required_separation: f64,
}

pub const MAX_REJECTION_ATTEMPTS: usize = 10_000;

/// `identities` Gaussian clusters of `per_identity` samples each, ordered
/// identity by identity. Centers are rejection-sampled until every pair is
/// at least `separation * spread * sqrt(dim)` apart, `spread * sqrt(dim)`
/// being the root-mean-square distance of a sample from its center.
pub fn gen_identity_clusters(spec: &SynthSpec) -> Result<IdentityClusters> {
    let SynthKind::IdentityClusters(c) = &spec.kind else {
        return Err(Error::Config("gen_identity_clusters needs a cluster spec".into()));
    };
    spec.validate()?;
    let dim = spec.dim;
    let required = c.separation * c.spread * (dim as f64).sqrt();
    let mut g = rng::stream(spec.seed, STREAM_CENTERS);
    let mut centers: Vec<DVector<f64>> = Vec::with_capacity(c.identities);
    let mut attempts = 0;
    while centers.len() < c.identities {
        if attempts == MAX_REJECTION_ATTEMPTS {
            return Err(Error::RejectionFailure {
                attempts,
                reason: format!(
                    "could not place {} centers {required:.3} apart in {dim} dimensions",
                    c.identities
                ),
            });
        }
        attempts += 1;
        let cand = DVector::from_fn(dim, |_, _| c.center_scale * normal(&mut g));
        if centers.iter().all(|x| (x - &cand).norm() >= required) {
            centers.push(cand);
        }
    }
    let mut min_sep = f64::INFINITY;
    for i in 0..centers.len() {
        for j in i + 1..centers.len() {
            min_sep = min_sep.min((&centers[i] - &centers[j]).norm());
        }
    }

    let n = c.identities * c.per_identity;
    let mut g = rng::stream(spec.seed, STREAM_CLUSTER_SAMPLES);
    let mut p = DMatrix::zeros(dim, n);
    let mut labels = Vec::with_capacity(n);
    for (id, center) in centers.iter().enumerate() {
        for s in 0..c.per_identity {
            let j = id * c.per_identity + s;
            for k in 0..dim {
                p[(k, j)] = center[k] + c.spread * normal(&mut g);
            }
            labels.push(id);
        }
    }
    let ids = stimulus_ids(n);
    let pairs = if c.n_pairs > 0 {
        balanced_pairs(&ids, &labels, c.n_pairs, &mut rng::stream(spec.seed, STREAM_PAIRS))?
    } else {
        PairSet::default()
    };
    Ok(IdentityClusters {
        p,
        labels,
        stimulus_ids: ids,
        pairs,
        centers: DMatrix::from_columns(&centers),
        min_center_separation: min_sep,
        required_separation: required,
    })
}

/// Ground truth behind a generated dataset.
#[derive(Debug, Clone)]
pub enum GroundTruth {
    Linear { t0: DMatrix<f64>, b0: DVector<f64> },
    Axis { models: Vec<AxisNeuronModel>, redraws: Vec<usize> },
}

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub spec: SynthSpec,
    pub p: DMatrix<f64>,
    pub responses: ResponseMatrix,
    pub truth: GroundTruth,
    /// Identity per stimulus, for cluster datasets.
    pub labels: Option<Vec<usize>>,
    pub pairs: Option<PairSet>,
}

/// Face vectors and responses for `spec`. Cluster datasets put a linear
/// population on top of the clustered face vectors.
pub fn generate(spec: &SynthSpec) -> Result<SyntheticDataset> {
    spec.validate()?;
    match &spec.kind {
        SynthKind::Linear => {
            let p = gen_face_vectors(spec);
            let pop = gen_linear_population(spec, &p)?;
            Ok(SyntheticDataset {
                spec: spec.clone(),
                p,
                responses: pop.responses,
                truth: GroundTruth::Linear { t0: pop.t0, b0: pop.b0 },
                labels: None,
                pairs: None,
            })
        }
        SynthKind::Axis(_) => {
            let p = gen_face_vectors(spec);
            let pop = gen_axis_population(spec, &p)?;
            Ok(SyntheticDataset {
                spec: spec.clone(),
                p,
                responses: pop.responses,
                truth: GroundTruth::Axis {
                    models: pop.models,
                    redraws: pop.redraws,
                },
                labels: None,
                pairs: None,
            })
        }
        SynthKind::IdentityClusters(_) => {
            let cl = gen_identity_clusters(spec)?;
            let pop = gen_linear_population(spec, &cl.p)?;
            Ok(SyntheticDataset {
                spec: spec.clone(),
                p: cl.p,
                responses: pop.responses,
                truth: GroundTruth::Linear { t0: pop.t0, b0: pop.b0 },
                labels: Some(cl.labels),
                pairs: Some(cl.pairs),
            })
        }
    }
}

/// Landmark layout of the toy faces: an 8-point outline, two eye corners
/// on each side, nose tip, and two mouth corners. Coordinates are in a unit
/// face frame centered on the origin.
const TOY_LANDMARKS: [[f64; 2]; 13] = [
    [0.0, -1.0],
    [0.7, -0.7],
    [0.9, 0.0],
    [0.7, 0.75],
    [0.0, 1.05],
    [-0.7, 0.75],
    [-0.9, 0.0],
    [-0.7, -0.7],
    [-0.55, -0.25],
    [-0.2, -0.25],
    [0.2, -0.25],
    [0.55, -0.25],
    [0.0, 0.2],
];

#[derive(Debug, Clone)]
pub struct ToyFace {
    pub landmarks: LandmarkSet,
    pub image: GrayImage,
}

/// Toy face images with landmarks: a deformed template under a random
/// similarity transform, shaded by a smooth texture with random weights.
pub fn toy_faces(seed: u64, n: usize, size: usize) -> Vec<ToyFace> {
    let mut g = rng::stream(seed, 0);
    let l = TOY_LANDMARKS.len();
    let modes: Vec<Vec<[f64; 2]>> = (0..3)
        .map(|m| {
            (0..l)
                .map(|k| {
                    let t = (k * (m + 2)) as f64 * 0.9;
                    [0.08 * t.sin(), 0.08 * (t * 1.3 + m as f64).cos()]
                })
                .collect()
        })
        .collect();
    let half = size as f64 / 2.0;
    (0..n)
        .map(|_| {
            let coeffs: Vec<f64> = (0..3).map(|_| normal(&mut g)).collect();
            let scale = half * g.random_range(0.55..0.7);
            let angle: f64 = g.random_range(-0.2..0.2);
            let shift = [g.random_range(-2.0..2.0), g.random_range(-2.0..2.0)];
            let tex: [f64; 4] = [
                g.random_range(0.3..0.5),
                g.random_range(-0.15..0.15),
                g.random_range(-0.15..0.15),
                g.random_range(0.05..0.2),
            ];
            let (cs, sn) = (angle.cos(), angle.sin());
            let to_image = |u: f64, v: f64| {
                (
                    half + shift[0] + scale * (cs * u - sn * v),
                    half + shift[1] + scale * (sn * u + cs * v),
                )
            };
            let points: Vec<[f64; 2]> = TOY_LANDMARKS
                .iter()
                .enumerate()
                .map(|(k, base)| {
                    let mut u = base[0];
                    let mut v = base[1];
                    for (m, c) in coeffs.iter().enumerate() {
                        u += c * modes[m][k][0];
                        v += c * modes[m][k][1];
                    }
                    let (x, y) = to_image(u, v);
                    [x, y]
                })
                .collect();
            let image = GrayImage::from_fn(size, size, |x, y| {
                let dx = x as f64 - half - shift[0];
                let dy = y as f64 - half - shift[1];
                let u = (cs * dx + sn * dy) / scale;
                let v = (-sn * dx + cs * dy) / scale;
                let eyes = (-((u.abs() - 0.37).powi(2) + (v + 0.25).powi(2)) * 30.0).exp();
                tex[0] + tex[1] * u + tex[2] * v + tex[3] * (3.0 * u).cos() * (2.0 * v).sin() - 0.2 * eyes
            });
            ToyFace {
                landmarks: LandmarkSet::new(points).expect("finite toy landmarks"),
                image,
            }
        })
        .collect()
}
