//! Runs one experiment end to end and writes its report.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::{ClassifierConfig, ExperimentConfig, ModelKind, SplitSpec, VerificationConfig};
use super::dataset::Dataset;
use super::io::write_file;
use super::partition::{self, ChosenValues, RandomScope};
use super::reconstruct::{self, ReconstructionSummary};
use crate::axismodel::{self, AxisNeuronModel};
use crate::classify::{self, LossKind};
use crate::encoding::{self, LinearFitOptions, ResponseMatrix};
use crate::error::{Error, Result, StageExt};
use crate::metrics::{self, CorrelationSummary, SummaryOptions};
use crate::rng;
use crate::verify::{self, PairSet};

pub const REPORT_VERSION: u32 = 1;
pub const REPORT_FILE: &str = "report.json";

const TAG_SPLIT: u64 = 1;
const TAG_CORRELATION: u64 = 2;
const TAG_PAIRS: u64 = 3;
const TAG_PAIR_FOLDS: u64 = 4;

fn derive_seed(seed: u64, tag: u64) -> u64 {
    rng::stream(seed, tag).random()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub prng: String,
    pub experiment: u64,
    pub split: u64,
    pub correlation: u64,
    pub pairs: u64,
    pub pair_folds: u64,
}

impl SeedRecord {
    pub fn new(seed: u64) -> Self {
        Self {
            prng: rng::PRNG_NAME.into(),
            experiment: seed,
            split: derive_seed(seed, TAG_SPLIT),
            correlation: derive_seed(seed, TAG_CORRELATION),
            pairs: derive_seed(seed, TAG_PAIRS),
            pair_folds: derive_seed(seed, TAG_PAIR_FOLDS),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeSummary {
    pub rank: usize,
    pub rank_deficient: bool,
    pub max_abs_error: f64,
    pub rms_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub loss: LossKind,
    /// `observed` or `predicted` representations.
    pub representation: String,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub iterations: usize,
    pub converged: bool,
    pub final_learning_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationResult {
    pub representation: String,
    /// Test accuracy per fold at the threshold learned on the other folds.
    pub fold_accuracy: Vec<f64>,
    pub fold_threshold: Vec<f64>,
    pub mean_accuracy: f64,
    /// Over all pairs; threshold-free.
    pub eer: f64,
    pub one_minus_eer: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationSection {
    pub n_pairs: usize,
    pub n_same: usize,
    pub folds: usize,
    pub results: Vec<VerificationResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitReport {
    pub name: String,
    pub n_train: usize,
    pub n_test: usize,
    pub test_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub chosen_values: Vec<ChosenValues>,
    /// Neurons the axis fit had to drop.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub unfitted_neurons: Vec<(String, String)>,
    pub correlation: CorrelationSummary,
    pub decode: DecodeSummary,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub classifier: Vec<ProbeResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verification: Option<VerificationSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reconstruction: Option<ReconstructionSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub report_version: u32,
    /// The only field that differs between identical runs.
    pub generated_at: String,
    pub tool_version: String,
    pub config: ExperimentConfig,
    pub seeds: SeedRecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub random_scope: Option<RandomScope>,
    pub n_stimuli: usize,
    pub n_neurons: usize,
    pub dim: usize,
    pub splits: Vec<SplitReport>,
    /// Means over splits.
    pub mean_pearson: f64,
    pub mean_spearman: f64,
}

impl ExperimentReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| {
            Error::malformed(
                path.display(),
                format!("line {}, column {}", e.line(), e.column()),
                e.to_string(),
            )
        })
    }
}

struct SplitPlan {
    name: String,
    train: Vec<usize>,
    test: Vec<usize>,
    chosen: Vec<ChosenValues>,
}

fn plan_splits(cfg: &ExperimentConfig, data: &Dataset, seeds: &SeedRecord) -> Result<Vec<SplitPlan>> {
    let n = data.stimulus_ids().len();
    let mut plans = match &cfg.split {
        SplitSpec::Holdout { test_fraction } => {
            if n < 2 {
                return Err(Error::TooFewItems { items: n, folds: 2 });
            }
            let order = rng::permutation(n, &mut rng::stream(seeds.split, 0));
            let n_test = ((n as f64 * test_fraction).round() as usize).clamp(1, n - 1);
            vec![SplitPlan {
                name: "holdout".into(),
                test: order[..n_test].to_vec(),
                train: order[n_test..].to_vec(),
                chosen: Vec::new(),
            }]
        }
        SplitSpec::Partition { .. } => {
            let scheme = cfg.partition_scheme()?.expect("partition split");
            let manifest = data
                .manifest
                .as_ref()
                .ok_or_else(|| Error::Config("a partition split needs a dataset manifest".into()))?;
            let part = partition::apply_partition(manifest, &scheme)?;
            let index = data.responses.stimulus_index();
            // Manifest entries without data are not part of the experiment.
            let pick = |ids: &[String]| -> Vec<usize> { ids.iter().filter_map(|id| index.get(id.as_str()).copied()).collect() };
            let (train, test) = (pick(&part.train_ids), pick(&part.test_ids));
            for (side, v) in [("train", &train), ("test", &test)] {
                if v.is_empty() {
                    return Err(Error::EmptySplit {
                        scheme: scheme.name.clone(),
                        side,
                    });
                }
            }
            vec![SplitPlan {
                name: scheme.name,
                train,
                test,
                chosen: part.chosen,
            }]
        }
        SplitSpec::Kfold { k } => partition::kfold(n, *k, seeds.split)?
            .into_iter()
            .enumerate()
            .map(|(i, f)| SplitPlan {
                name: format!("fold{i:02}"),
                train: f.train,
                test: f.test,
                chosen: Vec::new(),
            })
            .collect(),
    };
    for p in &mut plans {
        p.train.sort_unstable();
        p.test.sort_unstable();
    }
    Ok(plans)
}

enum Fitted {
    Linear(encoding::LinearEncodingModel),
    Axis(Vec<AxisNeuronModel>),
}

impl Fitted {
    fn predict(&self, p: &DMatrix<f64>, ids: &[String]) -> Result<ResponseMatrix> {
        match self {
            Fitted::Linear(m) => encoding::predict_responses(m, p, Some(ids)),
            Fitted::Axis(models) => axismodel::predict_axis(models, p, Some(ids)),
        }
    }

    fn decode(&self, observed: &ResponseMatrix) -> Result<encoding::DecodedVectors> {
        match self {
            Fitted::Linear(m) => encoding::decode_vectors(m, observed),
            Fitted::Axis(models) => axismodel::decode_axis(models, observed),
        }
    }
}

/// Rows of `r` for the given neuron ids, in that order.
pub fn select_neurons(r: &ResponseMatrix, ids: &[String]) -> Result<ResponseMatrix> {
    let rows = ids
        .iter()
        .map(|id| {
            r.neuron_ids()
                .iter()
                .position(|x| x == id)
                .ok_or_else(|| Error::DimensionMismatch(format!("neuron `{id}` not in response matrix")))
        })
        .collect::<Result<Vec<_>>>()?;
    ResponseMatrix::new(r.values().select_rows(&rows), ids.to_vec(), r.stimulus_ids().to_vec())
}

fn decode_summary(decoded: &encoding::DecodedVectors, truth: &DMatrix<f64>) -> DecodeSummary {
    let diff = &decoded.vectors - truth;
    DecodeSummary {
        rank: decoded.rank,
        rank_deficient: decoded.rank_deficient,
        max_abs_error: diff.amax(),
        rms_error: (diff.norm_squared() / diff.len() as f64).sqrt(),
    }
}

/// Z-scores features with training statistics and appends a constant row
/// so the probes get a bias term.
fn probe_features(train: &DMatrix<f64>, test: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = train.ncols() as f64;
    let mean: DVector<f64> = train.column_mean();
    let std: DVector<f64> = DVector::from_iterator(
        train.nrows(),
        train.row_iter().zip(mean.iter()).map(|(row, m)| {
            let v = row.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
            if v > 0.0 {
                v.sqrt()
            } else {
                1.0
            }
        }),
    );
    let scale = |x: &DMatrix<f64>| {
        let mut out = DMatrix::from_element(x.nrows() + 1, x.ncols(), 1.0);
        for j in 0..x.ncols() {
            for i in 0..x.nrows() {
                out[(i, j)] = (x[(i, j)] - mean[i]) / std[i];
            }
        }
        out
    };
    (scale(train), scale(test))
}

struct ProbeInput<'a> {
    name: &'static str,
    train: &'a ResponseMatrix,
    test: &'a ResponseMatrix,
}

fn run_probes(
    cfg: &ClassifierConfig,
    inputs: &[ProbeInput],
    y_train: &[usize],
    y_test: &[usize],
    k: usize,
    out_dir: &Path,
    split: &str,
) -> Result<Vec<ProbeResult>> {
    let mut results = Vec::new();
    for input in inputs {
        let (x_train, x_test) = probe_features(input.train.values(), input.test.values());
        for &loss in &cfg.losses {
            let clf = classify::train(&x_train, y_train, k, loss, &cfg.train)?;
            let loss_name = match loss {
                LossKind::Softmax => "softmax",
                LossKind::Hinge => "hinge",
            };
            write_file(
                &out_dir.join(format!("training_{split}_{loss_name}_{}.csv", input.name)),
                clf.training_curve_csv().as_bytes(),
            )?;
            results.push(ProbeResult {
                loss,
                representation: input.name.into(),
                train_accuracy: clf.accuracy(&x_train, y_train)?,
                test_accuracy: clf.accuracy(&x_test, y_test)?,
                iterations: clf.iterations,
                converged: clf.converged,
                final_learning_rate: clf.final_learning_rate,
            });
        }
    }
    Ok(results)
}

/// Pairs restricted to `test_ids`: from the configured file, from the data,
/// or drawn fresh from the test stimuli.
fn verification_pairs(
    cfg: &VerificationConfig,
    data: &Dataset,
    test_ids: &[String],
    test_labels: Option<&[usize]>,
    seed: u64,
) -> Result<PairSet> {
    let in_test: HashSet<&str> = test_ids.iter().map(String::as_str).collect();
    let keep = |set: PairSet| {
        PairSet::new(
            set.pairs
                .into_iter()
                .filter(|p| in_test.contains(p.a.as_str()) && in_test.contains(p.b.as_str()))
                .collect(),
        )
    };
    match (&cfg.pairs, test_labels) {
        (Some(path), _) => Ok(keep(PairSet::load_csv(path)?)),
        (None, Some(labels)) => verify::balanced_pairs(test_ids, labels, cfg.n_pairs, &mut rng::stream(seed, 0)),
        (None, None) => match &data.pairs {
            Some(p) => Ok(keep(p.clone())),
            None => Err(Error::Config("verification needs a pair file or identity labels".into())),
        },
    }
}

/// Per representation: k-fold thresholds over the pairs, plus the EER over
/// all of them. ROC data goes to `roc_{split}_{name}.csv`.
pub fn run_verification(
    cfg: &VerificationConfig,
    pairs: &PairSet,
    reps: &[(&'static str, &ResponseMatrix)],
    fold_seed: u64,
    out_dir: &Path,
    split: &str,
) -> Result<VerificationSection> {
    let same = pairs.labels();
    let folds = partition::kfold(pairs.len(), cfg.folds, fold_seed)?;
    let mut results = Vec::new();
    for (name, r) in reps {
        let d = verify::pair_distances(r, pairs)?;
        let mut fold_accuracy = Vec::new();
        let mut fold_threshold = Vec::new();
        for f in &folds {
            let pick = |idx: &[usize]| -> (Vec<f64>, Vec<bool>) { idx.iter().map(|&i| (d[i], same[i])).unzip() };
            let (d_train, s_train) = pick(&f.train);
            let (d_test, s_test) = pick(&f.test);
            let (tau, _) = verify::learn_threshold(&d_train, &s_train)?;
            fold_threshold.push(tau);
            fold_accuracy.push(verify::accuracy_at(&d_test, &s_test, tau));
        }
        let (roc, eer) = verify::roc_and_eer(&d, &same)?;
        write_file(&out_dir.join(format!("roc_{split}_{name}.csv")), verify::roc_csv(&roc).as_bytes())?;
        results.push(VerificationResult {
            representation: name.to_string(),
            mean_accuracy: fold_accuracy.iter().sum::<f64>() / fold_accuracy.len() as f64,
            fold_accuracy,
            fold_threshold,
            eer,
            one_minus_eer: 1.0 - eer,
        });
    }
    Ok(VerificationSection {
        n_pairs: pairs.len(),
        n_same: pairs.n_same(),
        folds: cfg.folds,
        results,
    })
}

fn run_split(
    cfg: &ExperimentConfig,
    data: &Dataset,
    plan: &SplitPlan,
    index: usize,
    seeds: &SeedRecord,
    out_dir: &Path,
) -> Result<SplitReport> {
    let ids = data.stimulus_ids();
    let train_ids: Vec<String> = plan.train.iter().map(|&i| ids[i].clone()).collect();
    let test_ids: Vec<String> = plan.test.iter().map(|&i| ids[i].clone()).collect();
    partition::assert_disjoint(&train_ids, &test_ids)?;

    let p_train = data.p.select_columns(&plan.train);
    let p_test = data.p.select_columns(&plan.test);
    let r_train = data.responses.select_columns(&plan.train)?;
    let r_test = data.responses.select_columns(&plan.test)?;

    let (fitted, unfitted) = match cfg.model {
        ModelKind::Linear => {
            let opts = LinearFitOptions {
                ridge_lambda: cfg.ridge_lambda,
                standardize_inputs: cfg.standardize,
            };
            let m = encoding::fit_linear(&p_train, &r_train, &opts).stage("fit")?;
            (Fitted::Linear(m), Vec::new())
        }
        ModelKind::Axis => {
            let fit = axismodel::fit_axis_population(&p_train, &r_train).stage("fit")?;
            if fit.models.is_empty() {
                return Err(Error::IllPosed("no neuron admits an axis fit".into())).stage("fit");
            }
            (Fitted::Axis(fit.models), fit.excluded)
        }
    };
    let neuron_ids: Vec<String> = match &fitted {
        Fitted::Linear(m) => m.neuron_ids.clone(),
        Fitted::Axis(models) => models.iter().map(|m| m.neuron_id.clone()).collect(),
    };
    let obs_train = select_neurons(&r_train, &neuron_ids)?;
    let obs_test = select_neurons(&r_test, &neuron_ids)?;
    let pred_test = fitted.predict(&p_test, &test_ids).stage("predict")?;

    let corr_opts = SummaryOptions {
        n_perm: cfg.correlation.n_perm,
        seed: seeds.correlation.wrapping_add((index as u64) << 32),
        alpha: cfg.correlation.alpha,
    };
    let correlation = metrics::summarize_layer(&obs_test, &pred_test, &corr_opts).stage("correlation")?;
    write_file(
        &out_dir.join(format!("correlation_{}.csv", plan.name)),
        correlation.to_csv()?.as_bytes(),
    )?;

    let decoded = fitted.decode(&obs_test).stage("decode")?;
    let decode = decode_summary(&decoded, &p_test);

    let labels_of = |idx: &[usize]| data.labels.as_ref().map(|l| idx.iter().map(|&i| l[i]).collect::<Vec<_>>());
    let (y_train, y_test) = (labels_of(&plan.train), labels_of(&plan.test));

    let mut classifier = Vec::new();
    if let Some(c) = &cfg.classifier {
        let (y_train, y_test) = y_train
            .as_ref()
            .zip(y_test.as_ref())
            .ok_or_else(|| Error::Config("classifier probes need identity labels".into()))?;
        let k = data.labels.as_ref().map_or(0, |l| l.iter().max().map_or(0, |m| m + 1));
        let pred_train = fitted.predict(&p_train, &train_ids).stage("predict")?;
        let inputs = [
            ProbeInput {
                name: "observed",
                train: &obs_train,
                test: &obs_test,
            },
            ProbeInput {
                name: "predicted",
                train: &pred_train,
                test: &pred_test,
            },
        ];
        classifier = run_probes(c, &inputs, y_train, y_test, k, out_dir, &plan.name).stage("classifier")?;
    }

    let verification = match &cfg.verification {
        Some(v) => {
            let pair_seed = seeds.pairs.wrapping_add(index as u64);
            let pairs = verification_pairs(v, data, &test_ids, y_test.as_deref(), pair_seed).stage("verification")?;
            let reps = [("observed", &obs_test), ("predicted", &pred_test)];
            Some(run_verification(v, &pairs, &reps, seeds.pair_folds, out_dir, &plan.name).stage("verification")?)
        }
        None => None,
    };

    let reconstruction = match &cfg.reconstruct {
        Some(rc) => Some(
            reconstruct::write_reconstructions(rc, &test_ids, &p_test, &decoded.vectors, &out_dir.join("reconstruct").join(&plan.name))
                .stage("reconstruct")?,
        ),
        None => None,
    };

    Ok(SplitReport {
        name: plan.name.clone(),
        n_train: plan.train.len(),
        n_test: plan.test.len(),
        test_ids,
        chosen_values: plan.chosen.clone(),
        unfitted_neurons: unfitted,
        correlation,
        decode,
        classifier,
        verification,
        reconstruction,
    })
}

/// Report JSON with `generated_at` removed, for determinism comparisons.
pub fn strip_timestamp(report_json: &str) -> Result<String> {
    let mut v: serde_json::Value = serde_json::from_str(report_json)?;
    if let Some(obj) = v.as_object_mut() {
        obj.remove("generated_at");
    }
    Ok(serde_json::to_string_pretty(&v)?)
}

/// Validates, loads the data, runs every split and writes `report.json`
/// plus CSV plot data into the output directory.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let seeds = SeedRecord::new(cfg.seed);
    let data = Dataset::load(&cfg.data).stage("load")?;
    let plans = plan_splits(cfg, &data, &seeds).stage("split")?;
    let out_dir = &cfg.output_dir;
    log::info!("experiment `{}`: {} split(s), {} stimuli", cfg.name, plans.len(), data.stimulus_ids().len());

    let splits = plans
        .iter()
        .enumerate()
        .map(|(i, plan)| run_split(cfg, &data, plan, i, &seeds, out_dir))
        .collect::<Result<Vec<_>>>()?;
    let n = splits.len() as f64;
    let report = ExperimentReport {
        report_version: REPORT_VERSION,
        generated_at: chrono::Utc::now().to_rfc3339(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        config: cfg.clone(),
        seeds,
        random_scope: cfg.partition_scheme()?.map(|s| s.random_scope),
        n_stimuli: data.stimulus_ids().len(),
        n_neurons: data.responses.n_neurons(),
        dim: data.p.nrows(),
        mean_pearson: splits.iter().map(|s| s.correlation.mean_pearson).sum::<f64>() / n,
        mean_spearman: splits.iter().map(|s| s.correlation.mean_spearman).sum::<f64>() / n,
        splits,
    };
    write_file(&out_dir.join(REPORT_FILE), report.to_json()?.as_bytes())?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub report: PathBuf,
    pub name: String,
    pub model: ModelKind,
    pub mean_pearson: f64,
    pub mean_spearman: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub rows: Vec<AggregateRow>,
    pub mean_pearson: f64,
    pub mean_spearman: f64,
}

impl Aggregate {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("report,name,model,mean_pearson,mean_spearman\n");
        for r in &self.rows {
            let model = match r.model {
                ModelKind::Linear => "linear",
                ModelKind::Axis => "axis",
            };
            out.push_str(&format!(
                "{},{},{model},{},{}\n",
                r.report.display(),
                r.name,
                r.mean_pearson,
                r.mean_spearman
            ));
        }
        out
    }
}

/// Averages the correlation means of several reports, e.g. one per
/// partition scheme.
pub fn aggregate(reports: &[PathBuf]) -> Result<Aggregate> {
    if reports.is_empty() {
        return Err(Error::Config("aggregate needs at least one report".into()));
    }
    let rows = reports
        .iter()
        .map(|path| {
            let r = ExperimentReport::load(path)?;
            Ok(AggregateRow {
                report: path.clone(),
                name: r.config.name,
                model: r.config.model,
                mean_pearson: r.mean_pearson,
                mean_spearman: r.mean_spearman,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let n = rows.len() as f64;
    Ok(Aggregate {
        mean_pearson: rows.iter().map(|r| r.mean_pearson).sum::<f64>() / n,
        mean_spearman: rows.iter().map(|r| r.mean_spearman).sum::<f64>() / n,
        rows,
    })
}
