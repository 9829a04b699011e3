//! Agreement statistics between observed and predicted responses.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoding::ResponseMatrix;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Statistic {
    Pearson,
    Spearman,
}

fn is_constant(x: &[f64]) -> bool {
    x.iter().all(|v| *v == x[0])
}

fn check_pair(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch(format!(
            "correlation of vectors with lengths {} and {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::IllPosed("correlation needs at least 2 samples".into()));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("correlation input"));
    }
    if is_constant(x) || is_constant(y) {
        return Err(Error::ZeroVariance("correlation input"));
    }
    Ok(())
}

/// Centers `x` and scales it to unit Euclidean norm.
fn standardize(x: &[f64]) -> Vec<f64> {
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    let c: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
    c.into_iter().map(|v| v / norm).collect()
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>().clamp(-1.0, 1.0)
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    Ok(dot(&standardize(x), &standardize(y)))
}

/// 1-based ranks; tied values share the mean of their rank span.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    Ok(dot(
        &standardize(&average_ranks(x)),
        &standardize(&average_ranks(y)),
    ))
}

pub fn correlation(x: &[f64], y: &[f64], stat: Statistic) -> Result<f64> {
    match stat {
        Statistic::Pearson => pearson(x, y),
        Statistic::Spearman => spearman(x, y),
    }
}

/// Absolute statistics of `n_perm` random permutations of `y`, drawn from
/// ChaCha8 stream 0 of `seed`, together with the observed absolute
/// statistic.
pub fn permutation_null(x: &[f64], y: &[f64], stat: Statistic, n_perm: usize, seed: u64) -> Result<(f64, Vec<f64>)> {
    check_pair(x, y)?;
    if x.len() < 3 {
        return Err(Error::IllPosed("permutation test needs at least 3 samples".into()));
    }
    if n_perm == 0 {
        return Err(Error::Config("n_perm must be positive".into()));
    }
    let (xs, ys) = match stat {
        Statistic::Pearson => (standardize(x), standardize(y)),
        Statistic::Spearman => (
            standardize(&average_ranks(x)),
            standardize(&average_ranks(y)),
        ),
    };
    let observed = dot(&xs, &ys).abs();
    let mut gen = rng::stream(seed, 0);
    let mut permuted = vec![0.0; ys.len()];
    let null = (0..n_perm)
        .map(|_| {
            let perm = rng::permutation(ys.len(), &mut gen);
            for (slot, &k) in permuted.iter_mut().zip(&perm) {
                *slot = ys[k];
            }
            dot(&xs, &permuted).abs()
        })
        .collect();
    Ok((observed, null))
}

/// `(1 + #{null >= observed}) / (1 + null.len())`. A null value within
/// `1e-12` (relative) of the observed one counts as a tie.
pub fn pvalue_from_null(observed: f64, null: &[f64]) -> f64 {
    let bar = observed.abs() * (1.0 - 1e-12);
    let count = null.iter().filter(|v| **v >= bar).count();
    (1 + count) as f64 / (1 + null.len()) as f64
}

/// Two-sided permutation p-value of the absolute statistic; see
/// [`permutation_null`] and [`pvalue_from_null`].
pub fn permutation_pvalue(x: &[f64], y: &[f64], stat: Statistic, n_perm: usize, seed: u64) -> Result<f64> {
    let (observed, null) = permutation_null(x, y, stat, n_perm, seed)?;
    Ok(pvalue_from_null(observed, &null))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryOptions {
    /// Permutations per neuron; 0 disables significance testing.
    pub n_perm: usize,
    pub seed: u64,
    pub alpha: f64,
}

impl Default for SummaryOptions {
    fn default() -> Self {
        Self {
            n_perm: 999,
            seed: 0,
            alpha: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationSummary {
    pub neuron_ids: Vec<String>,
    /// `None` for excluded neurons.
    pub per_neuron_pearson: Vec<Option<f64>>,
    pub per_neuron_spearman: Vec<Option<f64>>,
    /// Pearson permutation p-values; `None` when excluded or not tested.
    pub per_neuron_pvalue: Vec<Option<f64>>,
    pub mean_pearson: f64,
    pub std_pearson: f64,
    pub mean_spearman: f64,
    pub std_spearman: f64,
    /// Fraction of included neurons with p-value below `alpha`.
    pub fraction_significant: Option<f64>,
    pub alpha: f64,
    pub n_perm: usize,
    pub excluded_neurons: Vec<(String, String)>,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let std = if v.len() > 1 {
        (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

enum RowResult {
    Included { pearson: f64, spearman: f64, pvalue: Option<f64> },
    Excluded(String),
}

/// Row-wise correlations between observed and predicted responses. Neuron
/// `i` uses permutation seed `seed + i`, so the result does not depend on
/// the thread count.
pub fn summarize_layer(
    observed: &ResponseMatrix,
    predicted: &ResponseMatrix,
    opts: &SummaryOptions,
) -> Result<CorrelationSummary> {
    if observed.values().shape() != predicted.values().shape() {
        return Err(Error::DimensionMismatch(format!(
            "observed {:?} vs predicted {:?} responses",
            observed.values().shape(),
            predicted.values().shape()
        )));
    }
    if observed.stimulus_ids() != predicted.stimulus_ids() {
        return Err(Error::DimensionMismatch(
            "observed and predicted responses list different stimuli".into(),
        ));
    }
    let m = observed.n_neurons();
    let rows: Vec<Result<RowResult>> = (0..m)
        .into_par_iter()
        .map(|i| {
            let x: Vec<f64> = observed.values().row(i).iter().copied().collect();
            let y: Vec<f64> = predicted.values().row(i).iter().copied().collect();
            if is_constant(&x) {
                return Ok(RowResult::Excluded("constant observed responses".into()));
            }
            if is_constant(&y) {
                return Ok(RowResult::Excluded("constant predicted responses".into()));
            }
            let pearson = pearson(&x, &y)?;
            let spearman = spearman(&x, &y)?;
            let pvalue = if opts.n_perm > 0 && x.len() >= 3 {
                Some(permutation_pvalue(
                    &x,
                    &y,
                    Statistic::Pearson,
                    opts.n_perm,
                    opts.seed.wrapping_add(i as u64),
                )?)
            } else {
                None
            };
            Ok(RowResult::Included {
                pearson,
                spearman,
                pvalue,
            })
        })
        .collect();

    let mut per_p = Vec::with_capacity(m);
    let mut per_s = Vec::with_capacity(m);
    let mut per_pv = Vec::with_capacity(m);
    let mut excluded = Vec::new();
    for (i, row) in rows.into_iter().enumerate() {
        match row? {
            RowResult::Included {
                pearson,
                spearman,
                pvalue,
            } => {
                per_p.push(Some(pearson));
                per_s.push(Some(spearman));
                per_pv.push(pvalue);
            }
            RowResult::Excluded(reason) => {
                per_p.push(None);
                per_s.push(None);
                per_pv.push(None);
                excluded.push((observed.neuron_ids()[i].clone(), reason));
            }
        }
    }
    let ps: Vec<f64> = per_p.iter().flatten().copied().collect();
    if ps.is_empty() {
        return Err(Error::ZeroVariance("every neuron of the layer"));
    }
    let ss: Vec<f64> = per_s.iter().flatten().copied().collect();
    let pvs: Vec<f64> = per_pv.iter().flatten().copied().collect();
    let (mean_pearson, std_pearson) = mean_std(&ps);
    let (mean_spearman, std_spearman) = mean_std(&ss);
    let fraction_significant = (!pvs.is_empty())
        .then(|| pvs.iter().filter(|p| **p < opts.alpha).count() as f64 / pvs.len() as f64);
    Ok(CorrelationSummary {
        neuron_ids: observed.neuron_ids().to_vec(),
        per_neuron_pearson: per_p,
        per_neuron_spearman: per_s,
        per_neuron_pvalue: per_pv,
        mean_pearson,
        std_pearson,
        mean_spearman,
        std_spearman,
        fraction_significant,
        alpha: opts.alpha,
        n_perm: opts.n_perm,
        excluded_neurons: excluded,
    })
}

impl CorrelationSummary {
    pub fn n_included(&self) -> usize {
        self.per_neuron_pearson.iter().flatten().count()
    }

    /// Per-neuron table with columns
    /// `neuron_id,pearson,spearman,pvalue,excluded_reason`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| Error::Config(format!("csv encoding failed: {e}"));
        w.write_record(["neuron_id", "pearson", "spearman", "pvalue", "excluded_reason"])
            .map_err(io)?;
        let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for (i, id) in self.neuron_ids.iter().enumerate() {
            let reason = self
                .excluded_neurons
                .iter()
                .find(|(n, _)| n == id)
                .map(|(_, r)| r.as_str())
                .unwrap_or("");
            w.write_record([
                id.as_str(),
                &fmt(self.per_neuron_pearson[i]),
                &fmt(self.per_neuron_spearman[i]),
                &fmt(self.per_neuron_pvalue[i]),
                reason,
            ])
            .map_err(io)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Config(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}
