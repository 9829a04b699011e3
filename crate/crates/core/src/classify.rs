//! Regularized linear classifiers trained by full-batch gradient descent.
//! Class labels are `0..k`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Softmax,
    Hinge,
}

fn check_inputs(theta: &DMatrix<f64>, x: &DMatrix<f64>, y: &[usize]) -> Result<()> {
    if theta.nrows() != x.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "theta has {} rows, samples have dimension {}",
            theta.nrows(),
            x.nrows()
        )));
    }
    if y.len() != x.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "{} samples, {} labels",
            x.ncols(),
            y.len()
        )));
    }
    if x.ncols() == 0 {
        return Err(Error::DimensionMismatch("no samples".into()));
    }
    let k = theta.ncols();
    if let Some(&label) = y.iter().find(|&&l| l >= k) {
        return Err(Error::LabelOutOfRange { label, classes: k });
    }
    Ok(())
}

/// Mean of `v`, computed as offsets from the first entry so that a vector
/// of identical values averages to exactly that value.
fn stable_mean(v: &[f64]) -> f64 {
    let base = v[0];
    base + v.iter().map(|x| x - base).sum::<f64>() / v.len() as f64
}

/// Mean softmax cross-entropy plus `(lambda / 2) ||theta||^2`, and its
/// gradient.
pub fn softmax_loss(theta: &DMatrix<f64>, x: &DMatrix<f64>, y: &[usize], lambda: f64) -> Result<(f64, DMatrix<f64>)> {
    check_inputs(theta, x, y)?;
    let n = x.ncols();
    let scores = theta.tr_mul(x);
    let mut coef = DMatrix::zeros(theta.ncols(), n);
    let mut losses = Vec::with_capacity(n);
    for i in 0..n {
        let col = scores.column(i);
        let max = col.max();
        let sum: f64 = col.iter().map(|s| (s - max).exp()).sum();
        let lse = max + sum.ln();
        losses.push(lse - col[y[i]]);
        for j in 0..theta.ncols() {
            coef[(j, i)] = (col[j] - lse).exp();
        }
        coef[(y[i], i)] -= 1.0;
    }
    let grad = x * coef.transpose() / n as f64 + theta * lambda;
    let loss = stable_mean(&losses) + 0.5 * lambda * theta.norm_squared();
    Ok((loss, grad))
}

/// Mean Crammer-Singer hinge loss plus `lambda ||theta||^2`, and a
/// subgradient. The competing class is the lowest-indexed maximizer; a
/// sample exactly on the hinge contributes zero subgradient.
pub fn hinge_loss(theta: &DMatrix<f64>, x: &DMatrix<f64>, y: &[usize], lambda: f64) -> Result<(f64, DMatrix<f64>)> {
    check_inputs(theta, x, y)?;
    let n = x.ncols();
    let k = theta.ncols();
    if k < 2 {
        return Err(Error::IllPosed("hinge loss needs at least 2 classes".into()));
    }
    let scores = theta.tr_mul(x);
    let mut coef = DMatrix::zeros(k, n);
    let mut losses = Vec::with_capacity(n);
    for i in 0..n {
        let col = scores.column(i);
        let rival = (0..k)
            .filter(|&j| j != y[i])
            .fold(None, |best: Option<usize>, j| match best {
                Some(b) if col[b] >= col[j] => Some(b),
                _ => Some(j),
            })
            .expect("k >= 2");
        let margin = 1.0 - col[y[i]] + col[rival];
        if margin > 0.0 {
            losses.push(margin);
            coef[(y[i], i)] -= 1.0;
            coef[(rival, i)] += 1.0;
        } else {
            losses.push(0.0);
        }
    }
    let grad = x * coef.transpose() / n as f64 + theta * (2.0 * lambda);
    let loss = stable_mean(&losses) + lambda * theta.norm_squared();
    Ok((loss, grad))
}

pub fn loss(kind: LossKind, theta: &DMatrix<f64>, x: &DMatrix<f64>, y: &[usize], lambda: f64) -> Result<(f64, DMatrix<f64>)> {
    match kind {
        LossKind::Softmax => softmax_loss(theta, x, y, lambda),
        LossKind::Hinge => hinge_loss(theta, x, y, lambda),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainOptions {
    pub learning_rate: f64,
    pub lambda: f64,
    pub max_iters: usize,
    /// Stop when the loss changes by less than this fraction over a
    /// 10-iteration window.
    pub tol: f64,
    pub log_interval: usize,
    /// Halvings of the learning rate allowed before giving up.
    pub max_halvings: usize,
    /// Reserved; training is deterministic from a zero start.
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            lambda: 1e-4,
            max_iters: 5000,
            tol: 1e-8,
            log_interval: 10,
            max_halvings: 10,
            seed: 0,
        }
    }
}

const WINDOW: usize = 10;
const DIVERGENCE_RUN: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearClassifier {
    /// `p x k`, one column per class.
    pub theta: DMatrix<f64>,
    pub loss_kind: LossKind,
    pub lambda: f64,
    pub training_log: Vec<(usize, f64)>,
    pub iterations: usize,
    pub converged: bool,
    pub final_learning_rate: f64,
}

/// Full-batch gradient descent from `theta = 0`. Twenty consecutive loss
/// increases (or a non-finite loss) halve the learning rate and restart from
/// the best iterate; when the halvings run out the run fails with
/// `Divergence`.
pub fn train(x: &DMatrix<f64>, y: &[usize], k: usize, kind: LossKind, opts: &TrainOptions) -> Result<LinearClassifier> {
    if k < 2 {
        return Err(Error::Config(format!("need at least 2 classes, got {k}")));
    }
    if !(opts.learning_rate > 0.0) || !(opts.lambda >= 0.0) || !(opts.tol >= 0.0) || opts.log_interval == 0 {
        return Err(Error::Config(format!("invalid training options {opts:?}")));
    }
    crate::linalg::ensure_finite(x, "classifier inputs")?;
    if x.ncols() < k {
        return Err(Error::IllPosed(format!(
            "{} samples for {k} classes",
            x.ncols()
        )));
    }
    let mut theta = DMatrix::zeros(x.nrows(), k);
    check_inputs(&theta, x, y)?;
    let (mut cur, mut grad) = loss(kind, &theta, x, y, opts.lambda)?;
    let mut best = (cur, theta.clone());
    let mut lr = opts.learning_rate;
    let mut halvings = 0;
    let mut rising = 0;
    let mut history = vec![cur];
    let mut log = vec![(0, cur)];
    let mut converged = false;
    let mut iter = 0;
    while iter < opts.max_iters {
        iter += 1;
        let next = &theta - &grad * lr;
        let (next_loss, next_grad) = loss(kind, &next, x, y, opts.lambda)?;
        rising = if next_loss > cur { rising + 1 } else { 0 };
        if !next_loss.is_finite() || rising >= DIVERGENCE_RUN {
            halvings += 1;
            if halvings > opts.max_halvings {
                return Err(Error::Divergence(format!(
                    "loss kept increasing after {} learning-rate halvings (lr {lr:e})",
                    opts.max_halvings
                )));
            }
            lr *= 0.5;
            log::warn!("loss rising at iteration {iter}, halving learning rate to {lr:e}");
            theta = best.1.clone();
            (cur, grad) = loss(kind, &theta, x, y, opts.lambda)?;
            rising = 0;
            history.clear();
            history.push(cur);
            continue;
        }
        theta = next;
        cur = next_loss;
        grad = next_grad;
        if cur < best.0 {
            best = (cur, theta.clone());
        }
        history.push(cur);
        if iter % opts.log_interval == 0 {
            log.push((iter, cur));
            log::debug!("iteration {iter}: loss {cur:.6e}");
        }
        if history.len() > WINDOW {
            let old = history[history.len() - 1 - WINDOW];
            if (old - cur).abs() <= opts.tol * old.abs().max(f64::MIN_POSITIVE) {
                converged = true;
                break;
            }
        }
    }
    if log.last().map(|(i, _)| *i) != Some(iter) {
        log.push((iter, cur));
    }
    Ok(LinearClassifier {
        theta: best.1,
        loss_kind: kind,
        lambda: opts.lambda,
        training_log: log,
        iterations: iter,
        converged,
        final_learning_rate: lr,
    })
}

/// Index of the largest entry, ties to the lowest index.
fn argmax(v: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (j, s) in v.enumerate() {
        if s > best.1 {
            best = (j, s);
        }
    }
    best.0
}

impl LinearClassifier {
    pub fn n_classes(&self) -> usize {
        self.theta.ncols()
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<usize>> {
        predict(&self.theta, x)
    }

    pub fn accuracy(&self, x: &DMatrix<f64>, y: &[usize]) -> Result<f64> {
        accuracy(&self.theta, x, y)
    }

    /// Rows `iteration,loss`.
    pub fn training_curve_csv(&self) -> String {
        let mut out = String::from("iteration,loss\n");
        for (i, l) in &self.training_log {
            out.push_str(&format!("{i},{l}\n"));
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        let f = ClassifierFile {
            format_version: FORMAT_VERSION,
            dim: self.theta.nrows(),
            classes: self.theta.ncols(),
            theta: self.theta.transpose().iter().copied().collect(),
            loss_kind: self.loss_kind,
            lambda: self.lambda,
            iterations: self.iterations,
            converged: self.converged,
            final_learning_rate: self.final_learning_rate,
            training_log: self.training_log.clone(),
        };
        Ok(serde_json::to_string_pretty(&f)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: ClassifierFile = serde_json::from_str(text)?;
        if f.format_version != FORMAT_VERSION {
            return Err(Error::Config(format!(
                "unsupported classifier format_version {}",
                f.format_version
            )));
        }
        if f.theta.len() != f.dim * f.classes {
            return Err(Error::Config("classifier theta has the wrong length".into()));
        }
        Ok(Self {
            theta: DMatrix::from_row_slice(f.dim, f.classes, &f.theta),
            loss_kind: f.loss_kind,
            lambda: f.lambda,
            training_log: f.training_log,
            iterations: f.iterations,
            converged: f.converged,
            final_learning_rate: f.final_learning_rate,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct ClassifierFile {
    format_version: u32,
    dim: usize,
    classes: usize,
    theta: Vec<f64>,
    loss_kind: LossKind,
    lambda: f64,
    iterations: usize,
    converged: bool,
    final_learning_rate: f64,
    training_log: Vec<(usize, f64)>,
}

/// Argmax of `theta^T x` per sample; ties go to the lowest class.
pub fn predict(theta: &DMatrix<f64>, x: &DMatrix<f64>) -> Result<Vec<usize>> {
    if theta.nrows() != x.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "theta has {} rows, samples have dimension {}",
            theta.nrows(),
            x.nrows()
        )));
    }
    let scores = theta.tr_mul(x);
    Ok(scores
        .column_iter()
        .map(|c| argmax(c.iter().copied()))
        .collect())
}

pub fn accuracy(theta: &DMatrix<f64>, x: &DMatrix<f64>, y: &[usize]) -> Result<f64> {
    if y.len() != x.ncols() || y.is_empty() {
        return Err(Error::DimensionMismatch(format!(
            "{} samples, {} labels",
            x.ncols(),
            y.len()
        )));
    }
    let pred = predict(theta, x)?;
    Ok(pred.iter().zip(y).filter(|(a, b)| a == b).count() as f64 / y.len() as f64)
}
