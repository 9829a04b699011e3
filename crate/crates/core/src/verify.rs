//! Face verification: pair distances, threshold learning, ROC and equal
//! error rate.

use std::collections::BTreeSet;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoding::ResponseMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pair {
    pub a: String,
    pub b: String,
    pub same: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairSet {
    pub pairs: Vec<Pair>,
}

impl PairSet {
    pub fn new(pairs: Vec<Pair>) -> Self {
        Self { pairs }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn labels(&self) -> Vec<bool> {
        self.pairs.iter().map(|p| p.same).collect()
    }

    pub fn n_same(&self) -> usize {
        self.pairs.iter().filter(|p| p.same).count()
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Self::new(idx.iter().map(|&i| self.pairs[i].clone()).collect())
    }

    /// Reads `id_a,id_b,same` rows with a header; `same` is 0 or 1.
    pub fn load_csv(path: &Path) -> Result<Self> {
        let shown = path.display();
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| Error::malformed(&shown, "open", e.to_string()))?;
        let mut pairs = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let line = i + 2;
            let rec = rec.map_err(|e| Error::malformed(&shown, format!("line {line}"), e.to_string()))?;
            if rec.len() != 3 {
                return Err(Error::malformed(
                    &shown,
                    format!("line {line}"),
                    format!("expected 3 fields, found {}", rec.len()),
                ));
            }
            let same = match &rec[2] {
                "1" => true,
                "0" => false,
                other => {
                    return Err(Error::malformed(
                        &shown,
                        format!("line {line}"),
                        format!("same flag must be 0 or 1, found `{other}`"),
                    ))
                }
            };
            pairs.push(Pair {
                a: rec[0].to_string(),
                b: rec[1].to_string(),
                same,
            });
        }
        Ok(Self { pairs })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("id_a,id_b,same\n");
        for p in &self.pairs {
            out.push_str(&format!("{},{},{}\n", p.a, p.b, u8::from(p.same)));
        }
        out
    }
}

/// Builds `n_pairs` pairs, `ceil(n_pairs / 2)` of them matched. Items are
/// indices into `labels`; duplicate pairs are avoided while possible.
pub fn balanced_pairs(ids: &[String], labels: &[usize], n_pairs: usize, rng: &mut ChaCha8Rng) -> Result<PairSet> {
    if ids.len() != labels.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} ids, {} labels",
            ids.len(),
            labels.len()
        )));
    }
    let mut by_class: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for (i, &l) in labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    let classes: Vec<&Vec<usize>> = by_class.values().collect();
    let multi: Vec<&Vec<usize>> = classes.iter().copied().filter(|c| c.len() >= 2).collect();
    let n_same = n_pairs.div_ceil(2);
    let n_diff = n_pairs - n_same;
    if n_same > 0 && multi.is_empty() {
        return Err(Error::IllPosed("no identity has two samples for a matched pair".into()));
    }
    if n_diff > 0 && classes.len() < 2 {
        return Err(Error::IllPosed("mismatched pairs need at least two identities".into()));
    }

    let mut seen = BTreeSet::new();
    let mut pairs = Vec::with_capacity(n_pairs);
    let draw = |same: bool, rng: &mut ChaCha8Rng| -> (usize, usize) {
        if same {
            let c = multi[rng.random_range(0..multi.len())];
            let i = rng.random_range(0..c.len());
            let mut j = rng.random_range(0..c.len() - 1);
            if j >= i {
                j += 1;
            }
            (c[i], c[j])
        } else {
            let ci = rng.random_range(0..classes.len());
            let mut cj = rng.random_range(0..classes.len() - 1);
            if cj >= ci {
                cj += 1;
            }
            let (a, b) = (classes[ci], classes[cj]);
            (a[rng.random_range(0..a.len())], b[rng.random_range(0..b.len())])
        }
    };
    for (count, same) in [(n_same, true), (n_diff, false)] {
        for _ in 0..count {
            let mut pick = draw(same, rng);
            for _ in 0..100 {
                let key = (pick.0.min(pick.1), pick.0.max(pick.1));
                if seen.insert(key) {
                    break;
                }
                pick = draw(same, rng);
            }
            pairs.push(Pair {
                a: ids[pick.0].clone(),
                b: ids[pick.1].clone(),
                same,
            });
        }
    }
    Ok(PairSet { pairs })
}

/// Euclidean distance between the two response columns of each pair.
pub fn pair_distances(r: &ResponseMatrix, pairs: &PairSet) -> Result<Vec<f64>> {
    let index = r.stimulus_index();
    let col = |id: &str| {
        index
            .get(id)
            .copied()
            .ok_or_else(|| Error::MissingStimulus(id.to_string()))
    };
    pairs
        .pairs
        .iter()
        .map(|p| {
            let (a, b) = (col(&p.a)?, col(&p.b)?);
            Ok((r.values().column(a) - r.values().column(b)).norm())
        })
        .collect()
}

fn check_labels(distances: &[f64], same: &[bool]) -> Result<()> {
    if distances.len() != same.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} distances, {} labels",
            distances.len(),
            same.len()
        )));
    }
    if distances.iter().any(|d| !d.is_finite()) {
        return Err(Error::NonFinite("pair distances"));
    }
    if !same.iter().any(|s| *s) || same.iter().all(|s| *s) {
        return Err(Error::SingleClass);
    }
    Ok(())
}

/// Distinct distance values in increasing order, each with the number of
/// matched and mismatched pairs at that distance.
fn groups(distances: &[f64], same: &[bool]) -> Vec<(f64, usize, usize)> {
    let mut order: Vec<usize> = (0..distances.len()).collect();
    order.sort_by(|&a, &b| distances[a].total_cmp(&distances[b]));
    let mut out: Vec<(f64, usize, usize)> = Vec::new();
    for i in order {
        let d = distances[i];
        match out.last_mut() {
            Some(g) if g.0 == d => {}
            _ => out.push((d, 0, 0)),
        }
        let g = out.last_mut().expect("just pushed");
        if same[i] {
            g.1 += 1;
        } else {
            g.2 += 1;
        }
    }
    out
}

/// Fraction of pairs classified correctly when `d < tau` means matched.
pub fn accuracy_at(distances: &[f64], same: &[bool], tau: f64) -> f64 {
    let correct = distances
        .iter()
        .zip(same)
        .filter(|(d, s)| (**d < tau) == **s)
        .count();
    correct as f64 / distances.len() as f64
}

/// Threshold maximizing accuracy over the candidates `min - 1`, the
/// midpoints of consecutive distinct distances, and `max + 1`. Ties go to
/// the smallest threshold.
pub fn learn_threshold(distances: &[f64], same: &[bool]) -> Result<(f64, f64)> {
    check_labels(distances, same)?;
    let g = groups(distances, same);
    let total_diff: usize = g.iter().map(|x| x.2).sum();
    // Below every distance: everything is called mismatched.
    let mut best_tau = g[0].0 - 1.0;
    let mut best_correct = total_diff;
    let (mut same_below, mut diff_below) = (0, 0);
    for (k, grp) in g.iter().enumerate() {
        same_below += grp.1;
        diff_below += grp.2;
        let tau = match g.get(k + 1) {
            Some(next) => 0.5 * (grp.0 + next.0),
            None => grp.0 + 1.0,
        };
        let correct = same_below + total_diff - diff_below;
        if correct > best_correct {
            best_correct = correct;
            best_tau = tau;
        }
    }
    Ok((best_tau, best_correct as f64 / distances.len() as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

/// ROC swept over `min - 1`, every distinct distance and `max + 1`, and the
/// equal error rate interpolated where `FPR - FNR` changes sign.
pub fn roc_and_eer(distances: &[f64], same: &[bool]) -> Result<(Vec<RocPoint>, f64)> {
    check_labels(distances, same)?;
    let g = groups(distances, same);
    let n_same = same.iter().filter(|s| **s).count() as f64;
    let n_diff = same.len() as f64 - n_same;
    let mut roc = vec![RocPoint {
        threshold: g[0].0 - 1.0,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    for grp in &g {
        roc.push(RocPoint {
            threshold: grp.0,
            fpr: fp as f64 / n_diff,
            tpr: tp as f64 / n_same,
        });
        tp += grp.1;
        fp += grp.2;
    }
    roc.push(RocPoint {
        threshold: g[g.len() - 1].0 + 1.0,
        fpr: 1.0,
        tpr: 1.0,
    });

    let gap = |p: &RocPoint| p.fpr - (1.0 - p.tpr);
    let mut eer = 0.5;
    for w in roc.windows(2) {
        let (d0, d1) = (gap(&w[0]), gap(&w[1]));
        if d0 == 0.0 {
            eer = w[0].fpr;
            break;
        }
        if d0 < 0.0 && d1 >= 0.0 {
            let t = -d0 / (d1 - d0);
            eer = w[0].fpr + t * (w[1].fpr - w[0].fpr);
            break;
        }
    }
    Ok((roc, eer))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub distances: Vec<f64>,
    pub threshold_tau: f64,
    pub acc: f64,
    pub roc: Vec<RocPoint>,
    pub eer: f64,
    pub one_minus_eer: f64,
}

impl VerificationReport {
    /// Learns the threshold and ROC on the same pairs.
    pub fn evaluate(distances: Vec<f64>, same: &[bool]) -> Result<Self> {
        let (threshold_tau, acc) = learn_threshold(&distances, same)?;
        let (roc, eer) = roc_and_eer(&distances, same)?;
        Ok(Self {
            distances,
            threshold_tau,
            acc,
            roc,
            eer,
            one_minus_eer: 1.0 - eer,
        })
    }

    /// Rows `threshold,fpr,tpr`.
    pub fn roc_csv(&self) -> String {
        roc_csv(&self.roc)
    }
}

pub fn roc_csv(roc: &[RocPoint]) -> String {
    let mut out = String::from("threshold,fpr,tpr\n");
    for p in roc {
        out.push_str(&format!("{},{},{}\n", p.threshold, p.fpr, p.tpr));
    }
    out
}
