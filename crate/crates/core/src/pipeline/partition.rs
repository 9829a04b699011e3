//! Attribute-based train/test partitions and k-fold splits.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::seq::IndexedRandom;
use serde::{Deserialize, Serialize};

use super::manifest::DatasetManifest;
use crate::error::{Error, Result};
use crate::rng;

/// How an attribute's training values are chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "select", rename_all = "snake_case")]
pub enum Selection {
    /// Entries whose value is in the list. Values that both parse as
    /// numbers compare numerically, so `"+15"` matches `"15"`.
    Values { values: Vec<String> },
    /// `count` values drawn without replacement from the values present.
    Random { count: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeRule {
    pub attribute: String,
    #[serde(flatten)]
    pub selection: Selection,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RandomScope {
    /// One draw shared by all identities.
    #[default]
    Global,
    /// A separate draw for every identity, from that identity's values.
    PerIdentity,
}

/// An entry goes to training when it satisfies every rule, to testing
/// otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionScheme {
    pub name: String,
    pub train_filter: Vec<AttributeRule>,
    #[serde(default)]
    pub random_scope: RandomScope,
}

fn values(list: &[&str]) -> Selection {
    Selection::Values {
        values: list.iter().map(|s| s.to_string()).collect(),
    }
}

impl PartitionScheme {
    /// The five pose/illumination schemes used for multi-view face data.
    /// Poses are in degrees; illumination values are condition labels.
    pub fn preset(name: &str, seed: u64) -> Option<Self> {
        let rule = |attribute: &str, selection| AttributeRule {
            attribute: attribute.into(),
            selection,
        };
        let filter = match name {
            "poses-a" => rule("pose", values(&["-30", "-15", "0", "45"])),
            "poses-b" => rule("pose", values(&["-30", "-15", "0", "30", "45"])),
            "illumination-random-6" => rule("illumination", Selection::Random { count: 6, seed }),
            "poses-c" => rule("pose", values(&["-45", "15", "30"])),
            "poses-random-3" => rule("pose", Selection::Random { count: 3, seed }),
            _ => return None,
        };
        Some(Self {
            name: name.into(),
            train_filter: vec![filter],
            random_scope: RandomScope::Global,
        })
    }

    pub const PRESETS: [&'static str; 5] = [
        "poses-a",
        "poses-b",
        "illumination-random-6",
        "poses-c",
        "poses-random-3",
    ];
}

fn same_value(a: &str, b: &str) -> bool {
    match (a.trim().parse::<f64>(), b.trim().parse::<f64>()) {
        (Ok(x), Ok(y)) => x == y,
        _ => a == b,
    }
}

/// Values chosen by a random rule, kept verbatim in reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChosenValues {
    pub attribute: String,
    /// `None` for a global draw.
    pub identity: Option<String>,
    pub values: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub scheme: String,
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
    pub chosen: Vec<ChosenValues>,
}

fn draw(pool: &BTreeSet<&str>, count: usize, seed: u64, stream: u64, attr: &str) -> Result<Vec<String>> {
    let pool: Vec<&str> = pool.iter().copied().collect();
    if count > pool.len() {
        return Err(Error::Config(format!(
            "cannot choose {count} values of `{attr}` from {} available",
            pool.len()
        )));
    }
    let mut g = rng::stream(seed, stream);
    let mut chosen: Vec<String> = pool.choose_multiple(&mut g, count).map(|s| s.to_string()).collect();
    chosen.sort();
    Ok(chosen)
}

pub fn apply_partition(manifest: &DatasetManifest, scheme: &PartitionScheme) -> Result<Partition> {
    if scheme.train_filter.is_empty() {
        return Err(Error::Config(format!("partition `{}` has no rules", scheme.name)));
    }
    let entries = &manifest.entries;
    for r in &scheme.train_filter {
        if !entries.iter().all(|e| e.attributes.contains_key(&r.attribute)) {
            return Err(Error::Config(format!(
                "partition `{}` uses attribute `{}` that the manifest lacks",
                scheme.name, r.attribute
            )));
        }
    }
    let identities: BTreeSet<&str> = entries.iter().map(|e| e.identity_label.as_str()).collect();

    // For each rule, the accepted values per identity (or globally).
    let mut chosen = Vec::new();
    let mut accept: Vec<BTreeMap<Option<&str>, Vec<String>>> = Vec::new();
    for (ri, r) in scheme.train_filter.iter().enumerate() {
        let mut table = BTreeMap::new();
        match &r.selection {
            Selection::Values { values } => {
                table.insert(None, values.clone());
            }
            Selection::Random { count, seed } => match scheme.random_scope {
                RandomScope::Global => {
                    let pool: BTreeSet<&str> = entries.iter().map(|e| e.attributes[&r.attribute].as_str()).collect();
                    let vals = draw(&pool, *count, *seed, ri as u64, &r.attribute)?;
                    chosen.push(ChosenValues {
                        attribute: r.attribute.clone(),
                        identity: None,
                        values: vals.clone(),
                    });
                    table.insert(None, vals);
                }
                RandomScope::PerIdentity => {
                    for (k, who) in identities.iter().enumerate() {
                        let pool: BTreeSet<&str> = entries
                            .iter()
                            .filter(|e| e.identity_label == *who)
                            .map(|e| e.attributes[&r.attribute].as_str())
                            .collect();
                        let stream = ((ri as u64) << 32) | k as u64;
                        let vals = draw(&pool, (*count).min(pool.len()), *seed, stream, &r.attribute)?;
                        chosen.push(ChosenValues {
                            attribute: r.attribute.clone(),
                            identity: Some(who.to_string()),
                            values: vals.clone(),
                        });
                        table.insert(Some(*who), vals);
                    }
                }
            },
        }
        accept.push(table);
    }

    let mut train_ids = Vec::new();
    let mut test_ids = Vec::new();
    for e in entries {
        let ok = scheme.train_filter.iter().zip(&accept).all(|(r, table)| {
            let allowed = table
                .get(&None)
                .or_else(|| table.get(&Some(e.identity_label.as_str())))
                .map(Vec::as_slice)
                .unwrap_or(&[]);
            let v = &e.attributes[&r.attribute];
            allowed.iter().any(|a| same_value(a, v))
        });
        if ok {
            train_ids.push(e.stimulus_id.clone());
        } else {
            test_ids.push(e.stimulus_id.clone());
        }
    }
    for (side, ids) in [("train", &train_ids), ("test", &test_ids)] {
        if ids.is_empty() {
            return Err(Error::EmptySplit {
                scheme: scheme.name.clone(),
                side,
            });
        }
    }
    Ok(Partition {
        scheme: scheme.name.clone(),
        train_ids,
        test_ids,
        chosen,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded shuffle of `0..n`, cut into `k` contiguous blocks whose sizes
/// differ by at most one. Fold `i` tests on block `i`.
pub fn kfold(n: usize, k: usize, seed: u64) -> Result<Vec<Fold>> {
    if k < 2 {
        return Err(Error::Config(format!("k-fold needs k >= 2, got {k}")));
    }
    if n < k {
        return Err(Error::TooFewItems { items: n, folds: k });
    }
    let order = rng::permutation(n, &mut rng::stream(seed, 0));
    let (base, extra) = (n / k, n % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for i in 0..k {
        let len = base + usize::from(i < extra);
        let test: Vec<usize> = order[start..start + len].to_vec();
        let train: Vec<usize> = order[..start].iter().chain(&order[start + len..]).copied().collect();
        folds.push(Fold { train, test });
        start += len;
    }
    Ok(folds)
}

/// Fails with `Leakage` when an id is on both sides.
pub fn assert_disjoint<S: AsRef<str>>(train: &[S], test: &[S]) -> Result<()> {
    let set: HashSet<&str> = train.iter().map(|s| s.as_ref()).collect();
    match test.iter().find(|t| set.contains(t.as_ref())) {
        Some(t) => Err(Error::Leakage(t.as_ref().to_string())),
        None => Ok(()),
    }
}
