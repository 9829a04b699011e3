use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::io::EmbeddingFormat;
use super::partition::PartitionScheme;
use crate::classify::{LossKind, TrainOptions};
use crate::error::{Error, Result};
use crate::synth::{SynthKind, SynthSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Linear,
    Axis,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DataSource {
    Synthetic {
        spec: SynthSpec,
    },
    Files {
        /// Face vectors in the embedding CSV/LPEM layout, one coordinate
        /// per unit.
        face_vectors: PathBuf,
        embeddings: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        embedding_format: Option<EmbeddingFormat>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        manifest: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case")]
pub enum SplitSpec {
    /// Seeded random hold-out.
    Holdout { test_fraction: f64 },
    /// A named preset or an explicit attribute scheme; needs a manifest.
    Partition {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        preset: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        partition: Option<PartitionScheme>,
    },
    /// Every fold is run and reported.
    Kfold { k: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorrelationConfig {
    pub n_perm: usize,
    pub alpha: f64,
}

impl Default for CorrelationConfig {
    fn default() -> Self {
        Self {
            n_perm: 999,
            alpha: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    pub losses: Vec<LossKind>,
    pub train: TrainOptions,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            losses: vec![LossKind::Softmax, LossKind::Hinge],
            train: TrainOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VerificationConfig {
    /// Pair file (`id_a,id_b,same`). Pairs with an id outside the test split
    /// are dropped. Without a file, balanced pairs are drawn from the test
    /// stimuli.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pairs: Option<PathBuf>,
    pub n_pairs: usize,
    pub folds: usize,
}

impl Default for VerificationConfig {
    fn default() -> Self {
        Self {
            pairs: None,
            n_pairs: 600,
            folds: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReconstructConfig {
    /// Parameter space for rendering. Without one only the coefficient
    /// CSVs are written.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub paramspace: Option<PathBuf>,
    pub max_stimuli: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub canvas: Option<(usize, usize)>,
}

impl Default for ReconstructConfig {
    fn default() -> Self {
        Self {
            paramspace: None,
            max_stimuli: 8,
            canvas: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub output_dir: PathBuf,
    pub model: ModelKind,
    pub data: DataSource,
    pub split: SplitSpec,
    #[serde(default)]
    pub ridge_lambda: f64,
    #[serde(default)]
    pub standardize: bool,
    #[serde(default)]
    pub correlation: CorrelationConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classifier: Option<ClassifierConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verification: Option<VerificationConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reconstruct: Option<ReconstructConfig>,
}

fn rebase(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

fn must_exist(p: &Path, what: &str) -> Result<()> {
    if p.is_file() {
        Ok(())
    } else {
        Err(Error::Config(format!("{what} `{}` does not exist", p.display())))
    }
}

impl ExperimentConfig {
    /// Reads a config file. Relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: Self = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.rebase_paths(path.parent().unwrap_or(Path::new("")));
        Ok(cfg)
    }

    pub fn rebase_paths(&mut self, base: &Path) {
        rebase(base, &mut self.output_dir);
        if let DataSource::Files {
            face_vectors,
            embeddings,
            manifest,
            ..
        } = &mut self.data
        {
            rebase(base, face_vectors);
            rebase(base, embeddings);
            if let Some(m) = manifest {
                rebase(base, m);
            }
        }
        if let Some(p) = self.verification.as_mut().and_then(|v| v.pairs.as_mut()) {
            rebase(base, p);
        }
        if let Some(p) = self.reconstruct.as_mut().and_then(|r| r.paramspace.as_mut()) {
            rebase(base, p);
        }
    }

    /// The explicit or preset partition scheme, if the split uses one.
    pub fn partition_scheme(&self) -> Result<Option<PartitionScheme>> {
        match &self.split {
            SplitSpec::Partition {
                preset: Some(name),
                partition: None,
            } => PartitionScheme::preset(name, self.seed)
                .map(Some)
                .ok_or_else(|| {
                    Error::Config(format!(
                        "unknown partition preset `{name}` (known: {})",
                        PartitionScheme::PRESETS.join(", ")
                    ))
                }),
            SplitSpec::Partition {
                preset: None,
                partition: Some(p),
            } => Ok(Some(p.clone())),
            SplitSpec::Partition { .. } => Err(Error::Config(
                "a partition split needs exactly one of `preset` and `partition`".into(),
            )),
            _ => Ok(None),
        }
    }

    /// Checks everything that can be checked without touching the data
    /// proper, so that bad configs fail before any computation.
    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() {
            return Err(Error::Config("experiment name is empty".into()));
        }
        if !(self.ridge_lambda >= 0.0) {
            return Err(Error::Config(format!("ridge_lambda must be >= 0, got {}", self.ridge_lambda)));
        }
        if !(self.correlation.alpha > 0.0 && self.correlation.alpha < 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0, 1), got {}", self.correlation.alpha)));
        }
        let has_labels = match &self.data {
            DataSource::Synthetic { spec } => {
                spec.validate().map_err(|e| Error::Config(e.to_string()))?;
                matches!(spec.kind, SynthKind::IdentityClusters(_))
            }
            DataSource::Files {
                face_vectors,
                embeddings,
                manifest,
                ..
            } => {
                must_exist(face_vectors, "face vector file")?;
                must_exist(embeddings, "embedding file")?;
                if let Some(m) = manifest {
                    must_exist(m, "manifest")?;
                }
                manifest.is_some()
            }
        };
        match &self.split {
            SplitSpec::Holdout { test_fraction } => {
                if !(*test_fraction > 0.0 && *test_fraction < 1.0) {
                    return Err(Error::Config(format!("test_fraction must lie in (0, 1), got {test_fraction}")));
                }
            }
            SplitSpec::Partition { .. } => {
                self.partition_scheme()?;
                if !matches!(self.data, DataSource::Files { manifest: Some(_), .. }) {
                    return Err(Error::Config("a partition split needs a dataset manifest".into()));
                }
            }
            SplitSpec::Kfold { k } => {
                if *k < 2 {
                    return Err(Error::Config(format!("k-fold needs k >= 2, got {k}")));
                }
            }
        }
        if let Some(c) = &self.classifier {
            if c.losses.is_empty() {
                return Err(Error::Config("classifier section lists no losses".into()));
            }
            if !has_labels {
                return Err(Error::Config(
                    "classifier probes need identity labels (a manifest or identity-cluster data)".into(),
                ));
            }
        }
        if let Some(v) = &self.verification {
            if v.folds < 2 {
                return Err(Error::Config(format!("verification needs >= 2 folds, got {}", v.folds)));
            }
            match &v.pairs {
                Some(p) => must_exist(p, "pair file")?,
                None if !has_labels => {
                    return Err(Error::Config(
                        "verification without a pair file needs identity labels to draw pairs".into(),
                    ))
                }
                None => {}
            }
        }
        if let Some(r) = &self.reconstruct {
            if let Some(p) = &r.paramspace {
                must_exist(p, "parameter space")?;
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
