//! Face vectors, responses and labels as one unit, from files or generated.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::config::DataSource;
use super::io::{self, EmbeddingFormat};
use super::manifest::{DatasetManifest, ManifestEntry};
use crate::axismodel;
use crate::encoding::{LinearEncodingModel, ResponseMatrix};
use crate::error::Result;
use crate::synth::{self, GroundTruth, SyntheticDataset};
use crate::verify::PairSet;

#[derive(Debug, Clone)]
pub struct Dataset {
    /// `dim x n` face vectors, columns in `responses` order.
    pub p: DMatrix<f64>,
    pub responses: ResponseMatrix,
    /// Identity class per stimulus.
    pub labels: Option<Vec<usize>>,
    pub manifest: Option<DatasetManifest>,
    /// Pairs supplied with the data itself.
    pub pairs: Option<PairSet>,
}

impl Dataset {
    pub fn stimulus_ids(&self) -> &[String] {
        self.responses.stimulus_ids()
    }

    pub fn from_synthetic(ds: SyntheticDataset) -> Self {
        Self {
            p: ds.p,
            responses: ds.responses,
            labels: ds.labels,
            manifest: None,
            pairs: ds.pairs,
        }
    }

    pub fn load(source: &DataSource) -> Result<Self> {
        match source {
            DataSource::Synthetic { spec } => Ok(Self::from_synthetic(synth::generate(spec)?)),
            DataSource::Files {
                face_vectors,
                embeddings,
                embedding_format,
                manifest,
            } => {
                let fv = io::load_face_vectors(face_vectors)?;
                let r = io::load_embeddings(embeddings, *embedding_format)?.select_stimuli(fv.stimulus_ids())?;
                let (labels, manifest) = match manifest {
                    Some(path) => {
                        let m = DatasetManifest::load(path)?;
                        let (labels, _) = m.class_labels(fv.stimulus_ids())?;
                        (Some(labels), Some(m))
                    }
                    None => (None, None),
                };
                Ok(Self {
                    p: fv.values().clone(),
                    responses: r,
                    labels,
                    manifest,
                    pairs: None,
                })
            }
        }
    }
}

/// Paths written by `export_synthetic`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportedFiles {
    pub face_vectors: PathBuf,
    pub embeddings: PathBuf,
    pub manifest: PathBuf,
    pub truth: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pairs: Option<PathBuf>,
}

/// Identity name for cluster `label`.
pub fn identity_name(label: usize) -> String {
    format!("id{label:04}")
}

/// Writes a generated dataset in the ingestion formats: face vectors and
/// responses as embedding files, a manifest, the generating model as JSON,
/// and the pair list when there is one.
pub fn export_synthetic(ds: &SyntheticDataset, dir: &Path, format: EmbeddingFormat) -> Result<ExportedFiles> {
    let ids = ds.responses.stimulus_ids().to_vec();
    let ext = match format {
        EmbeddingFormat::Csv => "csv",
        EmbeddingFormat::Lpem => "lpem",
    };
    let face_vectors = dir.join(format!("face_vectors.{ext}"));
    let embeddings = dir.join(format!("embeddings.{ext}"));
    io::save_embeddings(&io::face_vectors_matrix(&ds.p, ids.clone())?, &face_vectors, Some(format))?;
    io::save_embeddings(&ds.responses, &embeddings, Some(format))?;

    let entries = ids
        .iter()
        .enumerate()
        .map(|(j, id)| ManifestEntry {
            stimulus_id: id.clone(),
            identity_label: match &ds.labels {
                Some(l) => identity_name(l[j]),
                None => id.clone(),
            },
            attributes: Default::default(),
            landmark_ref: None,
            image_ref: None,
        })
        .collect();
    let manifest = dir.join("manifest.json");
    DatasetManifest::new(format!("synthetic-{}", ds.spec.seed), entries).save(&manifest)?;

    let truth = dir.join("truth.json");
    let text = match &ds.truth {
        GroundTruth::Linear { t0, b0 } => LinearEncodingModel {
            transform: t0.clone(),
            bias: b0.clone(),
            ridge_lambda: 0.0,
            standardized_inputs: false,
            neuron_ids: ds.responses.neuron_ids().to_vec(),
            residual_ss: nalgebra::DVector::zeros(t0.nrows()),
        }
        .to_json()?,
        GroundTruth::Axis { models, .. } => axismodel::models_to_json(models)?,
    };
    io::write_file(&truth, text.as_bytes())?;

    let pairs = match &ds.pairs {
        Some(p) => {
            let path = dir.join("pairs.csv");
            io::write_file(&path, p.to_csv().as_bytes())?;
            Some(path)
        }
        None => None,
    };
    Ok(ExportedFiles {
        face_vectors,
        embeddings,
        manifest,
        truth,
        pairs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{ClusterParams, SynthKind, SynthSpec};

    #[test]
    fn exported_cluster_data_loads_back() {
        let spec = SynthSpec {
            seed: 4,
            n_stimuli: 12,
            n_neurons: 6,
            dim: 3,
            noise_sigma: 0.0,
            variance_decay: None,
            kind: SynthKind::IdentityClusters(ClusterParams {
                identities: 3,
                per_identity: 4,
                spread: 0.1,
                center_scale: 1.0,
                separation: 6.0,
                n_pairs: 8,
            }),
        };
        let ds = synth::generate(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let files = export_synthetic(&ds, dir.path(), EmbeddingFormat::Lpem).unwrap();
        let back = Dataset::load(&DataSource::Files {
            face_vectors: files.face_vectors.clone(),
            embeddings: files.embeddings.clone(),
            embedding_format: None,
            manifest: Some(files.manifest.clone()),
        })
        .unwrap();
        assert_eq!(back.p, ds.p);
        assert_eq!(back.responses, ds.responses);
        assert_eq!(back.labels, ds.labels);
        assert_eq!(PairSet::load_csv(files.pairs.as_ref().unwrap()).unwrap(), *ds.pairs.as_ref().unwrap());
    }
}
