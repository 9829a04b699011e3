use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub stimulus_id: String,
    pub identity_label: String,
    #[serde(default)]
    pub attributes: BTreeMap<String, String>,
    /// Row id in the landmarks file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub landmark_ref: Option<String>,
    /// Image path, relative to the manifest's directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_ref: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub dataset_name: String,
    pub format_version: u32,
    /// Landmarks CSV, relative to the manifest's directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub landmarks_file: Option<String>,
    pub entries: Vec<ManifestEntry>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl DatasetManifest {
    pub fn new(dataset_name: impl Into<String>, entries: Vec<ManifestEntry>) -> Self {
        Self {
            dataset_name: dataset_name.into(),
            format_version: FORMAT_VERSION,
            landmarks_file: None,
            entries,
            base_dir: PathBuf::new(),
        }
    }

    /// Parses and validates. Referenced files are resolved against the
    /// manifest's directory and must exist.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: Self = serde_json::from_str(&text).map_err(|e| {
            Error::malformed(
                path.display(),
                format!("line {}, column {}", e.line(), e.column()),
                e.to_string(),
            )
        })?;
        m.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        m.validate(path)?;
        m.check_files(path)?;
        Ok(m)
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        self.base_dir.join(rel)
    }

    pub fn validate(&self, path: &Path) -> Result<()> {
        let shown = path.display();
        if self.format_version != FORMAT_VERSION {
            return Err(Error::malformed(
                &shown,
                "format_version",
                format!("unsupported manifest version {}", self.format_version),
            ));
        }
        if self.entries.is_empty() {
            return Err(Error::malformed(&shown, "entries", "manifest has no entries"));
        }
        let mut seen = HashSet::new();
        let keys: BTreeSet<&String> = self.entries[0].attributes.keys().collect();
        for (i, e) in self.entries.iter().enumerate() {
            if !seen.insert(e.stimulus_id.as_str()) {
                return Err(Error::malformed(
                    &shown,
                    format!("entry {i}"),
                    format!("duplicate stimulus id `{}`", e.stimulus_id),
                ));
            }
            let these: BTreeSet<&String> = e.attributes.keys().collect();
            if these != keys {
                return Err(Error::malformed(
                    &shown,
                    format!("entry {i}"),
                    format!("attribute keys {these:?} differ from the first entry's {keys:?}"),
                ));
            }
        }
        Ok(())
    }

    fn check_files(&self, path: &Path) -> Result<()> {
        let shown = path.display();
        if let Some(lm) = &self.landmarks_file {
            let full = self.resolve(lm);
            let rows = super::io::load_landmarks(&full)?;
            let ids: HashSet<&str> = rows.iter().map(|(id, _)| id.as_str()).collect();
            for (i, e) in self.entries.iter().enumerate() {
                if let Some(r) = &e.landmark_ref {
                    if !ids.contains(r.as_str()) {
                        return Err(Error::malformed(
                            &shown,
                            format!("entry {i}"),
                            format!("landmark_ref `{r}` not found in {}", full.display()),
                        ));
                    }
                }
            }
        }
        for (i, e) in self.entries.iter().enumerate() {
            if let Some(img) = &e.image_ref {
                if !self.resolve(img).is_file() {
                    return Err(Error::malformed(
                        &shown,
                        format!("entry {i}"),
                        format!("image `{img}` does not exist"),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        super::io::write_file(path, serde_json::to_string_pretty(self)?.as_bytes())
    }

    pub fn stimulus_ids(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.stimulus_id.clone()).collect()
    }

    pub fn entry(&self, stimulus_id: &str) -> Option<&ManifestEntry> {
        self.entries.iter().find(|e| e.stimulus_id == stimulus_id)
    }

    /// Identity labels of `ids` as class indices `0..k`, with the sorted
    /// distinct identity names.
    pub fn class_labels<S: AsRef<str>>(&self, ids: &[S]) -> Result<(Vec<usize>, Vec<String>)> {
        let by_id: BTreeMap<&str, &str> = self
            .entries
            .iter()
            .map(|e| (e.stimulus_id.as_str(), e.identity_label.as_str()))
            .collect();
        let names: Vec<String> = self
            .entries
            .iter()
            .map(|e| e.identity_label.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let labels = ids
            .iter()
            .map(|id| {
                let name = by_id
                    .get(id.as_ref())
                    .ok_or_else(|| Error::MissingStimulus(id.as_ref().to_string()))?;
                Ok(names.binary_search_by(|n| n.as_str().cmp(name)).expect("name collected above"))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((labels, names))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(id: &str, who: &str, pose: &str) -> ManifestEntry {
        ManifestEntry {
            stimulus_id: id.into(),
            identity_label: who.into(),
            attributes: [("pose".to_string(), pose.to_string())].into(),
            landmark_ref: None,
            image_ref: None,
        }
    }

    #[test]
    fn duplicate_ids_and_inconsistent_keys_are_rejected() {
        let p = Path::new("m.json");
        let dup = DatasetManifest::new("d", vec![entry("a", "x", "0"), entry("a", "y", "0")]);
        assert!(dup.validate(p).is_err());
        let mut odd = entry("b", "x", "0");
        odd.attributes.insert("light".into(), "1".into());
        let mixed = DatasetManifest::new("d", vec![entry("a", "x", "0"), odd]);
        assert!(mixed.validate(p).is_err());
    }

    #[test]
    fn load_checks_referenced_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut e = entry("a", "x", "0");
        e.image_ref = Some("a.pgm".into());
        let m = DatasetManifest::new("d", vec![e, entry("b", "y", "15")]);
        let path = dir.path().join("manifest.json");
        m.save(&path).unwrap();
        assert!(matches!(DatasetManifest::load(&path), Err(Error::MalformedFile { .. })));
        std::fs::write(dir.path().join("a.pgm"), b"P5 1 1 255\n\x00").unwrap();
        let back = DatasetManifest::load(&path).unwrap();
        assert_eq!(back.entries, m.entries);
    }

    #[test]
    fn class_labels_are_sorted_names() {
        let m = DatasetManifest::new("d", vec![entry("a", "zed", "0"), entry("b", "amy", "0"), entry("c", "zed", "0")]);
        let (labels, names) = m.class_labels(&["c", "b"]).unwrap();
        assert_eq!(labels, vec![1, 0]);
        assert_eq!(names, vec!["amy", "zed"]);
        assert!(m.class_labels(&["q"]).is_err());
    }
}
