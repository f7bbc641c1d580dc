//! Dataset manifest: one row per sequence file.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::PersonSequence;

use super::seqfile::read_sequence;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Gallery,
    Probe,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Gallery => "gallery",
            Split::Probe => "probe",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub identity: String,
    pub role: String,
    /// Relative to the manifest's directory unless absolute.
    pub path: PathBuf,
    pub split: Split,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub sequences: Vec<ManifestEntry>,
    /// Directory that relative paths resolve against; not serialized.
    #[serde(skip)]
    pub root: PathBuf,
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut m: Self = serde_json::from_slice(&bytes).map_err(|e| Error::json(path, e))?;
        m.root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut json = serde_json::to_vec_pretty(self).map_err(|e| Error::json(path, e))?;
        json.push(b'\n');
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        if entry.path.is_absolute() {
            entry.path.clone()
        } else {
            self.root.join(&entry.path)
        }
    }

    pub fn load_sequence(&self, entry: &ManifestEntry) -> Result<PersonSequence> {
        read_sequence(&self.resolve(entry), &entry.identity)
    }

    pub fn entries(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.sequences.iter().filter(move |e| e.split == split)
    }

    /// Sorted distinct identities of a split.
    pub fn identities(&self, split: Split) -> Vec<String> {
        let mut ids: Vec<String> = self.entries(split).map(|e| e.identity.clone()).collect();
        ids.sort();
        ids.dedup();
        ids
    }

    pub fn roles(&self) -> BTreeMap<String, String> {
        self.sequences
            .iter()
            .map(|e| (e.identity.clone(), e.role.clone()))
            .collect()
    }
}
