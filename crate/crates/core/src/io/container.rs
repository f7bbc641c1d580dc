//! JSON manifest + little-endian `f32` blob container shared by model
//! checkpoints and galleries.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

pub const CONTAINER_FORMAT: &str = "pcreid-tensors/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the blob.
    pub offset: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    blob: String,
    meta: Value,
    tensors: Vec<TensorEntry>,
}

/// Named `f32` tensors plus free-form metadata.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TensorContainer {
    pub meta: Value,
    pub tensors: Vec<(String, Vec<usize>, Vec<f32>)>,
}

/// Blob path that accompanies a manifest: `model.json` → `model.bin`.
pub fn blob_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("bin")
}

impl TensorContainer {
    pub fn new(meta: Value) -> Self {
        Self {
            meta,
            tensors: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.tensors.push((name.into(), shape, data));
    }

    pub fn get(&self, name: &str) -> Option<(&[usize], &[f32])> {
        self.tensors
            .iter()
            .find(|(n, _, _)| n == name)
            .map(|(_, s, d)| (s.as_slice(), d.as_slice()))
    }

    /// Writes `path` (JSON) and its sibling `.bin` blob.
    pub fn save(&self, path: &Path) -> Result<()> {
        let blob = blob_path(path);
        let mut bytes = Vec::new();
        let mut entries = Vec::with_capacity(self.tensors.len());
        for (name, shape, data) in &self.tensors {
            entries.push(TensorEntry {
                name: name.clone(),
                shape: shape.clone(),
                offset: bytes.len(),
            });
            for v in data {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        let manifest = Manifest {
            format: CONTAINER_FORMAT.into(),
            blob: blob
                .file_name()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default(),
            meta: self.meta.clone(),
            tensors: entries,
        };
        let json = serde_json::to_vec_pretty(&manifest).map_err(|e| Error::json(path, e))?;
        fs::write(path, json).map_err(|e| Error::io(path, e))?;
        fs::write(&blob, bytes).map_err(|e| Error::io(&blob, e))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read(path).map_err(|e| Error::io(path, e))?;
        let manifest: Manifest = serde_json::from_slice(&text).map_err(|e| Error::json(path, e))?;
        if manifest.format != CONTAINER_FORMAT {
            return Err(Error::format(
                path,
                format!("unsupported container format `{}`", manifest.format),
            ));
        }
        let blob = path.with_file_name(&manifest.blob);
        let bytes = fs::read(&blob).map_err(|e| Error::io(&blob, e))?;
        let mut tensors = Vec::with_capacity(manifest.tensors.len());
        for entry in manifest.tensors {
            let len: usize = entry.shape.iter().product();
            let end = entry.offset + 4 * len;
            if end > bytes.len() {
                return Err(Error::format(
                    &blob,
                    format!("tensor `{}` overruns the blob", entry.name),
                ));
            }
            let data = bytes[entry.offset..end]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            tensors.push((entry.name, entry.shape, data));
        }
        Ok(Self {
            meta: manifest.meta,
            tensors,
        })
    }
}
