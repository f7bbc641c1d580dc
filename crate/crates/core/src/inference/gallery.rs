//! Identity galleries: enrollment, serialization and the sequence embedder.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::svm::{SvmConfig, SvmModel};
use crate::encoder::{encode_sequence, Checkpoint, ModelParams, MultiViewEmbedding};
use crate::error::{Error, Result};
use crate::geometry::{PersonSequence, RenderConfig};
use crate::io::TensorContainer;
use crate::training::RenderCache;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GalleryMode {
    #[default]
    Svm,
    #[serde(rename = "nn")]
    NearestNeighbor,
}

impl fmt::Display for GalleryMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GalleryMode::Svm => "svm",
            GalleryMode::NearestNeighbor => "nn",
        })
    }
}

impl FromStr for GalleryMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "svm" => Ok(GalleryMode::Svm),
            "nn" => Ok(GalleryMode::NearestNeighbor),
            other => Err(Error::InvalidArgument(format!("unknown gallery mode `{other}`"))),
        }
    }
}

/// Renders and embeds sequences with a frozen model.
#[derive(Clone, Debug)]
pub struct Embedder {
    pub params: ModelParams<f32>,
    pub render: RenderConfig,
    /// Sequences longer than this are truncated to their first frames.
    pub max_frames: Option<usize>,
    pub cache: RenderCache,
}

impl Embedder {
    pub fn new(checkpoint: &Checkpoint, render: Option<RenderConfig>) -> Result<Self> {
        let render = render.or(checkpoint.render).ok_or_else(|| {
            Error::ConfigMismatch("checkpoint has no render settings and none were given".into())
        })?;
        Ok(Self {
            params: checkpoint.params.clone(),
            render,
            max_frames: None,
            cache: RenderCache::default(),
        })
    }

    pub fn embed(&self, seq: &PersonSequence) -> Result<MultiViewEmbedding> {
        let seq = match self.max_frames {
            Some(m) => seq.truncated(m)?,
            None => seq.clone(),
        };
        let stack = self.cache.render(&seq, &self.render)?;
        encode_sequence(&stack, &self.params)
    }
}

/// `n` enrolled embeddings per identity plus, in SVM mode, the fitted
/// classifier.
#[derive(Clone, Debug, PartialEq)]
pub struct Gallery {
    pub identities: Vec<String>,
    pub mode: GalleryMode,
    /// `embeddings[i][j]` is the j-th enrolled sequence of identity i.
    pub embeddings: Vec<Vec<MultiViewEmbedding>>,
    pub svm: Option<SvmModel>,
}

#[derive(Serialize, Deserialize)]
struct GalleryMeta {
    kind: String,
    identities: Vec<String>,
    mode: GalleryMode,
    per_identity: usize,
    views: usize,
    parts: usize,
    dim: usize,
    svm_c: Option<f64>,
}

impl Gallery {
    /// Builds a gallery from already-embedded sequences, `n` per identity.
    pub fn from_embeddings(
        identities: Vec<String>,
        embeddings: Vec<Vec<MultiViewEmbedding>>,
        mode: GalleryMode,
        svm: &SvmConfig,
    ) -> Result<Self> {
        let n = embeddings.first().map_or(0, Vec::len);
        if identities.is_empty() || n == 0 || embeddings.len() != identities.len() {
            return Err(Error::InvalidArgument("gallery needs at least one embedding per identity".into()));
        }
        let first = &embeddings[0][0];
        let (views, flat) = (first.view_count(), first.flat_dim());
        for (id, list) in identities.iter().zip(&embeddings) {
            if list.len() != n {
                return Err(Error::InsufficientGallery {
                    identity: id.clone(),
                    available: list.len(),
                    required: n,
                });
            }
            if list.iter().any(|e| e.view_count() != views || e.flat_dim() != flat || e.parts != first.parts) {
                return Err(Error::ConfigMismatch(format!("gallery embeddings of `{id}` differ in shape")));
            }
        }
        let model = match mode {
            GalleryMode::Svm => {
                let mut xs = Vec::with_capacity(identities.len() * n * views);
                let mut ys = Vec::with_capacity(xs.capacity());
                for (i, list) in embeddings.iter().enumerate() {
                    for e in list {
                        for v in &e.views {
                            xs.push(v.clone());
                            ys.push(i);
                        }
                    }
                }
                Some(SvmModel::fit(&xs, &ys, identities.len(), svm)?)
            }
            GalleryMode::NearestNeighbor => None,
        };
        Ok(Self {
            identities,
            mode,
            embeddings,
            svm: model,
        })
    }

    pub fn per_identity(&self) -> usize {
        self.embeddings[0].len()
    }

    pub fn views(&self) -> usize {
        self.embeddings[0][0].view_count()
    }

    pub fn parts(&self) -> usize {
        self.embeddings[0][0].parts
    }

    pub fn flat_dim(&self) -> usize {
        self.embeddings[0][0].flat_dim()
    }

    pub fn index_of(&self, identity: &str) -> Option<usize> {
        self.identities.iter().position(|i| i == identity)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let first = &self.embeddings[0][0];
        let meta = GalleryMeta {
            kind: "gallery".into(),
            identities: self.identities.clone(),
            mode: self.mode,
            per_identity: self.per_identity(),
            views: self.views(),
            parts: first.parts,
            dim: first.dim,
            svm_c: self.svm.as_ref().map(|s| s.c),
        };
        let mut c = TensorContainer::new(serde_json::to_value(meta).map_err(|e| Error::json(path, e))?);
        let flat: Vec<f32> = self
            .embeddings
            .iter()
            .flatten()
            .flat_map(|e| e.views.iter().flatten().map(|v| *v as f32))
            .collect();
        c.push(
            "embeddings",
            vec![self.identities.len(), self.per_identity(), self.views(), self.flat_dim()],
            flat,
        );
        if let Some(svm) = &self.svm {
            c.push("svm.weights", vec![svm.classes, svm.dim], svm.weights.iter().map(|v| *v as f32).collect());
            c.push("svm.biases", vec![svm.classes], svm.biases.iter().map(|v| *v as f32).collect());
        }
        c.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let c = TensorContainer::load(path)?;
        let meta: GalleryMeta = serde_json::from_value(c.meta.clone()).map_err(|e| Error::json(path, e))?;
        if meta.kind != "gallery" {
            return Err(Error::format(path, format!("not a gallery: {}", meta.kind)));
        }
        let flat = meta.parts * meta.dim;
        let expect = vec![meta.identities.len(), meta.per_identity, meta.views, flat];
        let (shape, data) = c
            .get("embeddings")
            .ok_or_else(|| Error::format(path, "missing embeddings tensor"))?;
        if shape != expect.as_slice() {
            return Err(Error::format(path, format!("embedding shape {shape:?}, expected {expect:?}")));
        }
        let mut chunks = data.chunks_exact(flat).map(|v| v.iter().map(|x| *x as f64).collect::<Vec<_>>());
        let embeddings = (0..meta.identities.len())
            .map(|_| {
                (0..meta.per_identity)
                    .map(|_| MultiViewEmbedding {
                        parts: meta.parts,
                        dim: meta.dim,
                        views: (0..meta.views).map(|_| chunks.next().expect("shape checked")).collect(),
                    })
                    .collect()
            })
            .collect();
        let svm = match meta.mode {
            GalleryMode::Svm => {
                let classes = meta.identities.len();
                let (ws, w) = c.get("svm.weights").ok_or_else(|| Error::format(path, "missing svm.weights"))?;
                let (bs, b) = c.get("svm.biases").ok_or_else(|| Error::format(path, "missing svm.biases"))?;
                if ws != [classes, flat] || bs != [classes] {
                    return Err(Error::format(path, "SVM tensor shapes do not match the gallery"));
                }
                Some(SvmModel {
                    classes,
                    dim: flat,
                    c: meta.svm_c.unwrap_or(1.0),
                    weights: w.iter().map(|v| *v as f64).collect(),
                    biases: b.iter().map(|v| *v as f64).collect(),
                })
            }
            GalleryMode::NearestNeighbor => None,
        };
        Ok(Self {
            identities: meta.identities,
            mode: meta.mode,
            embeddings,
            svm,
        })
    }
}

/// Enrolls the first `n` sequences by start time of every identity.
/// Identities keep the order given.
pub fn build_gallery(
    embedder: &Embedder,
    sequences: &[(String, Vec<PersonSequence>)],
    n: usize,
    mode: GalleryMode,
    svm: &SvmConfig,
) -> Result<Gallery> {
    if n == 0 {
        return Err(Error::InvalidArgument("gallery size must be at least 1".into()));
    }
    let mut identities = Vec::with_capacity(sequences.len());
    let mut embeddings = Vec::with_capacity(sequences.len());
    for (identity, seqs) in sequences {
        if seqs.len() < n {
            return Err(Error::InsufficientGallery {
                identity: identity.clone(),
                available: seqs.len(),
                required: n,
            });
        }
        let mut order: Vec<&PersonSequence> = seqs.iter().collect();
        order.sort_by(|a, b| a.timestamps()[0].total_cmp(&b.timestamps()[0]));
        let list = order[..n].iter().map(|s| embedder.embed(s)).collect::<Result<Vec<_>>>()?;
        identities.push(identity.clone());
        embeddings.push(list);
    }
    Gallery::from_embeddings(identities, embeddings, mode, svm)
}
