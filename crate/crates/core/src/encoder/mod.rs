//! Part-based sequence encoder.
//!
//! Every frame of every view goes through a shared residual backbone; each
//! view's frame features are max-pooled over time, split into horizontal
//! strips that are max-pooled again, and projected per part to the embedding
//! space. A BN neck and bias-free classifier sit on top for training.

mod backbone;
mod params;

use std::ops::Range;

pub use params::{Checkpoint, EncoderConfig, ModelParams, Tensor, TensorKind};

use crate::error::{Error, Result};
use crate::geometry::DepthViewStack;
use crate::nn::{
    batchnorm_rows_backward, batchnorm_rows_infer, batchnorm_rows_train, update_running, BnCache,
    FeatureMap, Real,
};

pub(crate) use backbone::BackboneTrace;

/// V per-view embeddings, each `part_count × embed_dim` flattened part-major.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiViewEmbedding {
    pub parts: usize,
    pub dim: usize,
    pub views: Vec<Vec<f64>>,
}

impl MultiViewEmbedding {
    pub fn view_count(&self) -> usize {
        self.views.len()
    }

    pub fn flat_dim(&self) -> usize {
        self.parts * self.dim
    }
}

/// Mean over parts of the Euclidean distance between part embeddings.
pub fn part_distance<T: Real>(a: &[T], b: &[T], parts: usize) -> T {
    debug_assert_eq!(a.len(), b.len());
    let dim = a.len() / parts;
    let mut total = T::zero();
    for p in 0..parts {
        let mut sq = T::zero();
        for j in p * dim..(p + 1) * dim {
            let d = a[j] - b[j];
            sq += d * d;
        }
        total += sq.sqrt();
    }
    total / T::of(parts as f64)
}

/// Converts HWC byte images into a channel-major float batch in `[0, 1]`.
pub fn images_to_input<T: Real>(images: &[&[u8]], height: usize, width: usize) -> FeatureMap<T> {
    let n = images.len();
    let plane = height * width;
    let mut map = FeatureMap::zeros(3, n, height, width);
    let scale = T::of(1.0 / 255.0);
    for (i, img) in images.iter().enumerate() {
        assert_eq!(img.len(), plane * 3, "image size");
        for c in 0..3 {
            let dst = &mut map.data[(c * n + i) * plane..][..plane];
            for (px, d) in dst.iter_mut().enumerate() {
                *d = T::of(img[px * 3 + c] as f64) * scale;
            }
        }
    }
    map
}

fn check_image(config: &EncoderConfig, height: usize, width: usize) -> Result<()> {
    if height != config.image_height || width != config.image_width {
        return Err(Error::ConfigMismatch(format!(
            "image {height}x{width} does not match encoder input {}x{}",
            config.image_height, config.image_width
        )));
    }
    Ok(())
}

/// Backbone feature map (`C × h × w`, as a single-image batch) of one frame.
pub fn encode_frame<T: Real>(
    image: &[u8],
    height: usize,
    width: usize,
    params: &ModelParams<T>,
) -> Result<FeatureMap<T>> {
    check_image(&params.config, height, width)?;
    if image.len() != height * width * 3 {
        return Err(Error::ConfigMismatch(format!(
            "image buffer has {} bytes, expected {}",
            image.len(),
            height * width * 3
        )));
    }
    let x = images_to_input(&[image], height, width);
    Ok(backbone::forward_infer(params, &x))
}

/// Temporal max over a run of frames followed by horizontal strip max
/// pooling and the per-part projection. `frames` indexes the batch of `map`.
fn pool_and_project<T: Real>(
    map: &FeatureMap<T>,
    frames: Range<usize>,
    params: &ModelParams<T>,
) -> Vec<T> {
    let cfg = &params.config;
    let (c_n, h, w) = (map.channels, map.height, map.width);
    let (parts, d) = (cfg.part_count, cfg.embed_dim);
    let strip = h / parts;
    let plane = h * w;
    // Temporal max first.
    let mut temporal = vec![T::neg_infinity(); c_n * plane];
    for c in 0..c_n {
        let dst = &mut temporal[c * plane..(c + 1) * plane];
        for f in frames.clone() {
            let src = &map.data[(c * map.count + f) * plane..][..plane];
            for (t, s) in dst.iter_mut().zip(src) {
                if *s > *t {
                    *t = *s;
                }
            }
        }
    }
    let weights = params.data(params.layout().parts);
    let mut out = vec![T::zero(); parts * d];
    let mut pooled = vec![T::zero(); c_n];
    for p in 0..parts {
        for c in 0..c_n {
            let rows = &temporal[c * plane + p * strip * w..c * plane + (p + 1) * strip * w];
            pooled[c] = rows.iter().copied().fold(T::neg_infinity(), T::max);
        }
        for j in 0..d {
            let wrow = &weights[(p * d + j) * c_n..(p * d + j + 1) * c_n];
            out[p * d + j] = wrow.iter().zip(&pooled).map(|(a, b)| *a * *b).sum();
        }
    }
    out
}

/// Embeds every view of a rendered sequence with a frozen model.
pub fn encode_sequence<T: Real>(stack: &DepthViewStack, params: &ModelParams<T>) -> Result<MultiViewEmbedding> {
    if stack.frames == 0 {
        return Err(Error::EmptySequence);
    }
    let size = stack.image_size();
    check_image(&params.config, size, size)?;
    let mut views = Vec::with_capacity(stack.views());
    for v in 0..stack.views() {
        let images: Vec<&[u8]> = (0..stack.frames).map(|l| stack.image(v, l)).collect();
        let x = images_to_input(&images, size, size);
        let feats = backbone::forward_infer(params, &x);
        let emb = pool_and_project(&feats, 0..stack.frames, params);
        views.push(emb.into_iter().map(|v| v.f64()).collect());
    }
    Ok(MultiViewEmbedding {
        parts: params.config.part_count,
        dim: params.config.embed_dim,
        views,
    })
}

/// Per-view class logits through the BN neck (stored statistics) and the
/// bias-free classifier.
pub fn classify<T: Real>(embedding: &MultiViewEmbedding, params: &ModelParams<T>) -> Result<Vec<Vec<f64>>> {
    let cfg = &params.config;
    if embedding.flat_dim() != cfg.flat_dim() {
        return Err(Error::ConfigMismatch(format!(
            "embedding dimension {} does not match model {}",
            embedding.flat_dim(),
            cfg.flat_dim()
        )));
    }
    let l = params.layout();
    let flat = cfg.flat_dim();
    let gamma = params.data(l.neck_gamma);
    let mean = params.data(l.neck_mean);
    let var = params.data(l.neck_var);
    let cls = params.data(l.classifier);
    let mut out = Vec::with_capacity(embedding.views.len());
    for view in &embedding.views {
        // One sample per row: treat each feature as its own row of length 1.
        let mut x: Vec<T> = view.iter().map(|v| T::of(*v)).collect();
        batchnorm_rows_infer(&mut x, flat, gamma, None, mean, var);
        let logits = (0..cfg.class_count)
            .map(|k| {
                cls[k * flat..(k + 1) * flat]
                    .iter()
                    .zip(&x)
                    .map(|(a, b)| (*a * *b).f64())
                    .sum()
            })
            .collect();
        out.push(logits);
    }
    Ok(out)
}

/// Training forward state for a batch of sequence groups.
pub struct TrainForward<T> {
    backbone: BackboneTrace<T>,
    groups: usize,
    /// `G × P × C` pooled features.
    pooled: Vec<T>,
    /// Flat index into the backbone output of each pooled maximum.
    pool_arg: Vec<u32>,
    /// `G × D` pre-neck embeddings.
    pub embeddings: Vec<T>,
    /// `D × G` post-neck features.
    neck_out: Vec<T>,
    neck: BnCache<T>,
    /// `G × classes` logits.
    pub logits: Vec<T>,
}

impl<T: Real> TrainForward<T> {
    pub fn group_count(&self) -> usize {
        self.groups
    }

    pub fn embedding(&self, g: usize) -> &[T] {
        let d = self.embeddings.len() / self.groups;
        &self.embeddings[g * d..(g + 1) * d]
    }
}

/// Training-mode forward. `groups[g]` is the range of batch frames that
/// form sequence-view group `g`.
pub fn forward_train<T: Real>(
    params: &ModelParams<T>,
    input: FeatureMap<T>,
    groups: &[Range<usize>],
) -> Result<TrainForward<T>> {
    let cfg = params.config;
    check_image(&cfg, input.height, input.width)?;
    if groups.iter().any(|g| g.is_empty() || g.end > input.count) {
        return Err(Error::EmptySequence);
    }
    let trace = backbone::forward_train(params, input);
    let map = &trace.out;
    let l = params.layout();
    let (c_n, h, w) = (map.channels, map.height, map.width);
    let (parts, d) = (cfg.part_count, cfg.embed_dim);
    let strip = h / parts;
    let plane = h * w;
    let g_n = groups.len();
    let flat = cfg.flat_dim();

    let mut pooled = vec![T::zero(); g_n * parts * c_n];
    let mut pool_arg = vec![0u32; g_n * parts * c_n];
    for (g, frames) in groups.iter().enumerate() {
        for p in 0..parts {
            for c in 0..c_n {
                let mut best = T::neg_infinity();
                let mut arg = 0usize;
                for f in frames.clone() {
                    let base = (c * map.count + f) * plane + p * strip * w;
                    for (k, v) in map.data[base..base + strip * w].iter().enumerate() {
                        if *v > best {
                            best = *v;
                            arg = base + k;
                        }
                    }
                }
                let idx = (g * parts + p) * c_n + c;
                pooled[idx] = best;
                pool_arg[idx] = arg as u32;
            }
        }
    }

    let weights = params.data(l.parts);
    let mut embeddings = vec![T::zero(); g_n * flat];
    for g in 0..g_n {
        for p in 0..parts {
            let f = &pooled[(g * parts + p) * c_n..(g * parts + p + 1) * c_n];
            for j in 0..d {
                let wrow = &weights[(p * d + j) * c_n..(p * d + j + 1) * c_n];
                embeddings[g * flat + p * d + j] = wrow.iter().zip(f).map(|(a, b)| *a * *b).sum();
            }
        }
    }

    let mut neck_out = vec![T::zero(); flat * g_n];
    for g in 0..g_n {
        for i in 0..flat {
            neck_out[i * g_n + g] = embeddings[g * flat + i];
        }
    }
    let neck = batchnorm_rows_train(&mut neck_out, flat, params.data(l.neck_gamma), None, false);

    let classes = cfg.class_count;
    let cls = params.data(l.classifier);
    let mut logits = vec![T::zero(); g_n * classes];
    for g in 0..g_n {
        for k in 0..classes {
            let mut acc = T::zero();
            for i in 0..flat {
                acc += cls[k * flat + i] * neck_out[i * g_n + g];
            }
            logits[g * classes + k] = acc;
        }
    }

    Ok(TrainForward {
        backbone: trace,
        groups: g_n,
        pooled,
        pool_arg,
        embeddings,
        neck_out,
        neck,
        logits,
    })
}

/// Backward through heads and backbone, returning gradients aligned with
/// `params.tensors` (empty vectors for buffers).
pub fn backward_train<T: Real>(
    params: &ModelParams<T>,
    fwd: &TrainForward<T>,
    d_embeddings: &[T],
    d_logits: &[T],
) -> Vec<Vec<T>> {
    let cfg = params.config;
    let l = params.layout();
    let mut grads = params.zero_grads();
    let g_n = fwd.groups;
    let flat = cfg.flat_dim();
    let classes = cfg.class_count;
    let (parts, d) = (cfg.part_count, cfg.embed_dim);
    let c_n = cfg.feature_channels();

    // Classifier.
    let cls = params.data(l.classifier);
    let mut d_neck = vec![T::zero(); flat * g_n];
    {
        let dcls = &mut grads[l.classifier];
        for g in 0..g_n {
            for k in 0..classes {
                let dl = d_logits[g * classes + k];
                if dl == T::zero() {
                    continue;
                }
                for i in 0..flat {
                    dcls[k * flat + i] += dl * fwd.neck_out[i * g_n + g];
                    d_neck[i * g_n + g] += dl * cls[k * flat + i];
                }
            }
        }
    }
    // BN neck (no shift).
    {
        let mut dg = std::mem::take(&mut grads[l.neck_gamma]);
        batchnorm_rows_backward(&mut d_neck, &fwd.neck, params.data(l.neck_gamma), &mut dg, None);
        grads[l.neck_gamma] = dg;
    }
    let mut d_emb = d_embeddings.to_vec();
    for g in 0..g_n {
        for i in 0..flat {
            d_emb[g * flat + i] += d_neck[i * g_n + g];
        }
    }

    // Part projections and pooling.
    let weights = params.data(l.parts);
    let map = &fwd.backbone.out;
    let mut dmap = map.same_shape();
    {
        let dw = &mut grads[l.parts];
        for g in 0..g_n {
            for p in 0..parts {
                let base = (g * parts + p) * c_n;
                let f = &fwd.pooled[base..base + c_n];
                for j in 0..d {
                    let de = d_emb[g * flat + p * d + j];
                    if de == T::zero() {
                        continue;
                    }
                    let row = (p * d + j) * c_n;
                    for c in 0..c_n {
                        dw[row + c] += de * f[c];
                        dmap.data[fwd.pool_arg[base + c] as usize] += de * weights[row + c];
                    }
                }
            }
        }
    }
    backbone::backward(params, &fwd.backbone, dmap, &mut grads);
    grads
}

/// Folds this forward's batch statistics into the running BN estimates.
pub fn update_running_stats<T: Real>(params: &mut ModelParams<T>, fwd: &TrainForward<T>) {
    backbone::update_running_stats(params, &fwd.backbone);
    let l = params.layout();
    let (left, right) = params.tensors.split_at_mut(l.neck_var);
    update_running(&fwd.neck, fwd.groups, &mut left[l.neck_mean].data, &mut right[0].data);
}
