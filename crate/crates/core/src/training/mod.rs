//! Encoder training: P×K sampling, augmentation, BatchAll triplet plus
//! cross-entropy, and plain SGD with weight decay and a step schedule.

mod augment;
mod loss;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::ops::Range;
use std::path::{Path, PathBuf};

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use augment::{augment, sample_erase_rect, AugmentConfig, Rect};
pub use loss::{batch_loss, batchall_triplet, total_loss, LossTerms};

use crate::encoder::{
    backward_train, forward_train, images_to_input, update_running_stats, Checkpoint, EncoderConfig,
    ModelParams, TensorKind,
};
use crate::error::{Error, Result};
use crate::geometry::{render_sequence, DepthViewStack, PersonSequence, RenderConfig};
use crate::io::{content_hash, encode_sequence, read_stack, write_stack, DatasetManifest, Split};
use crate::nn::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub margin: f64,
    pub lambda: f64,
    pub p: usize,
    pub k: usize,
    pub iterations: usize,
    pub lr: f64,
    pub lr_decay_every: usize,
    pub lr_decay_factor: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub min_frames: usize,
    pub max_frames: usize,
    /// Zero disables periodic checkpoints.
    pub checkpoint_every: usize,
    pub augment: AugmentConfig,
    pub render: RenderConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            margin: 0.2,
            lambda: 0.1,
            p: 8,
            k: 8,
            iterations: 40_000,
            lr: 0.1,
            lr_decay_every: 10_000,
            lr_decay_factor: 0.1,
            weight_decay: 5e-4,
            seed: 0,
            min_frames: 10,
            max_frames: 45,
            checkpoint_every: 0,
            augment: AugmentConfig::default(),
            render: RenderConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.p < 2 || self.k < 2 {
            return Err(Error::InvalidArgument(format!(
                "P and K must both be at least 2 (got P={}, K={})",
                self.p, self.k
            )));
        }
        if self.margin <= 0.0 || !self.margin.is_finite() {
            return Err(Error::InvalidArgument(format!("margin must be positive, got {}", self.margin)));
        }
        if self.min_frames == 0 || self.min_frames > self.max_frames {
            return Err(Error::InvalidArgument(format!(
                "frame window [{}, {}] is empty",
                self.min_frames, self.max_frames
            )));
        }
        self.render.validate()
    }

    /// Step-decayed learning rate at `iteration`.
    pub fn lr_at(&self, iteration: usize) -> f64 {
        let steps = if self.lr_decay_every == 0 {
            0
        } else {
            iteration / self.lr_decay_every
        };
        self.lr * self.lr_decay_factor.powi(steps as i32)
    }
}

/// Rendered training sequences grouped by class.
#[derive(Clone, Debug)]
pub struct TrainSet {
    /// Class index → identity label.
    pub identities: Vec<String>,
    pub sequences: Vec<TrainSequence>,
}

#[derive(Clone, Debug)]
pub struct TrainSequence {
    pub class: usize,
    pub stack: DepthViewStack,
}

impl TrainSet {
    /// Sequence indices per class.
    fn by_class(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.identities.len()];
        for (i, s) in self.sequences.iter().enumerate() {
            out[s.class].push(i);
        }
        out
    }
}

/// One batch slot: a contiguous frame window of one sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BatchItem {
    pub class: usize,
    pub sequence: usize,
    pub start: usize,
    pub len: usize,
}

/// P identities × K sequences, identity-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub items: Vec<BatchItem>,
}

impl Batch {
    pub fn labels(&self) -> Vec<usize> {
        self.items.iter().map(|i| i.class).collect()
    }
}

/// Draws P identities without replacement and K sequences of each (with
/// replacement only when fewer than K exist), each cut to a random
/// contiguous window of `[min_frames, min(max_frames, L)]` frames.
pub fn sample_batch<R: Rng>(set: &TrainSet, cfg: &TrainConfig, rng: &mut R) -> Result<Batch> {
    let by_class = set.by_class();
    let eligible: Vec<usize> = (0..by_class.len()).filter(|&c| !by_class[c].is_empty()).collect();
    if eligible.len() < cfg.p {
        return Err(Error::DatasetTooSmall(format!(
            "{} identities with training sequences, P = {}",
            eligible.len(),
            cfg.p
        )));
    }
    let mut items = Vec::with_capacity(cfg.p * cfg.k);
    for pick in sample_indices(rng, eligible.len(), cfg.p) {
        let class = eligible[pick];
        let pool = &by_class[class];
        let chosen: Vec<usize> = if pool.len() >= cfg.k {
            sample_indices(rng, pool.len(), cfg.k).into_iter().map(|i| pool[i]).collect()
        } else {
            (0..cfg.k).map(|_| pool[rng.random_range(0..pool.len())]).collect()
        };
        for sequence in chosen {
            let frames = set.sequences[sequence].stack.frames;
            let hi = cfg.max_frames.min(frames);
            let lo = cfg.min_frames.min(hi);
            let len = rng.random_range(lo..=hi);
            let start = rng.random_range(0..=frames - len);
            items.push(BatchItem {
                class,
                sequence,
                start,
                len,
            });
        }
    }
    Ok(Batch { items })
}

/// Assembles the network input for a batch (sample-major, then view, then
/// frame) and the frame range of every sample-view group.
pub fn batch_input<T: Real, R: Rng>(
    set: &TrainSet,
    batch: &Batch,
    augmentation: &AugmentConfig,
    rng: &mut R,
) -> (crate::nn::FeatureMap<T>, Vec<Range<usize>>) {
    let first = &set.sequences[batch.items[0].sequence].stack;
    let (views, size) = (first.views(), first.image_size());
    let mut images: Vec<Vec<u8>> = Vec::new();
    let mut groups = Vec::with_capacity(batch.items.len() * views);
    for item in &batch.items {
        let stack = &set.sequences[item.sequence].stack;
        for v in 0..views {
            let begin = images.len();
            for l in item.start..item.start + item.len {
                let mut img = stack.image(v, l).to_vec();
                augment(&mut img, size, size, augmentation, rng);
                images.push(img);
            }
            groups.push(begin..images.len());
        }
    }
    let refs: Vec<&[u8]> = images.iter().map(Vec::as_slice).collect();
    (images_to_input(&refs, size, size), groups)
}

/// `θ ← θ − lr·(g + wd·θ)` on every learnable tensor.
pub fn sgd_step<T: Real>(params: &mut ModelParams<T>, grads: &[Vec<T>], lr: f64, weight_decay: f64) {
    let (lr, wd) = (T::of(lr), T::of(weight_decay));
    for (t, g) in params.tensors.iter_mut().zip(grads) {
        if t.kind != TensorKind::Learnable {
            continue;
        }
        for (w, d) in t.data.iter_mut().zip(g) {
            *w -= lr * (*d + wd * *w);
        }
    }
}

/// One optimizer iteration on a prepared batch; returns the loss terms
/// measured before the update.
pub fn train_step(
    params: &mut ModelParams<f32>,
    input: crate::nn::FeatureMap<f32>,
    groups: &[Range<usize>],
    labels: &[usize],
    views: usize,
    cfg: &TrainConfig,
    iteration: usize,
) -> Result<LossTerms> {
    let fwd = forward_train(params, input, groups)?;
    let c = params.config;
    let (terms, d_emb, d_logits) =
        batch_loss(&fwd, labels, views, c.part_count, c.class_count, cfg.margin, cfg.lambda)?;
    let lr = cfg.lr_at(iteration);
    if !terms.is_finite() {
        return Err(Error::NonFiniteLoss {
            iteration,
            lr,
            triplet: terms.triplet,
            ce: terms.ce,
        });
    }
    let grads = backward_train(params, &fwd, &d_emb, &d_logits);
    update_running_stats(params, &fwd);
    sgd_step(params, &grads, lr, cfg.weight_decay);
    Ok(terms)
}

/// Where training writes its side outputs.
#[derive(Clone, Debug, Default)]
pub struct TrainOutputs {
    pub loss_log: Option<PathBuf>,
    pub checkpoint_dir: Option<PathBuf>,
}

/// Runs the full loop on pre-rendered sequences.
pub fn train_on(
    set: &TrainSet,
    cfg: &TrainConfig,
    encoder: EncoderConfig,
    outputs: &TrainOutputs,
) -> Result<Checkpoint> {
    cfg.validate()?;
    crate::nn::retain_freed_memory();
    if encoder.class_count != set.identities.len() {
        return Err(Error::ConfigMismatch(format!(
            "encoder has {} classes, training set has {} identities",
            encoder.class_count,
            set.identities.len()
        )));
    }
    let size = cfg.render.image_size;
    if encoder.image_height != size || encoder.image_width != size {
        return Err(Error::ConfigMismatch(format!(
            "render size {size} does not match encoder input {}x{}",
            encoder.image_height, encoder.image_width
        )));
    }
    if let Some(s) = set.sequences.iter().find(|s| s.stack.meta != cfg.render) {
        return Err(Error::ConfigMismatch(format!(
            "training stack rendered with {:?}, expected {:?}",
            s.stack.meta, cfg.render
        )));
    }
    let mut params = ModelParams::<f32>::init(encoder, cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_ba7c);
    let mut log = match &outputs.loss_log {
        Some(path) => {
            let f = File::create(path).map_err(|e| Error::io(path, e))?;
            let mut w = BufWriter::new(f);
            writeln!(w, "iteration,lr,triplet,ce,total").map_err(|e| Error::io(path, e))?;
            Some((path.clone(), w))
        }
        None => None,
    };
    if let Some(dir) = &outputs.checkpoint_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let views = cfg.render.views;
    for it in 0..cfg.iterations {
        let batch = sample_batch(set, cfg, &mut rng)?;
        let (input, groups) = batch_input::<f32, _>(set, &batch, &cfg.augment, &mut rng);
        let terms = train_step(&mut params, input, &groups, &batch.labels(), views, cfg, it)?;
        if let Some((path, w)) = log.as_mut() {
            writeln!(w, "{it},{},{},{},{}", cfg.lr_at(it), terms.triplet, terms.ce, terms.total)
                .map_err(|e| Error::io(&*path, e))?;
        }
        if it % 100 == 0 {
            log::info!(
                "iteration {it}: triplet {:.4} ce {:.4} total {:.4}",
                terms.triplet,
                terms.ce,
                terms.total
            );
        }
        let done = it + 1;
        if let Some(dir) = &outputs.checkpoint_dir {
            if cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 && done < cfg.iterations {
                Checkpoint {
                    params: params.clone(),
                    render: Some(cfg.render),
                    iteration: Some(done),
                }
                .save(&dir.join(format!("checkpoint_{done:06}.json")))?;
            }
        }
    }
    if let Some((path, mut w)) = log {
        w.flush().map_err(|e| Error::io(&path, e))?;
    }
    let ckpt = Checkpoint {
        params,
        render: Some(cfg.render),
        iteration: Some(cfg.iterations),
    };
    if let Some(dir) = &outputs.checkpoint_dir {
        ckpt.save(&dir.join("checkpoint.json"))?;
    }
    Ok(ckpt)
}

/// Renders sequences once, optionally caching stacks on disk under a key
/// derived from the sequence content and the render settings.
#[derive(Clone, Debug, Default)]
pub struct RenderCache {
    pub dir: Option<PathBuf>,
}

impl RenderCache {
    pub fn on_disk(dir: impl Into<PathBuf>) -> Self {
        Self { dir: Some(dir.into()) }
    }

    pub fn key(seq: &PersonSequence, cfg: &RenderConfig) -> String {
        let mut bytes = encode_sequence(seq);
        bytes.extend_from_slice(&serde_json::to_vec(cfg).expect("render config serializes"));
        content_hash(&bytes)
    }

    pub fn render(&self, seq: &PersonSequence, cfg: &RenderConfig) -> Result<DepthViewStack> {
        let Some(dir) = &self.dir else {
            return render_sequence(seq, &cfg.ring(), cfg.metric_crop);
        };
        let path = dir.join(format!("{}.pdvs", Self::key(seq, cfg)));
        if path.exists() {
            return read_stack(&path);
        }
        let stack = render_sequence(seq, &cfg.ring(), cfg.metric_crop)?;
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_stack(&path, &stack)?;
        Ok(stack)
    }
}

/// Loads and renders the train split of a manifest. Classes follow the
/// sorted identity order.
pub fn load_train_set(manifest: &DatasetManifest, render: &RenderConfig, cache: &RenderCache) -> Result<TrainSet> {
    let identities = manifest.identities(Split::Train);
    if identities.is_empty() {
        return Err(Error::DatasetTooSmall("train split is empty".into()));
    }
    let mut sequences = Vec::new();
    for entry in manifest.entries(Split::Train) {
        let seq = manifest.load_sequence(entry)?;
        let class = identities.binary_search(&entry.identity).expect("identity listed");
        sequences.push(TrainSequence {
            class,
            stack: cache.render(&seq, render)?,
        });
    }
    Ok(TrainSet { identities, sequences })
}

/// Trains on the manifest's train split.
pub fn train(
    manifest: &DatasetManifest,
    cfg: &TrainConfig,
    encoder: EncoderConfig,
    cache: &RenderCache,
    outputs: &TrainOutputs,
) -> Result<Checkpoint> {
    let set = load_train_set(manifest, &cfg.render, cache)?;
    train_on(&set, cfg, encoder, outputs)
}

/// Loads a JSON training config; absent fields take their defaults.
pub fn load_train_config(path: &Path) -> Result<TrainConfig> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::json(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_set(identities: usize, per_identity: &[usize], frames: usize) -> TrainSet {
        let meta = RenderConfig {
            views: 2,
            image_size: 16,
            ..RenderConfig::default()
        };
        let mut sequences = Vec::new();
        for c in 0..identities {
            for s in 0..per_identity[c] {
                let data = (0..2 * frames * 16 * 16 * 3)
                    .map(|i| ((i * 7 + c * 31 + s * 3) % 253) as u8)
                    .collect();
                sequences.push(TrainSequence {
                    class: c,
                    stack: DepthViewStack { meta, frames, data },
                });
            }
        }
        TrainSet {
            identities: (0..identities).map(|i| format!("id{i:02}")).collect(),
            sequences,
        }
    }

    #[test]
    fn lr_schedule() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.lr_at(0), 0.1);
        assert_eq!(cfg.lr_at(9_999), 0.1);
        assert!((cfg.lr_at(10_000) - 0.01).abs() < 1e-15);
        assert!((cfg.lr_at(20_000) - 0.001).abs() < 1e-15);
    }

    #[test]
    fn batch_shape_and_determinism() {
        let set = toy_set(13, &[5; 13], 30);
        let cfg = TrainConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let b = sample_batch(&set, &cfg, &mut rng).unwrap();
        assert_eq!(b.items.len(), 64);
        let mut labels = b.labels();
        labels.dedup();
        assert_eq!(labels.len(), 8);
        for item in &b.items {
            assert!((10..=30).contains(&item.len));
            assert!(item.start + item.len <= 30);
            assert_eq!(set.sequences[item.sequence].class, item.class);
        }
        let again = sample_batch(&set, &cfg, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        assert_eq!(b, again);
    }

    #[test]
    fn small_identity_sampled_with_replacement() {
        let set = toy_set(8, &[3, 9, 9, 9, 9, 9, 9, 9], 12);
        let cfg = TrainConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let b = sample_batch(&set, &cfg, &mut rng).unwrap();
        let small: Vec<_> = b.items.iter().filter(|i| i.class == 0).collect();
        assert_eq!(small.len(), 8);
        assert!(small.iter().all(|i| i.sequence < 3));
        // Identities with enough sequences never repeat one.
        let mut big: Vec<_> = b.items.iter().filter(|i| i.class == 1).map(|i| i.sequence).collect();
        big.sort();
        big.dedup();
        assert_eq!(big.len(), 8);
    }

    #[test]
    fn too_few_identities() {
        let set = toy_set(3, &[4; 3], 12);
        let err = sample_batch(&set, &TrainConfig::default(), &mut ChaCha8Rng::seed_from_u64(0));
        assert!(matches!(err, Err(Error::DatasetTooSmall(_))));
    }

    #[test]
    fn sgd_without_decay_or_gradient_is_noop() {
        let cfg = EncoderConfig {
            base_channels: 4,
            part_count: 2,
            embed_dim: 8,
            class_count: 2,
            image_height: 16,
            image_width: 16,
        };
        let mut p = ModelParams::<f32>::init(cfg, 1).unwrap();
        let before = p.clone();
        let grads = p.zero_grads();
        sgd_step(&mut p, &grads, 0.1, 0.0);
        assert_eq!(p, before);
        sgd_step(&mut p, &grads, 0.1, 5e-4);
        assert_ne!(p, before);
    }

    #[test]
    fn invalid_configs() {
        let mut cfg = TrainConfig {
            p: 1,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
        cfg.p = 2;
        cfg.margin = 0.0;
        assert!(cfg.validate().is_err());
    }
}
