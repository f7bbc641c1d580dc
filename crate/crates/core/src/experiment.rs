//! End-to-end pipelines shared by the command line and the test suites:
//! synthesize, train, enroll, evaluate.

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::encoder::{Checkpoint, EncoderConfig};
use crate::error::{Error, Result};
use crate::geometry::{PersonSequence, PointCloud, RenderConfig};
use crate::inference::{
    build_gallery, majority_vote, reduce_rank_vector, score_probe, Embedder, Gallery, GalleryMode, SvmConfig,
};
use crate::io::{DatasetManifest, Split};
use crate::metrics::{evaluate, records_csv, EvalRecord, MetricsReport};
use crate::synthdata::{generate_dataset, ScenarioSpec};
use crate::training::{train, RenderCache, TrainConfig, TrainOutputs};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub gallery_n: usize,
    pub mode: GalleryMode,
    /// Truncate gallery and probe sequences to their first frames.
    pub max_frames: Option<usize>,
    pub k_set: Vec<usize>,
    pub svm: SvmConfig,
    /// Overrides the checkpoint's metric-crop setting.
    pub metric_crop: Option<bool>,
    /// Gaussian noise added to probe points, meters.
    pub probe_noise: f64,
    pub noise_seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            gallery_n: 10,
            mode: GalleryMode::Svm,
            max_frames: None,
            k_set: vec![1, 3],
            svm: SvmConfig::default(),
            metric_crop: None,
            probe_noise: 0.0,
            noise_seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct EvalOutcome {
    pub gallery: Gallery,
    pub records: Vec<EvalRecord>,
    pub report: MetricsReport,
}

/// Sequences of one split grouped by identity, identities sorted.
pub fn sequences_by_identity(manifest: &DatasetManifest, split: Split) -> Result<Vec<(String, Vec<PersonSequence>)>> {
    manifest
        .identities(split)
        .into_iter()
        .map(|id| {
            let seqs = manifest
                .entries(split)
                .filter(|e| e.identity == id)
                .map(|e| manifest.load_sequence(e))
                .collect::<Result<Vec<_>>>()?;
            Ok((id, seqs))
        })
        .collect()
}

/// Adds independent Gaussian noise to every coordinate.
pub fn with_noise(seq: &PersonSequence, sigma: f64, seed: u64) -> Result<PersonSequence> {
    if sigma <= 0.0 {
        return Ok(seq.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let frames = seq
        .frames()
        .iter()
        .map(|f| {
            let pts = f
                .points()
                .iter()
                .map(|p| p.map(|c| c + noise.sample(&mut rng)))
                .collect();
            PointCloud::new(pts)
        })
        .collect::<Result<Vec<_>>>()?;
    PersonSequence::new(seq.identity(), frames, seq.timestamps().to_vec())
}

/// Embedder for a checkpoint under an evaluation config.
pub fn embedder_for(checkpoint: &Checkpoint, cfg: &EvalConfig, cache: &RenderCache) -> Result<Embedder> {
    let mut embedder = Embedder::new(checkpoint, None)?;
    if let Some(on) = cfg.metric_crop {
        embedder.render.metric_crop = on;
    }
    embedder.max_frames = cfg.max_frames;
    embedder.cache = cache.clone();
    Ok(embedder)
}

/// Scores every probe of `manifest` against a gallery. Probe identities
/// missing from the gallery are rejected.
pub fn score_probes(
    manifest: &DatasetManifest,
    embedder: &Embedder,
    gallery: &Gallery,
    cfg: &EvalConfig,
) -> Result<Vec<EvalRecord>> {
    let mut records = Vec::new();
    for (i, entry) in manifest.entries(Split::Probe).enumerate() {
        let truth = gallery
            .index_of(&entry.identity)
            .ok_or_else(|| Error::UnknownIdentity(entry.identity.clone()))?;
        let seq = with_noise(&manifest.load_sequence(entry)?, cfg.probe_noise, (cfg.noise_seed << 32) | i as u64)?;
        let scores = score_probe(gallery, &embedder.embed(&seq)?)?;
        let vote = majority_vote(&scores);
        let rv = reduce_rank_vector(&scores, truth, gallery.identities.len());
        records.push(EvalRecord {
            probe_id: entry
                .path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default(),
            identity: entry.identity.clone(),
            role: entry.role.clone(),
            predicted: gallery.identities[vote.predicted].clone(),
            r: rv.r,
            ranks: rv.ranks,
        });
    }
    Ok(records)
}

/// Enrolls the gallery split and evaluates the probe split.
pub fn evaluate_manifest(manifest: &DatasetManifest, embedder: &Embedder, cfg: &EvalConfig) -> Result<EvalOutcome> {
    let enrolled = sequences_by_identity(manifest, Split::Gallery)?;
    let gallery = build_gallery(embedder, &enrolled, cfg.gallery_n, cfg.mode, &cfg.svm)?;
    let records = score_probes(manifest, embedder, &gallery, cfg)?;
    let report = evaluate(&records, &cfg.k_set, Some(&manifest.roles()))?;
    Ok(EvalOutcome {
        gallery,
        records,
        report,
    })
}

/// Writes `gallery.json`, `report.json`, `report.txt`, `records.csv` and
/// `per_identity.csv` into `dir`.
pub fn write_eval_outputs(outcome: &EvalOutcome, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    outcome.gallery.save(&dir.join("gallery.json"))?;
    outcome.report.save_json(&dir.join("report.json"))?;
    let files = [
        ("report.txt", outcome.report.to_table()),
        ("records.csv", records_csv(&outcome.records)),
        ("per_identity.csv", outcome.report.per_identity_csv()),
    ];
    for (name, text) in files {
        let path = dir.join(name);
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

/// Dataset, training and evaluation settings of one full run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub scenario: ScenarioSpec,
    pub train: TrainConfig,
    pub encoder: EncoderConfig,
    pub eval: EvalConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl PipelineConfig {
    /// Single-core scale: 10 identities × 40 sequences, 4 views of 32×32,
    /// base width 8, 4 parts of dimension 32, P = K = 4, 1500 iterations.
    pub fn desk() -> Self {
        let render = RenderConfig {
            views: 4,
            image_size: 32,
            ..RenderConfig::default()
        };
        Self {
            scenario: ScenarioSpec::default(),
            train: TrainConfig {
                p: 4,
                k: 4,
                iterations: 1500,
                lr_decay_every: 1000,
                min_frames: 10,
                max_frames: 12,
                render,
                ..TrainConfig::default()
            },
            encoder: EncoderConfig {
                base_channels: 8,
                part_count: 4,
                embed_dim: 32,
                class_count: 0,
                image_height: 32,
                image_width: 32,
            },
            eval: EvalConfig::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct PipelineOutcome {
    pub manifest: DatasetManifest,
    pub checkpoint: Checkpoint,
    pub eval: EvalOutcome,
    pub dir: PathBuf,
}

/// Generates the dataset under `dir/dataset` (reusing an existing one),
/// trains, evaluates, and writes `config.json`, `checkpoint.json`,
/// `loss.csv` and the evaluation outputs into `dir`.
pub fn run_pipeline(cfg: &PipelineConfig, dir: &Path) -> Result<PipelineOutcome> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let config_path = dir.join("config.json");
    let mut json = serde_json::to_vec_pretty(cfg).map_err(|e| Error::json(&config_path, e))?;
    json.push(b'\n');
    fs::write(&config_path, json).map_err(|e| Error::io(&config_path, e))?;

    let manifest = prepare_dataset(&cfg.scenario, &dir.join("dataset"))?;
    let cache = RenderCache::on_disk(dir.join("cache"));
    let mut encoder = cfg.encoder;
    encoder.class_count = manifest.identities(Split::Train).len();
    let checkpoint = train(
        &manifest,
        &cfg.train,
        encoder,
        &cache,
        &TrainOutputs {
            loss_log: Some(dir.join("loss.csv")),
            checkpoint_dir: None,
        },
    )?;
    checkpoint.save(&dir.join("checkpoint.json"))?;
    let embedder = embedder_for(&checkpoint, &cfg.eval, &cache)?;
    let eval = evaluate_manifest(&manifest, &embedder, &cfg.eval)?;
    write_eval_outputs(&eval, dir)?;
    Ok(PipelineOutcome {
        manifest,
        checkpoint,
        eval,
        dir: dir.to_path_buf(),
    })
}

/// Loads the dataset at `root` if its recorded scenario matches, otherwise
/// generates it.
pub fn prepare_dataset(spec: &ScenarioSpec, root: &Path) -> Result<DatasetManifest> {
    let recorded = fs::read(root.join("scenario.json"))
        .ok()
        .and_then(|b| serde_json::from_slice::<ScenarioSpec>(&b).ok());
    if recorded.as_ref() == Some(spec) && root.join("manifest.json").exists() {
        return DatasetManifest::load(&root.join("manifest.json"));
    }
    generate_dataset(spec, root)
}
