mod config;
mod run;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use pcreid_core::encoder::Checkpoint;
use pcreid_core::experiment::{embedder_for, evaluate_manifest, prepare_dataset, write_eval_outputs};
use pcreid_core::imprints::{
    accumulate_imprint, compose, load_scene, object_overlays, project_background, save_scene, GridSpec,
    IMPRINT_PALETTE, OBJECT_PALETTE,
};
use pcreid_core::inference::{Embedder, Gallery, GalleryMode};
use pcreid_core::io::{DatasetManifest, Split};
use pcreid_core::synthdata::{generate_crossing_scenario, read_truth, room_scene, ROOM_OBJECTS};
use pcreid_core::tracking::{
    frame_accuracy, naive_labels, naive_track, read_stream, reid_track, write_labeled_tracks, FrameLabels,
};
use pcreid_core::training::{train, RenderCache, TrainOutputs};

use config::RunConfig;
use run::RunDir;

#[derive(Parser, Debug)]
#[command(name = "pcreid", version, about = "Point-cloud person re-identification toolkit")]
struct Cli {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory for this run instead of a fresh timestamped one
    /// under $PCREID_OUTPUT_ROOT.
    #[arg(long, global = true)]
    run_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a labeled dataset or a crossing scenario.
    Synth(SynthArgs),
    /// Render and cache the depth views of a dataset.
    Render(RenderArgs),
    /// Train the sequence encoder.
    Train(TrainArgs),
    /// Enroll the gallery split and evaluate the probe split.
    Eval(EvalArgs),
    /// Track a detection stream.
    Track(TrackArgs),
    /// Draw activity imprints of labeled tracks.
    Imprint(ImprintArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Toggle {
    On,
    Off,
}

impl Toggle {
    fn on(self) -> bool {
        self == Toggle::On
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Svm,
    Nn,
}

impl From<ModeArg> for GalleryMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Svm => GalleryMode::Svm,
            ModeArg::Nn => GalleryMode::NearestNeighbor,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum TrackMode {
    Naive,
    Reid,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    identities: Option<usize>,
    #[arg(long)]
    sequences: Option<usize>,
    #[arg(long)]
    twin_pairs: Option<usize>,
    /// Position noise, meters.
    #[arg(long)]
    noise: Option<f64>,
    /// Write a crossing scenario stream instead of a dataset.
    #[arg(long)]
    crossing: bool,
    /// Disable the detection dropout of the crossing scenario.
    #[arg(long)]
    no_dropout: bool,
}

#[derive(Args, Debug)]
struct RenderArgs {
    /// Dataset manifest.
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, value_enum)]
    metric_crop: Option<Toggle>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    metric_crop: Option<Toggle>,
    /// Reuse rendered stacks from this directory.
    #[arg(long)]
    cache: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    gallery_n: Option<usize>,
    #[arg(long)]
    max_frames: Option<usize>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long, value_enum)]
    metric_crop: Option<Toggle>,
    /// Gaussian noise added to probe points, meters.
    #[arg(long)]
    probe_noise: Option<f64>,
    #[arg(long)]
    cache: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrackArgs {
    /// Detection stream (JSON lines).
    #[arg(long)]
    stream: PathBuf,
    /// Per-frame true identities, for accuracy.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "reid")]
    mode: TrackMode,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Saved gallery; built from `--dataset` when absent.
    #[arg(long)]
    gallery: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    gallery_n: Option<usize>,
    #[arg(long, value_enum)]
    gallery_mode: Option<ModeArg>,
    /// Assignment gate, meters.
    #[arg(long)]
    gate: Option<f64>,
}

#[derive(Args, Debug)]
struct ImprintArgs {
    #[arg(long)]
    stream: PathBuf,
    /// Labeled tracks written by `track`.
    #[arg(long)]
    labels: PathBuf,
    /// Labeled scene for the background and object outlines.
    #[arg(long)]
    scene: Option<PathBuf>,
    /// Dataset manifest mapping identities to roles.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Keep only identities with these roles.
    #[arg(long = "role")]
    roles: Vec<String>,
    /// Keep only these identities.
    #[arg(long = "identity")]
    identities: Vec<String>,
    #[arg(long)]
    cell: Option<f64>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let name = match &cli.command {
        Command::Synth(_) => "synth",
        Command::Render(_) => "render",
        Command::Train(_) => "train",
        Command::Eval(_) => "eval",
        Command::Track(_) => "track",
        Command::Imprint(_) => "imprint",
    };
    match &cli.command {
        Command::Synth(a) => cfg.apply_synth(a.seed, a.identities, a.sequences, a.twin_pairs, a.noise),
        Command::Render(a) => cfg.apply_metric_crop(a.metric_crop.map(Toggle::on)),
        Command::Train(a) => {
            cfg.apply_metric_crop(a.metric_crop.map(Toggle::on));
            cfg.apply_train(a.iterations, a.seed);
        }
        Command::Eval(a) => {
            cfg.apply_eval(a.gallery_n, a.max_frames, a.mode.map(Into::into), a.probe_noise);
            cfg.apply_metric_crop(a.metric_crop.map(Toggle::on));
        }
        Command::Track(a) => {
            cfg.apply_eval(a.gallery_n, None, a.gallery_mode.map(Into::into), None);
            if let Some(g) = a.gate {
                cfg.tracker.gate = g;
            }
        }
        Command::Imprint(a) => {
            if let Some(c) = a.cell {
                cfg.imprint_cell = c;
            }
        }
    }
    let run = RunDir::create(cli.run_dir.as_deref(), name, &cfg)?;
    log::info!("run directory {}", run.path.display());
    let outputs = match cli.command {
        Command::Synth(a) => synth(&cfg, &run, &a)?,
        Command::Render(a) => render(&cfg, &run, &a)?,
        Command::Train(a) => train_cmd(&cfg, &run, &a)?,
        Command::Eval(a) => eval(&cfg, &run, &a)?,
        Command::Track(a) => track(&cfg, &run, &a)?,
        Command::Imprint(a) => imprint(&cfg, &run, &a)?,
    };
    run.finish(&outputs)?;
    Ok(())
}

fn synth(cfg: &RunConfig, run: &RunDir, a: &SynthArgs) -> Result<serde_json::Value> {
    if a.crossing {
        let mut spec = cfg.pipeline.scenario.clone();
        let mut crossing = spec.crossing.clone().unwrap_or_default();
        if a.no_dropout {
            crossing.dropout_frames = 0;
        }
        spec.crossing = Some(crossing);
        let scenario = generate_crossing_scenario(&spec)?;
        let dir = run.path.join("crossing");
        scenario.save(&dir)?;
        save_scene(&dir.join("scene.json"), &room_scene(spec.seed)?, &ROOM_OBJECTS)?;
        let hash = run::tree_hash(&dir)?;
        println!("crossing scenario {} ({} frames), hash {hash}", dir.display(), scenario.frames.len());
        return Ok(json!({ "crossing": dir, "hash": hash }));
    }
    let dir = run.path.join("dataset");
    let manifest = prepare_dataset(&cfg.pipeline.scenario, &dir)?;
    let hash = run::tree_hash(&dir)?;
    println!("dataset {} ({} sequences), hash {hash}", dir.display(), manifest.sequences.len());
    Ok(json!({ "dataset": dir, "sequences": manifest.sequences.len(), "hash": hash }))
}

fn cache_for(run: &RunDir, given: Option<&Path>) -> RenderCache {
    RenderCache::on_disk(given.map(Path::to_path_buf).unwrap_or_else(|| run.path.join("cache")))
}

fn render(cfg: &RunConfig, run: &RunDir, a: &RenderArgs) -> Result<serde_json::Value> {
    let manifest = DatasetManifest::load(&a.dataset)?;
    let cache = cache_for(run, None);
    let render = cfg.pipeline.train.render;
    for entry in &manifest.sequences {
        cache.render(&manifest.load_sequence(entry)?, &render)?;
    }
    println!("rendered {} sequences into {}", manifest.sequences.len(), run.path.join("cache").display());
    Ok(json!({ "cache": run.path.join("cache"), "sequences": manifest.sequences.len() }))
}

fn train_cmd(cfg: &RunConfig, run: &RunDir, a: &TrainArgs) -> Result<serde_json::Value> {
    let manifest = DatasetManifest::load(&a.dataset)?;
    let mut encoder = cfg.pipeline.encoder;
    encoder.class_count = manifest.identities(Split::Train).len();
    let outputs = TrainOutputs {
        loss_log: Some(run.path.join("loss.csv")),
        checkpoint_dir: None,
    };
    let ckpt = train(&manifest, &cfg.pipeline.train, encoder, &cache_for(run, a.cache.as_deref()), &outputs)?;
    let path = run.path.join("checkpoint.json");
    ckpt.save(&path)?;
    println!("checkpoint {}", path.display());
    Ok(json!({ "checkpoint": path }))
}

fn eval(cfg: &RunConfig, run: &RunDir, a: &EvalArgs) -> Result<serde_json::Value> {
    let manifest = DatasetManifest::load(&a.dataset)?;
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let embedder = embedder_for(&ckpt, &cfg.pipeline.eval, &cache_for(run, a.cache.as_deref()))?;
    let outcome = evaluate_manifest(&manifest, &embedder, &cfg.pipeline.eval)?;
    write_eval_outputs(&outcome, &run.path)?;
    print!("{}", outcome.report.to_table());
    Ok(json!({
        "report": run.path.join("report.json"),
        "gallery": run.path.join("gallery.json"),
        "macro_accuracy": outcome.report.macro_accuracy,
        "micro_accuracy": outcome.report.micro,
    }))
}

fn track(cfg: &RunConfig, run: &RunDir, a: &TrackArgs) -> Result<serde_json::Value> {
    let frames = read_stream(&a.stream)?;
    let truth = a.truth.as_deref().map(read_truth).transpose()?;
    let (labels, assigned, extra): (FrameLabels, _, _) = match a.mode {
        TrackMode::Naive => {
            let (tracker, assigned) = naive_track(&frames, cfg.tracker);
            let Some(truth) = &truth else {
                bail!("naive tracking labels tracks by their first detection and needs --truth");
            };
            let labels = naive_labels(&tracker, &assigned, truth);
            (labels, assigned, json!({ "tracks": tracker.tracks.len() }))
        }
        TrackMode::Reid => {
            let ckpt_path = a.checkpoint.as_deref().context("--checkpoint is required for reid tracking")?;
            let ckpt = Checkpoint::load(ckpt_path)?;
            let embedder = embedder_for(&ckpt, &cfg.pipeline.eval, &cache_for(run, None))?;
            let gallery = load_or_build_gallery(cfg, &embedder, a)?;
            let out = reid_track(&frames, &embedder, &gallery, cfg.tracker, cfg.chunk)?;
            let extra = json!({
                "tracks": out.tracker.tracks.len(),
                "chunks": out.stats.chunks,
                "dropped_runs": out.stats.dropped_runs,
                "dropped_frames": out.stats.dropped_frames,
                "skipped_chunks": out.skipped,
            });
            (out.labels, out.assigned, extra)
        }
    };
    let path = run.path.join("labeled.jsonl");
    write_labeled_tracks(&path, &frames, &assigned, &labels)?;
    let accuracy = truth.as_ref().map(|t| frame_accuracy(&labels, t, None));
    if let Some(acc) = accuracy {
        println!("per-frame identity accuracy {acc:.4}");
    }
    let summary = json!({ "labels": path, "accuracy": accuracy, "details": extra });
    let summary_path = run.path.join("summary.json");
    fs::write(&summary_path, serde_json::to_vec_pretty(&summary)?).with_context(|| summary_path.display().to_string())?;
    Ok(summary)
}

fn load_or_build_gallery(cfg: &RunConfig, embedder: &Embedder, a: &TrackArgs) -> Result<Gallery> {
    if let Some(path) = &a.gallery {
        return Ok(Gallery::load(path)?);
    }
    let dataset = a.dataset.as_deref().context("reid tracking needs --gallery or --dataset")?;
    let manifest = DatasetManifest::load(dataset)?;
    let enrolled = pcreid_core::experiment::sequences_by_identity(&manifest, Split::Gallery)?;
    let e = &cfg.pipeline.eval;
    Ok(pcreid_core::inference::build_gallery(embedder, &enrolled, e.gallery_n, e.mode, &e.svm)?)
}

#[derive(serde::Deserialize)]
struct LabeledLine {
    detections: Vec<LabeledDetection>,
}

#[derive(serde::Deserialize)]
struct LabeledDetection {
    identity: Option<String>,
}

fn imprint(cfg: &RunConfig, run: &RunDir, a: &ImprintArgs) -> Result<serde_json::Value> {
    let frames = read_stream(&a.stream)?;
    let text = fs::read_to_string(&a.labels).with_context(|| a.labels.display().to_string())?;
    let labels: Vec<LabeledLine> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect::<Result<_, _>>()
        .with_context(|| a.labels.display().to_string())?;
    if labels.len() != frames.len() {
        bail!("{} label lines for {} stream frames", labels.len(), frames.len());
    }
    let roles: BTreeMap<String, String> = match &a.dataset {
        Some(p) => DatasetManifest::load(p)?.roles(),
        None => BTreeMap::new(),
    };
    let mut clouds: BTreeMap<String, Vec<_>> = BTreeMap::new();
    for (frame, line) in frames.iter().zip(&labels) {
        for (det, lab) in frame.detections.iter().zip(&line.detections) {
            let Some(id) = &lab.identity else { continue };
            if !a.identities.is_empty() && !a.identities.contains(id) {
                continue;
            }
            if !a.roles.is_empty() && !roles.get(id).is_some_and(|r| a.roles.contains(r)) {
                continue;
            }
            clouds.entry(id.clone()).or_default().push(det.cloud.clone());
        }
    }
    let scene = a.scene.as_deref().map(load_scene).transpose()?;
    let all_points = frames
        .iter()
        .flat_map(|f| f.detections.iter().flat_map(|d| d.cloud.points()))
        .chain(scene.iter().flat_map(|(s, _)| s.cloud.points()));
    let spec = GridSpec::covering(all_points, cfg.imprint_cell, 0.25)?;
    let grids: Vec<(String, _, [u8; 3])> = clouds
        .iter()
        .enumerate()
        .map(|(k, (id, c))| {
            let label = match roles.get(id) {
                Some(r) => format!("{id} ({r})"),
                None => id.clone(),
            };
            (label, accumulate_imprint(c, spec), IMPRINT_PALETTE[k % IMPRINT_PALETTE.len()])
        })
        .collect();
    let layers: Vec<(String, _, [u8; 3])> = grids.iter().map(|(l, g, c)| (l.clone(), g, *c)).collect();
    let (background, objects) = match &scene {
        Some((s, names)) => {
            let names: Vec<&str> = names.iter().map(String::as_str).collect();
            (Some(project_background(s, spec)), object_overlays(s, spec, &names, &OBJECT_PALETTE))
        }
        None => (None, Vec::new()),
    };
    let image = compose(background.as_ref(), &layers, &objects, spec)?;
    let path = run.path.join("imprint.ppm");
    image.save(&path)?;
    println!("imprint {} ({} identities)", path.display(), layers.len());
    Ok(json!({ "image": path, "legend": path.with_extension("json"), "identities": clouds.keys().collect::<Vec<_>>() }))
}
