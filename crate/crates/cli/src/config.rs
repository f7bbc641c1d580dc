use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use pcreid_core::experiment::PipelineConfig;
use pcreid_core::imprints::DEFAULT_CELL;
use pcreid_core::inference::GalleryMode;
use pcreid_core::tracking::{ChunkConfig, TrackerConfig};

/// Everything a command may read. Values come from the defaults, then the
/// `--config` file, then command-line flags.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    #[serde(flatten)]
    pub pipeline: PipelineConfig,
    pub tracker: TrackerConfig,
    pub chunk: ChunkConfig,
    pub imprint_cell: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            pipeline: PipelineConfig::desk(),
            tracker: TrackerConfig::default(),
            chunk: ChunkConfig::default(),
            imprint_cell: DEFAULT_CELL,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let file: Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        Self::merged(file).with_context(|| format!("parsing {}", path.display()))
    }

    /// Defaults with every value present in `file` replaced, recursively.
    pub fn merged(file: Value) -> Result<Self> {
        let mut base = serde_json::to_value(Self::default())?;
        merge(&mut base, file);
        Ok(serde_json::from_value(base)?)
    }

    pub fn apply_synth(
        &mut self,
        seed: Option<u64>,
        identities: Option<usize>,
        sequences: Option<usize>,
        twin_pairs: Option<usize>,
        noise: Option<f64>,
    ) {
        let s = &mut self.pipeline.scenario;
        set(&mut s.seed, seed);
        set(&mut s.identities, identities);
        set(&mut s.sequences_per_identity, sequences);
        set(&mut s.twin_pairs, twin_pairs);
        set(&mut s.noise_sigma, noise);
    }

    pub fn apply_train(&mut self, iterations: Option<usize>, seed: Option<u64>) {
        set(&mut self.pipeline.train.iterations, iterations);
        set(&mut self.pipeline.train.seed, seed);
    }

    pub fn apply_metric_crop(&mut self, on: Option<bool>) {
        if let Some(on) = on {
            self.pipeline.train.render.metric_crop = on;
            self.pipeline.eval.metric_crop = Some(on);
        }
    }

    pub fn apply_eval(
        &mut self,
        gallery_n: Option<usize>,
        max_frames: Option<usize>,
        mode: Option<GalleryMode>,
        probe_noise: Option<f64>,
    ) {
        let e = &mut self.pipeline.eval;
        set(&mut e.gallery_n, gallery_n);
        if max_frames.is_some() {
            e.max_frames = max_frames;
        }
        set(&mut e.mode, mode);
        set(&mut e.probe_noise, probe_noise);
    }
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_values_fill_defaults() {
        let file = serde_json::json!({"eval": {"gallery_n": 3}, "train": {"iterations": 9}, "imprint_cell": 0.1});
        let cfg = RunConfig::merged(file).unwrap();
        let desk = PipelineConfig::desk();
        assert_eq!(cfg.pipeline.eval.gallery_n, 3);
        assert_eq!(cfg.imprint_cell, 0.1);
        assert_eq!(cfg.pipeline.train.iterations, 9);
        assert_eq!(cfg.pipeline.train.render, desk.train.render);
        assert_eq!(cfg.pipeline.train.p, desk.train.p);
    }

    #[test]
    fn flags_override_file() {
        let mut cfg = RunConfig::merged(serde_json::json!({"eval": {"gallery_n": 3}})).unwrap();
        cfg.apply_eval(Some(5), None, None, None);
        assert_eq!(cfg.pipeline.eval.gallery_n, 5);
        assert_eq!(cfg.pipeline.eval.max_frames, None);
    }

    #[test]
    fn round_trip() {
        let cfg = RunConfig::default();
        let back: RunConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
    }
}
