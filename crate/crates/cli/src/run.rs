use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde_json::{json, Value};

use pcreid_core::io::content_hash;

use crate::config::RunConfig;

pub const OUTPUT_ROOT_VAR: &str = "PCREID_OUTPUT_ROOT";

pub struct RunDir {
    pub path: PathBuf,
    record: Value,
}

impl RunDir {
    /// Creates the run directory: the given one, or `{command}-{unix secs}`
    /// under `$PCREID_OUTPUT_ROOT` (default `runs`).
    pub fn create(given: Option<&Path>, command: &str, cfg: &RunConfig) -> Result<Self> {
        let path = match given {
            Some(p) => p.to_path_buf(),
            None => {
                let root = std::env::var_os(OUTPUT_ROOT_VAR).map(PathBuf::from).unwrap_or_else(|| "runs".into());
                let secs = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
                let mut path = root.join(format!("{command}-{secs}"));
                let mut n = 1;
                while path.exists() {
                    path = root.join(format!("{command}-{secs}-{n}"));
                    n += 1;
                }
                path
            }
        };
        fs::create_dir_all(&path).with_context(|| format!("creating {}", path.display()))?;
        let config = serde_json::to_value(cfg)?;
        let record = json!({
            "command": command,
            "argv": std::env::args().collect::<Vec<_>>(),
            "config": config,
            "seed": cfg.pipeline.scenario.seed,
            "train_seed": cfg.pipeline.train.seed,
            "git": git_describe(),
            "config_hash": content_hash(serde_json::to_string(&config)?.as_bytes()),
        });
        Ok(Self { path, record })
    }

    /// Writes `run.json` with the command's outputs and their hash.
    pub fn finish(mut self, outputs: &Value) -> Result<()> {
        self.record["outputs"] = outputs.clone();
        self.record["output_hash"] = json!(tree_hash(&self.path)?);
        let path = self.path.join("run.json");
        fs::write(&path, serde_json::to_vec_pretty(&self.record)?).with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }
}

fn git_describe() -> String {
    Command::new("git")
        .args(["describe", "--always", "--dirty"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .map(|o| String::from_utf8_lossy(&o.stdout).trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".into())
}

/// Hash over the relative paths and contents of every file under `dir`,
/// excluding `run.json` and render caches.
pub fn tree_hash(dir: &Path) -> Result<String> {
    let mut files = Vec::new();
    collect(dir, dir, &mut files)?;
    files.sort();
    let mut buf = Vec::new();
    for rel in files {
        let bytes = fs::read(dir.join(&rel)).with_context(|| format!("reading {}", rel.display()))?;
        buf.extend_from_slice(rel.to_string_lossy().as_bytes());
        buf.push(0);
        buf.extend_from_slice(content_hash(&bytes).as_bytes());
        buf.push(b'\n');
    }
    Ok(content_hash(&buf))
}

fn collect(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let path = entry?.path();
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        if path.is_dir() {
            if name != "cache" {
                collect(root, &path, out)?;
            }
        } else if !(dir == root && name == "run.json") {
            out.push(path.strip_prefix(root)?.to_path_buf());
        }
    }
    Ok(())
}
