//! `run.json`: what was run, with which settings, producing which files.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::Value;

#[derive(Serialize)]
pub struct Manifest {
    pub command: String,
    pub argv: Vec<String>,
    pub version: &'static str,
    pub parallel_build: bool,
    pub seeds: Vec<u64>,
    /// Effective settings after merging the config file and flags.
    pub config: Value,
    pub outputs: Vec<String>,
    pub started: String,
    pub finished: String,
}

pub struct Run {
    pub dir: PathBuf,
    command: String,
    config: Value,
    seeds: Vec<u64>,
    outputs: Vec<String>,
    started: String,
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

impl Run {
    pub fn start(dir: &Path, command: &str, config: &impl Serialize, seeds: &[u64]) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            command: command.to_string(),
            config: serde_json::to_value(config)?,
            seeds: seeds.to_vec(),
            outputs: Vec::new(),
            started: now(),
        })
    }

    pub fn write(&mut self, name: &str, contents: impl AsRef<[u8]>) -> Result<PathBuf> {
        let path = self.dir.join(name);
        fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
        self.outputs.push(name.to_string());
        Ok(path)
    }

    pub fn finish(self) -> Result<()> {
        let manifest = Manifest {
            command: self.command,
            argv: std::env::args().collect(),
            version: env!("CARGO_PKG_VERSION"),
            parallel_build: larm::par::PARALLEL,
            seeds: self.seeds,
            config: self.config,
            outputs: self.outputs,
            started: self.started,
            finished: now(),
        };
        let path = self.dir.join("run.json");
        fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")
            .with_context(|| format!("writing {}", path.display()))
    }
}
