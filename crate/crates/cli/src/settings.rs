//! Config files merged with command-line overrides.
//!
//! A config file is JSON or `key = value` lines (see `larm::config`). Flags
//! are applied on top by dotted path, so `--steps 1000` sets
//! `train.total_steps` whatever the file said.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use larm::agent::Task;
use larm::embed::{Embedder, HashEmbedder, RemoteEmbedder, DEFAULT_DIM};
use larm::fixtures;
use larm::gridworld::{TaskConfig, TaskKind};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

pub struct Layered {
    map: Map<String, Value>,
}

impl Layered {
    pub fn from_file(path: Option<&Path>) -> Result<Self> {
        let map = match path {
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                larm::config::parse_map(&text).with_context(|| format!("parsing config {}", p.display()))?
            }
            None => Map::new(),
        };
        Ok(Self { map })
    }

    /// Sets `path` (dot-separated) when `value` is present.
    pub fn set<T: Serialize>(&mut self, path: &str, value: Option<T>) -> &mut Self {
        let Some(value) = value else { return self };
        let value = serde_json::to_value(value).expect("flag values serialize");
        let mut keys = path.split('.').peekable();
        let mut map = &mut self.map;
        while let Some(k) = keys.next() {
            if keys.peek().is_none() {
                map.insert(k.to_string(), value);
                break;
            }
            let entry = map
                .entry(k.to_string())
                .or_insert_with(|| Value::Object(Map::new()));
            if !entry.is_object() {
                *entry = Value::Object(Map::new());
            }
            map = entry.as_object_mut().expect("just made an object");
        }
        self
    }

    pub fn build<T: DeserializeOwned>(&self) -> Result<T> {
        larm::config::from_map(self.map.clone()).context("invalid configuration")
    }
}

/// Which task to run and where its artifacts come from.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskSettings {
    /// A task kind with bundled artifacts (`doorkey`, ...) or a bundled
    /// compositional fixture (`suite_1`, `zs_a`, ...).
    pub name: String,
    pub size: Option<usize>,
    /// Environment config file; requires `rm`, `labeling` and `instructions`.
    pub task_config: Option<PathBuf>,
    pub rm: Option<PathBuf>,
    pub labeling: Option<PathBuf>,
    pub instructions: Option<PathBuf>,
}

impl Default for TaskSettings {
    fn default() -> Self {
        Self {
            name: "doorkey".to_string(),
            size: None,
            task_config: None,
            rm: None,
            labeling: None,
            instructions: None,
        }
    }
}

pub const DEFAULT_SIZE: usize = 5;

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn text_or(path: &Option<PathBuf>, bundled: Option<&str>, what: &str) -> Result<String> {
    match (path, bundled) {
        (Some(p), _) => read(p),
        (None, Some(t)) => Ok(t.to_string()),
        (None, None) => bail!("no bundled {what} for this task; pass --{what}"),
    }
}

impl TaskSettings {
    pub fn load(&self, embedder: &dyn Embedder) -> Result<Task> {
        let (name, config, bundled) = if let Some(path) = &self.task_config {
            let mut config = TaskConfig::parse(&read(path)?)?;
            if let Some(size) = self.size {
                config.size = size;
            }
            let name = path
                .file_stem()
                .map(|s| s.to_string_lossy().trim_end_matches(".task").to_string())
                .unwrap_or_else(|| "task".into());
            (name, config, None)
        } else if let Ok(kind) = self.name.parse::<TaskKind>() {
            let config = TaskConfig::new(kind, self.size.unwrap_or(DEFAULT_SIZE));
            (self.name.clone(), config, fixtures::task_texts(kind))
        } else if let Some(f) = fixtures::compose_fixture(&self.name) {
            if self.size.is_some() {
                bail!("`{}` has a fixed layout; size cannot be overridden", f.name);
            }
            let config = TaskConfig::parse(f.task_json)?;
            (f.name.to_string(), config, Some((f.rm, f.labeling, f.instructions)))
        } else {
            bail!("unknown task `{}`", self.name);
        };
        let rm = text_or(&self.rm, bundled.map(|b| b.0), "rm")?;
        let lbl = text_or(&self.labeling, bundled.map(|b| b.1), "labeling")?;
        let instr = text_or(&self.instructions, bundled.map(|b| b.2), "instructions")?;
        Ok(Task::from_texts(&name, config, &rm, &lbl, &instr, embedder)?)
    }
}

/// Bundled task by name, with default size and artifacts.
pub fn named_task(name: &str, embedder: &dyn Embedder) -> Result<Task> {
    TaskSettings {
        name: name.to_string(),
        ..TaskSettings::default()
    }
    .load(embedder)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedderSettings {
    pub dim: usize,
    /// OpenAI-compatible endpoint; the hashing embedder is used when absent.
    pub endpoint: Option<String>,
    pub model: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: Option<String>,
    pub timeout_secs: u64,
}

impl Default for EmbedderSettings {
    fn default() -> Self {
        Self {
            dim: DEFAULT_DIM,
            endpoint: None,
            model: "default".to_string(),
            api_key_env: None,
            timeout_secs: 60,
        }
    }
}

impl EmbedderSettings {
    pub fn build(&self) -> Result<Box<dyn Embedder>> {
        Ok(match &self.endpoint {
            None => Box::new(HashEmbedder { dim: self.dim }),
            Some(url) => Box::new(RemoteEmbedder::new(
                url.clone(),
                self.model.clone(),
                self.api_key_env.as_deref(),
                self.dim,
                Duration::from_secs(self.timeout_secs),
            )?),
        })
    }
}
