//! On-disk artifacts shared by the subcommands.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use rlam::toy::{BigramPolicy, TabularValue, ToyCorpus, ToyVocabulary};
use rlam::versioned;
use serde::{Deserialize, Serialize};

pub const POLICY_KIND: &str = "policy";
pub const VALUE_KIND: &str = "value";
pub const TASK_KIND: &str = "toy-task";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyCheckpoint {
    pub step: usize,
    pub policy: BigramPolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueCheckpoint {
    pub step: usize,
    pub value: TabularValue,
}

/// Everything evaluation needs from a training run besides checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskFile {
    pub seed: u64,
    pub vocab: ToyVocabulary,
    pub held_out: ToyCorpus,
}

pub fn save_policy(path: &Path, ckpt: &PolicyCheckpoint) -> rlam::Result<()> {
    versioned::write(path, POLICY_KIND, VERSION, ckpt)
}

pub fn load_policy(path: &Path) -> Result<PolicyCheckpoint> {
    versioned::read(path, POLICY_KIND, VERSION).with_context(|| format!("loading checkpoint {}", path.display()))
}

pub fn save_value(path: &Path, ckpt: &ValueCheckpoint) -> rlam::Result<()> {
    versioned::write(path, VALUE_KIND, VERSION, ckpt)
}

pub fn save_task(path: &Path, task: &TaskFile) -> rlam::Result<()> {
    versioned::write(path, TASK_KIND, VERSION, task)
}

pub fn load_task(path: &Path) -> Result<TaskFile> {
    versioned::read(path, TASK_KIND, VERSION).with_context(|| format!("loading task {}", path.display()))
}

/// First line of a JSON-lines file.
pub fn jsonl_header(kind: &str) -> String {
    format!("{{\"format\":\"rlam {kind}\",\"version\":{VERSION}}}\n")
}

/// First line of a CSV file; readers skip it as a comment.
pub fn csv_header(kind: &str) -> String {
    format!("# rlam {kind} v{VERSION}\n")
}

pub fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

/// Provenance record written once into every output directory. Its
/// timestamps are the only run-to-run difference in a deterministic run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub version: u32,
    pub command: String,
    pub build: String,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    pub inputs: BTreeMap<String, PathBuf>,
    pub outputs: Vec<String>,
    pub started_unix: u64,
    pub finished_unix: u64,
}

impl RunManifest {
    pub fn start(command: &str, seed: Option<u64>, config: serde_json::Value) -> Self {
        Self {
            format: "rlam manifest".into(),
            version: VERSION,
            command: command.into(),
            build: format!(
                "rlam-cli {}{}",
                env!("CARGO_PKG_VERSION"),
                option_env!("RLAM_BUILD_ID").map(|id| format!("+{id}")).unwrap_or_default()
            ),
            seed,
            config,
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
            started_unix: unix_now(),
            finished_unix: 0,
        }
    }

    pub fn input(&mut self, name: &str, path: &Path) {
        self.inputs.insert(name.into(), path.to_owned());
    }

    pub fn finish(mut self, dir: &Path) -> Result<()> {
        self.outputs.sort();
        self.finished_unix = unix_now();
        write_file(&dir.join("manifest.json"), serde_json::to_string_pretty(&self)? + "\n")
    }
}
