//! Run manifests: what was run, on which inputs, producing which outputs.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use anyhow::Result;
use serde::{Deserialize, Serialize};

use crate::output::{read_file, sha256_hex, write_atomic};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileRecord {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Complete,
    Partial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanRecord {
    pub name: String,
    pub completed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub manifest_version: u32,
    pub tool: String,
    pub command: String,
    pub command_line: Vec<String>,
    /// SHA-256 of the effective configuration serialized as JSON.
    pub config_digest: String,
    pub config: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<FileRecord>,
    pub outputs: Vec<FileRecord>,
    pub artifact_versions: BTreeMap<String, String>,
    pub wall_time_secs: f64,
    pub status: RunStatus,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub plans: Vec<PlanRecord>,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&read_file(path)?)?)
    }
}

pub fn artifact_versions() -> BTreeMap<String, String> {
    [
        ("fairgap-cli", env!("CARGO_PKG_VERSION").to_string()),
        ("fairgap-core", fairgap::VERSION.to_string()),
        ("model_format", fairgap::model::MODEL_FORMAT_VERSION.to_string()),
        ("report_schema", fairgap::metrics::REPORT_SCHEMA_VERSION.to_string()),
        ("manifest", MANIFEST_VERSION.to_string()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

/// Accumulates manifest fields while a command runs.
pub struct Recorder {
    command: String,
    command_line: Vec<String>,
    config: serde_json::Value,
    seeds: BTreeMap<String, u64>,
    inputs: Vec<FileRecord>,
    outputs: Vec<FileRecord>,
    plans: Vec<PlanRecord>,
    started: Instant,
}

impl Recorder {
    pub fn new(command: &str, command_line: &[String], config: serde_json::Value) -> Self {
        Recorder {
            command: command.to_string(),
            command_line: command_line.to_vec(),
            config,
            seeds: BTreeMap::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            plans: Vec::new(),
            started: Instant::now(),
        }
    }

    pub fn seed(&mut self, name: &str, seed: u64) {
        self.seeds.insert(name.to_string(), seed);
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        let digest = sha256_hex(&read_file(path)?);
        self.inputs.push(FileRecord {
            path: path.display().to_string(),
            sha256: digest,
        });
        Ok(())
    }

    /// Write an output atomically and record it.
    pub fn write(&mut self, path: &Path, bytes: &[u8]) -> Result<()> {
        write_atomic(path, bytes)?;
        self.outputs.push(FileRecord {
            path: path.display().to_string(),
            sha256: sha256_hex(bytes),
        });
        Ok(())
    }

    pub fn record_output(&mut self, record: FileRecord) {
        self.outputs.push(record);
    }

    pub fn plan(&mut self, record: PlanRecord) {
        self.plans.push(record);
    }

    pub fn finish(self, path: &Path) -> Result<RunManifest> {
        let config_json = serde_json::to_vec(&self.config)?;
        let status = if self.plans.iter().all(|p| p.completed) {
            RunStatus::Complete
        } else {
            RunStatus::Partial
        };
        let manifest = RunManifest {
            manifest_version: MANIFEST_VERSION,
            tool: "fairgap".into(),
            command: self.command,
            command_line: self.command_line,
            config_digest: sha256_hex(&config_json),
            config: self.config,
            seeds: self.seeds,
            inputs: self.inputs,
            outputs: self.outputs,
            artifact_versions: artifact_versions(),
            wall_time_secs: self.started.elapsed().as_secs_f64(),
            status,
            plans: self.plans,
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        write_atomic(path, text.as_bytes())?;
        Ok(manifest)
    }
}
