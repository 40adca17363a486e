use std::path::{Path, PathBuf};
use std::time::Instant;

use odecausal::io::{write_atomic, write_json};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Record of one invocation; the `config` echo has every default filled in.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub inputs: Vec<String>,
    pub config: Value,
    pub seed: Option<u64>,
    pub output_dir: String,
    pub outputs: Vec<String>,
    pub tool_version: String,
    pub wall_clock_seconds: f64,
    pub status: String,
    pub exit_code: u8,
    pub error: Option<String>,
}

/// Accumulates the manifest while a command runs.
pub struct Run {
    command: &'static str,
    out: PathBuf,
    inputs: Vec<String>,
    config: Value,
    seed: Option<u64>,
    outputs: Vec<String>,
    started: Instant,
}

impl Run {
    pub fn start(command: &'static str, out: PathBuf) -> Self {
        Self {
            command,
            out,
            inputs: Vec::new(),
            config: Value::Null,
            seed: None,
            outputs: Vec::new(),
            started: Instant::now(),
        }
    }

    pub fn out(&self) -> &Path {
        &self.out
    }

    pub fn input(&mut self, path: &Path) {
        self.inputs.push(path.display().to_string());
    }

    pub fn config(&mut self, config: Value) {
        self.config = config;
    }

    pub fn seed(&mut self, seed: u64) {
        self.seed = Some(seed);
    }

    /// Path of a file in the output directory, recorded as an output.
    pub fn output(&mut self, name: &str) -> PathBuf {
        self.outputs.push(name.to_string());
        self.out.join(name)
    }

    pub fn write_text(&mut self, name: &str, text: &str) -> Result<(), CliError> {
        let path = self.output(name);
        write_atomic(&path, text.as_bytes()).map_err(CliError::from)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let path = self.output(name);
        write_json(&path, value).map_err(CliError::from)
    }

    pub fn finish(self, error: Option<String>, exit_code: u8) -> odecausal::Result<()> {
        let manifest = RunManifest {
            command: self.command.to_string(),
            inputs: self.inputs,
            config: self.config,
            seed: self.seed,
            output_dir: self.out.display().to_string(),
            outputs: self.outputs,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            wall_clock_seconds: self.started.elapsed().as_secs_f64(),
            status: if error.is_none() { "ok" } else { "failed" }.to_string(),
            exit_code,
            error,
        };
        write_json(&self.out.join(MANIFEST_FILE), &manifest)
    }
}
