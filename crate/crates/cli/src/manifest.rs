use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use koed::json::{to_json_pretty, write_atomic};

/// Record of one command run, written next to its outputs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub version: &'static str,
    pub threads: usize,
    pub config: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<Artifact>,
    pub outputs: Vec<Artifact>,
    pub elapsed_seconds: f64,
}

#[derive(Debug, Serialize)]
pub struct Artifact {
    pub path: String,
    /// Absent for built-in inputs.
    pub sha256: Option<String>,
}

pub fn sha256_file(path: &Path) -> std::io::Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(format!("{:x}", Sha256::digest(bytes)))
}

pub struct Recorder {
    started: Instant,
    command: &'static str,
    inputs: Vec<PathBuf>,
    builtin: Vec<String>,
    outputs: Vec<PathBuf>,
    seeds: BTreeMap<String, u64>,
}

impl Recorder {
    pub fn new(command: &'static str) -> Self {
        Self {
            started: Instant::now(),
            command,
            inputs: Vec::new(),
            builtin: Vec::new(),
            outputs: Vec::new(),
            seeds: BTreeMap::new(),
        }
    }

    pub fn input(&mut self, path: &Path) {
        self.inputs.push(path.to_path_buf());
    }

    pub fn builtin_input(&mut self, name: &str) {
        self.builtin.push(name.to_string());
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.to_path_buf());
    }

    pub fn seed(&mut self, name: &str, value: u64) {
        self.seeds.insert(name.to_string(), value);
    }

    /// Hashes the artifacts and writes the manifest to `path`.
    pub fn finish(self, config: serde_json::Value, path: &Path) -> koed::Result<()> {
        let hashed = |paths: &[PathBuf]| -> koed::Result<Vec<Artifact>> {
            paths
                .iter()
                .map(|p| {
                    Ok(Artifact {
                        path: p.display().to_string(),
                        sha256: Some(sha256_file(p)?),
                    })
                })
                .collect()
        };
        let mut inputs = hashed(&self.inputs)?;
        inputs.extend(self.builtin.iter().map(|name| Artifact {
            path: format!("builtin:{name}"),
            sha256: None,
        }));
        let manifest = RunManifest {
            command: self.command.to_string(),
            argv: std::env::args().collect(),
            version: env!("CARGO_PKG_VERSION"),
            threads: rayon::current_num_threads(),
            config,
            seeds: self.seeds,
            inputs,
            outputs: hashed(&self.outputs)?,
            elapsed_seconds: self.started.elapsed().as_secs_f64(),
        };
        write_atomic(path, to_json_pretty(&manifest)?.as_bytes())
    }
}

/// `<file>.manifest.json` next to a single output file.
pub fn beside(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    path.with_file_name(name)
}
