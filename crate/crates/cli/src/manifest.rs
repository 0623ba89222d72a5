//! Run manifests: config echo plus SHA-256 of every input and output.

use std::collections::BTreeMap;
use std::path::Path;

use fss_core::config::RunConfig;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::{write, CliResult};

pub fn sha256(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

#[derive(Serialize)]
pub struct Manifest {
    command: String,
    tool_version: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    config: Option<RunConfig>,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
    notes: BTreeMap<String, String>,
}

/// File name only, so manifests do not depend on where a run happened.
fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

impl Manifest {
    pub fn new(command: &str, config: Option<&RunConfig>) -> Self {
        Self {
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config: config.cloned(),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            notes: BTreeMap::new(),
        }
    }

    pub fn input(&mut self, name: &str, hash: &str) {
        let name = file_name(Path::new(name));
        self.inputs.insert(name, hash.to_string());
    }

    pub fn output(&mut self, path: &Path, text: &str) {
        self.outputs.insert(file_name(path), sha256(text));
    }

    pub fn note(&mut self, key: &str, value: &str) {
        self.notes.insert(key.to_string(), value.to_string());
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        write(path, &(serde_json::to_string_pretty(self).expect("manifest serializes") + "\n"))
    }

    /// Writes `<out>.manifest.json`.
    pub fn write_beside(&self, out: &Path) -> CliResult<()> {
        let mut name = out.as_os_str().to_owned();
        name.push(".manifest.json");
        self.write(Path::new(&name))
    }
}
