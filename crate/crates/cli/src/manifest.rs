//! Run manifest: everything needed to reproduce a run's outputs.

use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::CliError;

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes through a sibling temporary file so readers never see a partial file.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, contents).map_err(|e| CliError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

pub struct Output {
    pub name: String,
    pub digest: String,
}

#[derive(Default)]
pub struct RunManifest {
    pub command: Vec<String>,
    pub config: Value,
    /// (label, sha256)
    pub inputs: Vec<(String, String)>,
    pub seed: u64,
    pub outputs: Vec<Output>,
}

impl RunManifest {
    pub fn input(&mut self, label: impl Into<String>, bytes: &[u8]) {
        self.inputs.push((label.into(), sha256_hex(bytes)));
    }

    /// Writes `contents` to `dir/name` and records it.
    pub fn emit(&mut self, dir: &Path, name: &str, contents: &str) -> Result<(), CliError> {
        write_atomic(&dir.join(name), contents.as_bytes())?;
        self.outputs.push(Output {
            name: name.to_string(),
            digest: sha256_hex(contents.as_bytes()),
        });
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let inputs: Vec<Value> = self
            .inputs
            .iter()
            .map(|(label, digest)| json!({"source": label, "sha256": digest}))
            .collect();
        let outputs: Vec<Value> = self
            .outputs
            .iter()
            .map(|o| json!({"path": o.name, "sha256": o.digest}))
            .collect();
        let v = json!({
            "command": self.command,
            "config": self.config,
            "inputs": inputs,
            "tool_version": env!("CARGO_PKG_VERSION"),
            "seeds": {"rng": self.seed},
            "outputs": outputs,
        });
        fusesim::format::to_sorted_json(&v)
    }

    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        write_atomic(&dir.join("manifest.json"), self.to_json().as_bytes())
    }
}
