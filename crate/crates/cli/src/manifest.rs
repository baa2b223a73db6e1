//! Run manifests: what was run, on which inputs, and what it produced.

use std::fs::File;
use std::io::{self, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

pub const MANIFEST_NAME: &str = "manifest.json";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

impl FileDigest {
    pub fn of(path: &Path, label: impl Into<String>) -> io::Result<FileDigest> {
        let (bytes, sha256) = sha256_file(path)?;
        Ok(FileDigest {
            path: label.into(),
            bytes,
            sha256,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub spec_path: Option<String>,
    /// SHA-256 over the command, seed, tool version, effective parameters
    /// and input file hashes. Equal digests mean byte-identical outputs.
    pub config_digest: String,
    pub seed: u64,
    pub tool_version: String,
    pub parameters: Value,
    pub inputs: Vec<FileDigest>,
    /// Worker threads used; does not affect results and is not digested.
    pub threads: Option<usize>,
    pub started_at: String,
    pub finished_at: String,
    pub outputs: Vec<FileDigest>,
}

impl RunManifest {
    pub fn recompute_digest(&self) -> String {
        config_digest(&self.command, self.seed, &self.tool_version, &self.parameters, &self.inputs)
    }

    /// Check that every input file still hashes to its recorded value.
    pub fn verify_inputs(&self) -> Result<(), String> {
        for input in &self.inputs {
            let (_, sha) = sha256_file(Path::new(&input.path)).map_err(|e| format!("{}: {e}", input.path))?;
            if sha != input.sha256 {
                return Err(format!("{} changed since the run", input.path));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> io::Result<RunManifest> {
        let f = File::open(path)?;
        serde_json::from_reader(io::BufReader::new(f)).map_err(io::Error::other)
    }
}

pub fn config_digest(command: &str, seed: u64, tool_version: &str, parameters: &Value, inputs: &[FileDigest]) -> String {
    // serde_json maps are key-sorted, so this serialization is canonical.
    let inputs: Vec<&str> = inputs.iter().map(|i| i.sha256.as_str()).collect();
    let doc = json!({
        "command": command,
        "seed": seed,
        "tool_version": tool_version,
        "parameters": parameters,
        "inputs": inputs,
    });
    hex::encode(Sha256::digest(doc.to_string().as_bytes()))
}

pub fn sha256_file(path: &Path) -> io::Result<(u64, String)> {
    let mut f = File::open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    let mut total = 0u64;
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
        total += n as u64;
    }
    Ok((total, hex::encode(hasher.finalize())))
}

pub fn now_rfc3339() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}
