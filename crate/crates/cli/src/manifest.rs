//! `manifest.json`: what ran, on which inputs, producing which files.

use std::fs::File;
use std::io;
use std::path::{Path, PathBuf};

use chrono::{DateTime, SecondsFormat, Utc};
use serde::Serialize;
use sha2::{Digest, Sha256};

use mobility_audit::ingest::save_json;
use mobility_audit::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

pub fn digest(path: &Path, shown_as: String) -> Result<FileDigest> {
    let io_err = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut hasher = Sha256::new();
    let bytes = io::copy(&mut File::open(path).map_err(io_err)?, &mut hasher).map_err(io_err)?;
    Ok(FileDigest {
        path: shown_as,
        sha256: format!("{:x}", hasher.finalize()),
        bytes,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: String,
    pub tool_version: String,
    pub command: String,
    pub arguments: Vec<String>,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub inputs: Vec<FileDigest>,
    /// Paths relative to the output directory.
    pub outputs: Vec<FileDigest>,
    pub started_at: String,
    pub finished_at: String,
}

/// RFC 3339 UTC. `SOURCE_DATE_EPOCH`, when set, pins the clock so that
/// manifests are reproducible too.
pub fn timestamp() -> String {
    let pinned = std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|v| v.trim().parse::<i64>().ok())
        .and_then(|s| DateTime::from_timestamp(s, 0));
    pinned
        .unwrap_or_else(Utc::now)
        .to_rfc3339_opts(SecondsFormat::Secs, true)
}

/// Files a command read and wrote, plus its resolved options.
#[derive(Debug, Clone)]
pub struct Run {
    pub out_dir: PathBuf,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
}

impl Run {
    pub fn write_manifest(
        &self,
        command: &str,
        arguments: Vec<String>,
        started_at: String,
    ) -> Result<PathBuf> {
        let inputs = self
            .inputs
            .iter()
            .map(|p| digest(p, p.display().to_string()))
            .collect::<Result<Vec<_>>>()?;
        let outputs = self
            .outputs
            .iter()
            .map(|p| {
                let shown = p
                    .strip_prefix(&self.out_dir)
                    .unwrap_or(p)
                    .display()
                    .to_string();
                digest(p, shown)
            })
            .collect::<Result<Vec<_>>>()?;
        let manifest = RunManifest {
            tool: env!("CARGO_BIN_NAME").to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            arguments,
            config: self.config.clone(),
            seed: self.seed,
            inputs,
            outputs,
            started_at,
            finished_at: timestamp(),
        };
        let path = self.out_dir.join(MANIFEST_FILE);
        save_json(&path, &manifest)?;
        Ok(path)
    }
}
