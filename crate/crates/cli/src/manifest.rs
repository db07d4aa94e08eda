//! Run manifests: what a command read, wrote and measured.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileHash {
    /// Path relative to the output directory.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: RunConfig,
    pub seeds: Vec<u64>,
    pub source_revision: String,
    pub inputs: Vec<FileHash>,
    pub outputs: Vec<FileHash>,
    pub wall_clock_secs: f64,
    pub metrics: serde_json::Value,
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// `git rev-parse HEAD` of the working directory, or `unknown`.
pub fn source_revision() -> String {
    std::process::Command::new("git")
        .args(["rev-parse", "HEAD"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .unwrap_or_else(|| "unknown".into())
}

pub fn manifest_path(out: &Path, name: &str) -> PathBuf {
    out.join(format!("{name}.manifest.json"))
}

impl RunManifest {
    pub fn write(&self, out: &Path, name: &str) -> CliResult<PathBuf> {
        let path = manifest_path(out, name);
        let json = serde_json::to_vec_pretty(self)?;
        fs::write(&path, json).map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}

/// Hashes files under `out` for a manifest.
pub fn hash_files(out: &Path, rel: &[String]) -> CliResult<Vec<FileHash>> {
    rel.iter()
        .map(|r| {
            Ok(FileHash {
                path: r.clone(),
                sha256: sha256_file(&out.join(r))?,
            })
        })
        .collect()
}

/// Checks that `rel` exists under `out` and, when its producer left a
/// manifest, that the file still has the recorded hash.
pub fn require_artifact(out: &Path, rel: &str, producer: &str, manifest: &str) -> CliResult<FileHash> {
    let path = out.join(rel);
    if !path.exists() {
        return Err(CliError::MissingArtifact {
            path,
            command: producer.into(),
        });
    }
    let found = sha256_file(&path)?;
    let mpath = manifest_path(out, manifest);
    if mpath.exists() {
        let m = RunManifest::read(&mpath)?;
        if let Some(rec) = m.outputs.iter().find(|f| f.path == rel) {
            if rec.sha256 != found {
                return Err(CliError::StaleArtifact {
                    path,
                    expected: rec.sha256.clone(),
                    found,
                    command: producer.into(),
                });
            }
        }
    }
    Ok(FileHash {
        path: rel.into(),
        sha256: found,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_and_stale_artifacts_name_the_producer() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path();
        let err = require_artifact(out, "a.json", "sft", "sft").unwrap_err();
        assert!(matches!(err, CliError::MissingArtifact { .. }));
        assert!(err.to_string().contains("fgaif sft"));
        fs::write(out.join("a.json"), b"one").unwrap();
        let m = RunManifest {
            command: "sft".into(),
            config: RunConfig::default(),
            seeds: vec![0],
            source_revision: "x".into(),
            inputs: vec![],
            outputs: hash_files(out, &["a.json".into()]).unwrap(),
            wall_clock_secs: 0.0,
            metrics: serde_json::Value::Null,
        };
        m.write(out, "sft").unwrap();
        require_artifact(out, "a.json", "sft", "sft").unwrap();
        fs::write(out.join("a.json"), b"two").unwrap();
        let err = require_artifact(out, "a.json", "sft", "sft").unwrap_err();
        assert!(matches!(err, CliError::StaleArtifact { .. }));
        assert_eq!(err.exit_code(), 3);
    }
}
