use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    /// File name relative to the output directory.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub toolkit_version: String,
    /// SHA-256 of the canonical re-serialization of the scenario, when one was given.
    pub config_hash: Option<String>,
    pub inputs: Vec<Artifact>,
    pub artifacts: Vec<Artifact>,
    pub started_unix_s: f64,
    pub finished_unix_s: f64,
}

fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0.0, |d| d.as_secs_f64())
}

/// Collects the files a command writes and records them in `manifest_<command>.json`.
pub struct ArtifactWriter {
    dir: PathBuf,
    command: String,
    config_hash: Option<String>,
    inputs: Vec<Artifact>,
    artifacts: Vec<Artifact>,
    started: f64,
}

impl ArtifactWriter {
    pub fn new(dir: &Path, command: &str, config_hash: Option<String>) -> CliResult<Self> {
        fs::create_dir_all(dir).map_err(CliError::io(dir))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            command: command.to_string(),
            config_hash,
            inputs: Vec::new(),
            artifacts: Vec::new(),
            started: unix_now(),
        })
    }

    pub fn record_input(&mut self, path: &Path) -> CliResult<()> {
        let bytes = fs::read(path).map_err(CliError::io(path))?;
        self.inputs.push(Artifact {
            path: path.display().to_string(),
            sha256: sha256_hex(&bytes),
            bytes: bytes.len() as u64,
        });
        Ok(())
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> CliResult<PathBuf> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).map_err(CliError::io(&path))?;
        self.artifacts.push(Artifact {
            path: name.to_string(),
            sha256: sha256_hex(bytes),
            bytes: bytes.len() as u64,
        });
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> CliResult<PathBuf> {
        let mut text = serde_json::to_string_pretty(value).map_err(|source| CliError::Json {
            path: self.dir.join(name),
            source,
        })?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    /// Writes the manifest and returns it.
    pub fn finish(self) -> CliResult<RunManifest> {
        let manifest = RunManifest {
            command: self.command,
            toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: self.config_hash,
            inputs: self.inputs,
            artifacts: self.artifacts,
            started_unix_s: self.started,
            finished_unix_s: unix_now(),
        };
        let path = self.dir.join(format!("manifest_{}.json", manifest.command));
        let text = serde_json::to_string_pretty(&manifest).map_err(|source| CliError::Json {
            path: path.clone(),
            source,
        })?;
        fs::write(&path, text + "\n").map_err(CliError::io(&path))?;
        Ok(manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn lists_every_artifact() {
        let dir = tempfile::tempdir().unwrap();
        let mut w = ArtifactWriter::new(dir.path(), "demo", Some("h".into())).unwrap();
        w.write("a.csv", b"x\n1\n").unwrap();
        w.write_json("b.json", &[1, 2]).unwrap();
        let m = w.finish().unwrap();
        let names: Vec<_> = m.artifacts.iter().map(|a| a.path.as_str()).collect();
        assert_eq!(names, ["a.csv", "b.json"]);
        for a in &m.artifacts {
            let bytes = fs::read(dir.path().join(&a.path)).unwrap();
            assert_eq!(a.sha256, sha256_hex(&bytes));
        }
        assert!(dir.path().join("manifest_demo.json").exists());
    }
}
