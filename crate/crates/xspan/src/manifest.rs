//! Per-run provenance record: the command, its resolved configuration, and
//! content digests of every input and output, written atomically when the
//! run finishes so interrupted runs leave no manifest behind.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Fully resolved configuration the run actually used.
    pub config: serde_json::Value,
    /// Path → sha256 of contents (directories hash their sorted file tree).
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub duration_secs: f64,
}

/// Sha256 hex digest of one file's bytes.
pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

fn hash_tree(hasher: &mut Sha256, root: &Path, path: &Path) -> Result<()> {
    if path.is_dir() {
        let mut entries: Vec<PathBuf> = std::fs::read_dir(path)
            .map_err(|e| Error::io(path, e))?
            .map(|entry| entry.map(|e| e.path()))
            .collect::<std::io::Result<_>>()
            .map_err(|e| Error::io(path, e))?;
        entries.sort();
        for entry in entries {
            hash_tree(hasher, root, &entry)?;
        }
    } else {
        let rel = path.strip_prefix(root).unwrap_or(path);
        hasher.update(rel.to_string_lossy().as_bytes());
        hasher.update([0u8]);
        hasher.update(std::fs::read(path).map_err(|e| Error::io(path, e))?);
    }
    Ok(())
}

/// Digest of a file or directory; directory digests cover relative names
/// and contents in sorted order, so they are layout-stable.
pub fn path_digest(path: &Path) -> Result<String> {
    if path.is_dir() {
        let mut hasher = Sha256::new();
        hash_tree(&mut hasher, path, path)?;
        Ok(format!("{:x}", hasher.finalize()))
    } else {
        file_digest(path)
    }
}

/// Collects inputs/outputs during a run and writes the manifest at the end.
pub struct ManifestBuilder {
    command: String,
    config: serde_json::Value,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    started: Instant,
}

impl ManifestBuilder {
    pub fn new(command: &str, config: serde_json::Value) -> Self {
        Self {
            command: command.to_string(),
            config,
            inputs: Vec::new(),
            outputs: Vec::new(),
            started: Instant::now(),
        }
    }

    pub fn input(&mut self, path: &Path) -> &mut Self {
        self.inputs.push(path.to_path_buf());
        self
    }

    pub fn output(&mut self, path: &Path) -> &mut Self {
        self.outputs.push(path.to_path_buf());
        self
    }

    /// Digests everything and writes `manifest.json` into `dir` via a
    /// temporary file + rename, so the manifest appears all at once.
    pub fn finish(self, dir: &Path) -> Result<RunManifest> {
        let digest_all = |paths: &[PathBuf]| -> Result<BTreeMap<String, String>> {
            paths
                .iter()
                .map(|p| Ok((p.to_string_lossy().into_owned(), path_digest(p)?)))
                .collect()
        };
        let manifest = RunManifest {
            command: self.command,
            config: self.config,
            inputs: digest_all(&self.inputs)?,
            outputs: digest_all(&self.outputs)?,
            duration_secs: self.started.elapsed().as_secs_f64(),
        };
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let tmp = dir.join(format!(".{MANIFEST_FILE}.tmp"));
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::json(&tmp, e))?;
        std::fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
        let path = dir.join(MANIFEST_FILE);
        std::fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))?;
        Ok(manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_digest_matches_known_vector() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f");
        std::fs::write(&path, "abc").unwrap();
        assert_eq!(
            file_digest(&path).unwrap(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn directory_digest_is_content_sensitive_and_stable() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir(dir.path().join("sub")).unwrap();
        std::fs::write(dir.path().join("a.txt"), "one").unwrap();
        std::fs::write(dir.path().join("sub/b.txt"), "two").unwrap();
        let d1 = path_digest(dir.path()).unwrap();
        let d2 = path_digest(dir.path()).unwrap();
        assert_eq!(d1, d2);
        std::fs::write(dir.path().join("sub/b.txt"), "three").unwrap();
        assert_ne!(path_digest(dir.path()).unwrap(), d1);
    }

    #[test]
    fn manifest_round_trips_and_digests_recompute() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("in.txt");
        let output = dir.path().join("out.txt");
        std::fs::write(&input, "source data").unwrap();
        std::fs::write(&output, "result data").unwrap();

        let mut b = ManifestBuilder::new("demo", serde_json::json!({"seed": 7}));
        b.input(&input);
        b.output(&output);
        let written = b.finish(dir.path()).unwrap();
        assert!(written.duration_secs >= 0.0);

        let text = std::fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap();
        let loaded: RunManifest = serde_json::from_str(&text).unwrap();
        assert_eq!(loaded.command, "demo");
        assert_eq!(loaded.config["seed"], 7);
        let stored = &loaded.inputs[&input.to_string_lossy().into_owned()];
        assert_eq!(stored, &file_digest(&input).unwrap());
        assert_eq!(loaded.outputs.len(), 1);
        // No stray temp file once finished.
        assert!(!dir.path().join(format!(".{MANIFEST_FILE}.tmp")).exists());
    }

    #[test]
    fn missing_input_is_an_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let mut b = ManifestBuilder::new("demo", serde_json::Value::Null);
        b.input(&dir.path().join("absent"));
        assert!(b.finish(dir.path()).is_err());
    }
}
