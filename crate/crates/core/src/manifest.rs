//! Run provenance: each output directory carries one manifest recording the
//! command, full configuration, seed, and input digests that produced it.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

// ---------------------------------------------------------------------------
// Digests
// ---------------------------------------------------------------------------

/// SHA-256 of a file, lowercase hex.
pub fn sha256_file(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_bytes(&bytes))
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Digests of every regular file directly in `dir`, keyed by file name.
/// The manifest itself is skipped: it records wall-clock timestamps, so
/// artifact comparisons must not include it.
pub fn digest_dir(dir: impl AsRef<Path>) -> Result<BTreeMap<String, String>> {
    let dir = dir.as_ref();
    let mut digests = BTreeMap::new();
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if !path.is_file() {
            continue;
        }
        let name = entry.file_name().to_string_lossy().into_owned();
        if name == MANIFEST_FILE {
            continue;
        }
        digests.insert(name, sha256_file(&path)?);
    }
    Ok(digests)
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

/// Everything needed to reproduce one run's artifacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    /// Subcommand name, e.g. "synth" or "train".
    pub command: String,
    pub tool_version: String,
    pub seed: u64,
    /// Full configuration snapshot as executed, seed overrides applied.
    pub config: RunConfig,
    /// SHA-256 per input file, keyed by file name.
    pub input_digests: BTreeMap<String, String>,
    /// Wall-clock seconds since the Unix epoch; informational only and
    /// excluded from reproducibility comparisons.
    pub started_unix_secs: u64,
    pub finished_unix_secs: u64,
}

fn now_unix_secs() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

impl RunManifest {
    pub fn new(command: &str, config: RunConfig, seed: u64) -> Self {
        let now = now_unix_secs();
        RunManifest {
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config,
            input_digests: BTreeMap::new(),
            started_unix_secs: now,
            finished_unix_secs: now,
        }
    }

    /// Records an input file's digest under its file name.
    pub fn add_input(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .ok_or_else(|| Error::config(format!("input {} has no file name", path.display())))?;
        self.input_digests.insert(name, sha256_file(path)?);
        Ok(())
    }

    /// Stamps the finish time and writes `manifest.json` into `dir`,
    /// refusing to leave a directory with two manifests.
    pub fn finalize(mut self, dir: impl AsRef<Path>) -> Result<PathBuf> {
        self.finished_unix_secs = now_unix_secs();
        let path = dir.as_ref().join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&self)
            .map_err(|e| Error::config(format!("manifest serialization failed: {e}")))?;
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::data(path, 0, e.to_string()))
    }

    pub fn load_from_dir(dir: impl AsRef<Path>) -> Result<Self> {
        Self::load(dir.as_ref().join(MANIFEST_FILE))
    }

    /// True when the recorded inputs still match the files on disk.
    pub fn inputs_match(&self, dir: impl AsRef<Path>) -> Result<bool> {
        for (name, recorded) in &self.input_digests {
            let current = sha256_file(dir.as_ref().join(name))?;
            if &current != recorded {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_matches_known_vector() {
        // SHA-256("abc") from the FIPS 180-2 appendix.
        assert_eq!(
            sha256_bytes(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn manifest_round_trips_and_tracks_inputs() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("stream.jsonl");
        fs::write(&input, b"{}\n").unwrap();

        let mut m = RunManifest::new("synth", RunConfig::default(), 7);
        m.add_input(&input).unwrap();
        let path = m.clone().finalize(dir.path()).unwrap();

        let loaded = RunManifest::load(&path).unwrap();
        assert_eq!(loaded.command, "synth");
        assert_eq!(loaded.seed, 7);
        assert_eq!(loaded.input_digests.len(), 1);
        assert!(loaded.inputs_match(dir.path()).unwrap());

        fs::write(&input, b"{\"changed\":1}\n").unwrap();
        assert!(!loaded.inputs_match(dir.path()).unwrap());
    }

    #[test]
    fn digest_dir_skips_the_manifest_and_subdirs() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("a.txt"), b"a").unwrap();
        fs::write(dir.path().join(MANIFEST_FILE), b"{}").unwrap();
        fs::create_dir(dir.path().join("sub")).unwrap();
        fs::write(dir.path().join("sub").join("b.txt"), b"b").unwrap();

        let digests = digest_dir(dir.path()).unwrap();
        assert_eq!(digests.keys().collect::<Vec<_>>(), vec!["a.txt"]);
    }

    #[test]
    fn identical_content_gives_identical_digests() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("x"), b"same").unwrap();
        fs::write(dir.path().join("y"), b"same").unwrap();
        let d = digest_dir(dir.path()).unwrap();
        assert_eq!(d["x"], d["y"]);
    }

    #[test]
    fn missing_manifest_reports_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let err = RunManifest::load_from_dir(dir.path()).unwrap_err();
        assert!(matches!(err, Error::Io { .. }), "{err}");
    }
}
