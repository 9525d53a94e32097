//! Run manifest and checkpoint persistence.
//!
//! The checkpoint is replaced atomically (write-temp-then-rename) so a kill
//! at any instant leaves either the previous or the new file, never a torn
//! one. Sink byte positions recorded at flush time let resume truncate away
//! rows written after the last checkpoint.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use crate::error::{GraspError, Result};

#[derive(Debug, Clone, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Counters {
    pub processed: u64,
    pub succeeded: u64,
    pub failed: u64,
    pub skipped: u64,
}

#[derive(Debug, Clone, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ManifestFlags {
    pub oasst: bool,
    pub quality: bool,
    pub sequential: bool,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    /// Digest of the canonicalized pipeline config; resume refuses on
    /// mismatch.
    pub config_hash: String,
    pub run_seed: u64,
    pub started_at: String,
    pub flags: ManifestFlags,
    pub counters: Counters,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FailEntry {
    pub node: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Checkpoint {
    pub manifest: RunManifest,
    pub completed: BTreeSet<u64>,
    pub failed: BTreeMap<u64, FailEntry>,
    /// Byte offsets of append-only sink files at flush time.
    pub sink_positions: BTreeMap<String, u64>,
}

impl Checkpoint {
    pub fn new(manifest: RunManifest) -> Checkpoint {
        Checkpoint {
            manifest,
            completed: BTreeSet::new(),
            failed: BTreeMap::new(),
            sink_positions: BTreeMap::new(),
        }
    }

    /// Atomic write: temp file in the same directory, then rename.
    pub fn write(&self, path: &Path) -> Result<()> {
        let bytes = serde_json::to_vec_pretty(self).map_err(|e| GraspError::Other(e.to_string()))?;
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, &bytes)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let bytes = std::fs::read(path).map_err(|e| {
            GraspError::Resume(format!("cannot read checkpoint {}: {e}", path.display()))
        })?;
        serde_json::from_slice(&bytes)
            .map_err(|e| GraspError::Resume(format!("corrupt checkpoint: {e}")))
    }
}

pub fn write_manifest(path: &Path, manifest: &RunManifest) -> Result<()> {
    let bytes =
        serde_json::to_vec_pretty(manifest).map_err(|e| GraspError::Other(e.to_string()))?;
    std::fs::write(path, bytes)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest() -> RunManifest {
        RunManifest {
            run_id: "r1".to_string(),
            config_hash: "abc".to_string(),
            run_seed: 7,
            started_at: "2026-01-01T00:00:00Z".to_string(),
            flags: ManifestFlags::default(),
            counters: Counters::default(),
        }
    }

    #[test]
    fn round_trips_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("checkpoint.json");
        let mut cp = Checkpoint::new(manifest());
        cp.completed.extend([1, 2, 5]);
        cp.failed.insert(
            3,
            FailEntry {
                node: "validate".to_string(),
                error: "boom".to_string(),
            },
        );
        cp.sink_positions.insert("output".to_string(), 1234);
        cp.write(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, cp);
        // No stray temp file remains.
        assert!(!path.with_extension("json.tmp").exists());
    }

    #[test]
    fn missing_checkpoint_is_resume_error() {
        let err = Checkpoint::load(Path::new("/no/such/checkpoint.json")).unwrap_err();
        assert!(matches!(err, GraspError::Resume(_)));
    }

    #[test]
    fn corrupt_checkpoint_is_resume_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("checkpoint.json");
        std::fs::write(&path, b"{ truncated").unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(GraspError::Resume(_))));
    }
}
