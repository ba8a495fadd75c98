//! Per-stage manifests. A stage is skipped when its manifest records the same
//! config hash and every listed output is still present.

use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TOOLKIT_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageManifest {
    pub stage: String,
    pub config_hash: String,
    pub toolkit_version: String,
    pub outputs: Vec<String>,
    pub summary: serde_json::Value,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// SHA-256 over the stage name, toolkit version, the serialized stage config
/// and the contents of every input file.
pub fn stage_hash(stage: &str, config: &impl Serialize, inputs: &[PathBuf]) -> io::Result<String> {
    let mut h = Sha256::new();
    h.update(stage.as_bytes());
    h.update([0]);
    h.update(TOOLKIT_VERSION.as_bytes());
    h.update([0]);
    h.update(serde_json::to_vec(config).map_err(io::Error::other)?);
    for p in inputs {
        h.update([0]);
        h.update(Sha256::digest(std::fs::read(p)?));
    }
    Ok(hex(&h.finalize()))
}

pub fn read(dir: &Path) -> Option<StageManifest> {
    let text = std::fs::read_to_string(dir.join(MANIFEST_FILE)).ok()?;
    serde_json::from_str(&text).ok()
}

pub fn is_current(dir: &Path, hash: &str) -> bool {
    match read(dir) {
        Some(m) => m.config_hash == hash && m.outputs.iter().all(|f| dir.join(f).is_file()),
        None => false,
    }
}

/// Records every file already in `dir` as an output, then writes the
/// manifest last so an interrupted stage never looks complete.
pub fn write(dir: &Path, stage: &str, hash: &str, summary: serde_json::Value) -> io::Result<StageManifest> {
    let mut outputs: Vec<String> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_file())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n != MANIFEST_FILE)
        .collect();
    outputs.sort();
    let m = StageManifest {
        stage: stage.into(),
        config_hash: hash.into(),
        toolkit_version: TOOLKIT_VERSION.into(),
        outputs,
        summary,
    };
    std::fs::write(dir.join(MANIFEST_FILE), serde_json::to_vec_pretty(&m).map_err(io::Error::other)?)?;
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_tracks_config_and_inputs() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("in.bin");
        std::fs::write(&input, b"abc").unwrap();
        let a = stage_hash("fill", &1.0, std::slice::from_ref(&input)).unwrap();
        assert_eq!(a.len(), 64);
        assert_eq!(a, stage_hash("fill", &1.0, std::slice::from_ref(&input)).unwrap());
        assert_ne!(a, stage_hash("fill", &2.0, std::slice::from_ref(&input)).unwrap());
        assert_ne!(a, stage_hash("render", &1.0, std::slice::from_ref(&input)).unwrap());
        std::fs::write(&input, b"abd").unwrap();
        assert_ne!(a, stage_hash("fill", &1.0, &[input]).unwrap());
    }

    #[test]
    fn manifest_round_trip_and_staleness() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("out.txt"), b"x").unwrap();
        let m = write(dir.path(), "fill", "h1", serde_json::json!({"n": 3})).unwrap();
        assert_eq!(m.outputs, vec!["out.txt".to_string()]);
        assert_eq!(read(dir.path()).unwrap(), m);
        assert!(is_current(dir.path(), "h1"));
        assert!(!is_current(dir.path(), "h2"));
        std::fs::remove_file(dir.path().join("out.txt")).unwrap();
        assert!(!is_current(dir.path(), "h1"));
    }
}
