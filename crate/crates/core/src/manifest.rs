//! Artifact bookkeeping: atomic writes, content hashes and run manifests.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const SCHEMA_VERSION: u32 = 1;

/// Writes `bytes` to a temporary file beside `path` and renames it into
/// place, creating parent directories as needed.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let parent = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&parent).map_err(|e| Error::io(&parent, e))?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::input(format!("not a file path: {}", path.display())))?
        .to_string_lossy();
    let tmp = parent.join(format!(".{name}.tmp-{}", std::process::id()));
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

/// Pretty JSON with a trailing newline, written atomically.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// Hash of a value's canonical JSON form.
pub fn hash_json<T: Serialize>(value: &T) -> Result<String> {
    // serde_json::Value keeps object keys sorted, which makes this stable
    let v = serde_json::to_value(value)?;
    Ok(sha256_hex(serde_json::to_string(&v)?.as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub command: String,
    pub tool_version: String,
    pub config_hash: String,
    /// Input path (as given) to content hash.
    pub inputs: BTreeMap<String, String>,
    /// Output path relative to the output directory, to content hash.
    pub outputs: BTreeMap<String, String>,
    pub wall_time_secs: f64,
}

impl RunManifest {
    pub fn new(command: &str, config_hash: String) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            wall_time_secs: 0.0,
        }
    }

    pub fn load(dir: &Path) -> Result<Option<Self>> {
        let path = dir.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(None);
        }
        let m: Self = read_json(&path)?;
        if m.schema_version != SCHEMA_VERSION {
            return Err(Error::Schema(format!(
                "{}: schema version {} (expected {SCHEMA_VERSION})",
                path.display(),
                m.schema_version
            )));
        }
        Ok(Some(m))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        write_json(&dir.join(MANIFEST_FILE), self)
    }

    /// Hashes `path` and records it as an input.
    pub fn add_input(&mut self, path: &Path) -> Result<String> {
        let h = sha256_file(path)?;
        self.inputs.insert(path.display().to_string(), h.clone());
        Ok(h)
    }

    /// Writes `bytes` to `dir/rel` atomically and records its hash.
    pub fn write_output(&mut self, dir: &Path, rel: &str, bytes: &[u8]) -> Result<()> {
        write_atomic(&dir.join(rel), bytes)?;
        self.outputs.insert(rel.to_string(), sha256_hex(bytes));
        Ok(())
    }

    /// Records a file that was already written into `dir`.
    pub fn record_output(&mut self, dir: &Path, rel: &str) -> Result<()> {
        let h = sha256_file(&dir.join(rel))?;
        self.outputs.insert(rel.to_string(), h);
        Ok(())
    }

    /// True when this manifest describes the same command, config and
    /// inputs as `other` and every listed output still has its recorded hash.
    pub fn is_current(&self, other: &RunManifest, dir: &Path) -> bool {
        self.command == other.command
            && self.config_hash == other.config_hash
            && self.inputs == other.inputs
            && !self.outputs.is_empty()
            && self
                .outputs
                .iter()
                .all(|(rel, h)| sha256_file(&dir.join(rel)).is_ok_and(|a| &a == h))
    }

    /// Checks that the output `rel` in `dir` still matches its recorded
    /// hash.
    pub fn verify_output(&self, dir: &Path, rel: &str) -> Result<String> {
        let path = dir.join(rel);
        let expected = self.outputs.get(rel).ok_or_else(|| {
            Error::Schema(format!(
                "{} is not listed in {}",
                rel,
                dir.join(MANIFEST_FILE).display()
            ))
        })?;
        let actual = sha256_file(&path)?;
        if &actual != expected {
            return Err(Error::StaleArtifact {
                path,
                expected: expected.clone(),
                actual,
            });
        }
        Ok(actual)
    }
}

/// Verifies `dir/rel` against the manifest in `dir`, if there is one.
/// Returns the file's hash.
pub fn verify_artifact(dir: &Path, rel: &str) -> Result<String> {
    match RunManifest::load(dir)? {
        Some(m) => m.verify_output(dir, rel),
        None => sha256_file(&dir.join(rel)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_creates_dirs_and_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a/b/c.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"two");
        let leftovers: Vec<_> = fs::read_dir(p.parent().unwrap()).unwrap().collect();
        assert_eq!(leftovers.len(), 1);
    }

    #[test]
    fn sha_known_value() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn stale_output_detected() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = RunManifest::new("x", "h".into());
        m.write_output(dir.path(), "out.bin", b"data").unwrap();
        m.save(dir.path()).unwrap();
        assert!(verify_artifact(dir.path(), "out.bin").is_ok());
        assert!(m.is_current(&m.clone(), dir.path()));
        fs::write(dir.path().join("out.bin"), b"tampered").unwrap();
        assert!(matches!(
            verify_artifact(dir.path(), "out.bin"),
            Err(Error::StaleArtifact { .. })
        ));
        assert!(!m.is_current(&m.clone(), dir.path()));
    }

    #[test]
    fn json_hash_ignores_field_order() {
        let a: serde_json::Value = serde_json::from_str(r#"{"a":1,"b":2}"#).unwrap();
        let b: serde_json::Value = serde_json::from_str(r#"{"b":2,"a":1}"#).unwrap();
        assert_eq!(hash_json(&a).unwrap(), hash_json(&b).unwrap());
    }
}
