//! Control-point checkpoints: a JSON header plus the `(K+1) x D` matrix,
//! either in a sidecar file of little-endian `f64` (row-major) or inline as
//! base-64 of the same bytes.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::bezier::ControlPoints;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::manifest::{read_json, sha256_hex, write_atomic};
use crate::mlp::{MlpSpec, ParamLayout};

pub const CHECKPOINT_SCHEMA: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Storage {
    /// Sidecar file name (relative to the header) and its SHA-256.
    Sidecar {
        file: String,
        sha256: String,
    },
    Inline {
        base64: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub schema_version: u32,
    #[serde(rename = "K")]
    pub degree: usize,
    #[serde(rename = "D")]
    pub dim: usize,
    pub layout: ParamLayout,
    pub spec: MlpSpec,
    pub seed: u64,
    #[serde(default)]
    pub metadata: BTreeMap<String, serde_json::Value>,
    pub storage: Storage,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub spec: MlpSpec,
    pub seed: u64,
    pub metadata: BTreeMap<String, serde_json::Value>,
    pub points: ControlPoints,
}

fn to_bytes(points: &ControlPoints) -> Vec<u8> {
    points
        .matrix()
        .as_slice()
        .iter()
        .flat_map(|v| v.to_le_bytes())
        .collect()
}

fn from_bytes(bytes: &[u8], rows: usize, cols: usize) -> Result<ControlPoints> {
    if bytes.len() != rows * cols * 8 {
        return Err(Error::Schema(format!(
            "checkpoint payload has {} bytes, expected {}",
            bytes.len(),
            rows * cols * 8
        )));
    }
    let vals: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    ControlPoints::new(Matrix::from_vec(rows, cols, vals)?)
}

/// Sidecar path for a header path: `x.json` becomes `x.bin`.
pub fn sidecar_path(header: &Path) -> PathBuf {
    header.with_extension("bin")
}

impl Checkpoint {
    pub fn new(spec: MlpSpec, seed: u64, points: ControlPoints) -> Result<Self> {
        let d = spec.layout().dim;
        if points.dim() != d {
            return Err(Error::Dimension {
                what: "checkpoint control points",
                expected: d,
                got: points.dim(),
            });
        }
        Ok(Self {
            spec,
            seed,
            metadata: BTreeMap::new(),
            points,
        })
    }

    /// Serializes the header (and, unless `portable`, the sidecar bytes).
    /// Returns `(header_json, sidecar)`.
    pub fn encode(
        &self,
        header_path: &Path,
        portable: bool,
    ) -> Result<(String, Option<(PathBuf, Vec<u8>)>)> {
        let bytes = to_bytes(&self.points);
        let (storage, side) = if portable {
            (
                Storage::Inline {
                    base64: B64.encode(&bytes),
                },
                None,
            )
        } else {
            let side = sidecar_path(header_path);
            let file = side
                .file_name()
                .ok_or_else(|| {
                    Error::input(format!("bad checkpoint path {}", header_path.display()))
                })?
                .to_string_lossy()
                .into_owned();
            (
                Storage::Sidecar {
                    file,
                    sha256: sha256_hex(&bytes),
                },
                Some((side, bytes)),
            )
        };
        let header = CheckpointHeader {
            schema_version: CHECKPOINT_SCHEMA,
            degree: self.points.degree(),
            dim: self.points.dim(),
            layout: self.spec.layout(),
            spec: self.spec.clone(),
            seed: self.seed,
            metadata: self.metadata.clone(),
            storage,
        };
        let mut text = serde_json::to_string_pretty(&header)?;
        text.push('\n');
        Ok((text, side))
    }

    /// Writes the sidecar first, then the header, both atomically.
    pub fn save(&self, header_path: &Path, portable: bool) -> Result<()> {
        let (text, side) = self.encode(header_path, portable)?;
        if let Some((p, bytes)) = side {
            write_atomic(&p, &bytes)?;
        }
        write_atomic(header_path, text.as_bytes())
    }

    pub fn load(header_path: &Path) -> Result<Self> {
        let h: CheckpointHeader = read_json(header_path)?;
        if h.schema_version != CHECKPOINT_SCHEMA {
            return Err(Error::Schema(format!(
                "{}: checkpoint schema {} (expected {CHECKPOINT_SCHEMA})",
                header_path.display(),
                h.schema_version
            )));
        }
        h.spec.validate()?;
        if h.layout != h.spec.layout() || h.dim != h.layout.dim {
            return Err(Error::Schema(format!(
                "{}: layout does not match spec",
                header_path.display()
            )));
        }
        let bytes = match &h.storage {
            Storage::Inline { base64 } => B64.decode(base64).map_err(|e| {
                Error::Schema(format!(
                    "{}: bad base64 payload: {e}",
                    header_path.display()
                ))
            })?,
            Storage::Sidecar { file, sha256 } => {
                let p = header_path.parent().unwrap_or(Path::new(".")).join(file);
                let bytes = std::fs::read(&p).map_err(|e| Error::io(&p, e))?;
                let actual = sha256_hex(&bytes);
                if &actual != sha256 {
                    return Err(Error::StaleArtifact {
                        path: p,
                        expected: sha256.clone(),
                        actual,
                    });
                }
                bytes
            }
        };
        let points = from_bytes(&bytes, h.degree + 1, h.dim)?;
        Ok(Self {
            spec: h.spec,
            seed: h.seed,
            metadata: h.metadata,
            points,
        })
    }
}

/// Convenience for tools that only need the header.
pub fn read_header(path: &Path) -> Result<CheckpointHeader> {
    read_json(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mlp::{init, Activation, InitScheme, Task};

    fn sample() -> Checkpoint {
        let spec = MlpSpec::new(
            vec![2, 3, 1],
            Activation::Elu,
            Task::RegressionHomoscedastic,
        )
        .unwrap();
        let rows: Vec<Vec<f64>> = (0..4)
            .map(|k| init(&spec, k, InitScheme::Normal { sigma: 1.0 }).into_inner())
            .collect();
        let mut c = Checkpoint::new(spec, 3, ControlPoints::from_rows(&rows).unwrap()).unwrap();
        c.metadata
            .insert("best_epoch".into(), serde_json::json!(17));
        c
    }

    #[test]
    fn sidecar_and_inline_round_trip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let c = sample();
        for portable in [false, true] {
            let p = dir.path().join(format!("ck{portable}.json"));
            c.save(&p, portable).unwrap();
            assert_eq!(sidecar_path(&p).exists(), !portable);
            let back = Checkpoint::load(&p).unwrap();
            assert_eq!(back, c);
            let h = read_header(&p).unwrap();
            assert_eq!((h.degree, h.dim), (3, 2 * 3 + 3 + 3 + 1 + 1));
        }
    }

    #[test]
    fn tampered_sidecar_is_stale() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ck.json");
        sample().save(&p, false).unwrap();
        let side = sidecar_path(&p);
        let mut bytes = std::fs::read(&side).unwrap();
        bytes[0] ^= 1;
        std::fs::write(&side, bytes).unwrap();
        assert!(matches!(
            Checkpoint::load(&p),
            Err(Error::StaleArtifact { .. })
        ));
    }

    #[test]
    fn wrong_dimension_rejected() {
        let spec = MlpSpec::new(
            vec![1, 2, 1],
            Activation::Relu,
            Task::RegressionHomoscedastic,
        )
        .unwrap();
        let pts = ControlPoints::from_rows(&[vec![0.0; 3], vec![1.0; 3]]).unwrap();
        assert!(Checkpoint::new(spec, 0, pts).is_err());
    }
}
