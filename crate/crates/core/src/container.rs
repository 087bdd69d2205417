//! Manifest + blob tensor container.
//!
//! A container is two files: a JSON manifest describing each tensor and a raw
//! blob holding the tensors' little-endian `f32` bytes back to back. The same
//! format carries model weights (with a `config` section) and lossless
//! saliency-map sidecars (without one). See `docs/container-format.md`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vit::ModelConfig;

pub const FORMAT_TAG: &str = "saccade-tensors/1";
pub const DTYPE_F32: &str = "f32";

/// One manifest line: where a tensor lives in the blob.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub dtype: String,
    pub shape: Vec<usize>,
    pub offset: u64,
}

impl TensorEntry {
    pub fn num_elements(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn byte_len(&self) -> u64 {
        self.num_elements() as u64 * 4
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<ModelConfig>,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl NamedTensor {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self {
            name: name.into(),
            shape,
            data,
        }
    }
}

/// Parses a manifest and checks its format tag.
pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Manifest {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    if manifest.format != FORMAT_TAG {
        return Err(Error::Manifest {
            path: path.to_path_buf(),
            reason: format!("unsupported format tag `{}` (expected `{FORMAT_TAG}`)", manifest.format),
        });
    }
    Ok(manifest)
}

/// An in-memory container: optional model config plus ordered tensors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TensorArchive {
    pub config: Option<ModelConfig>,
    pub tensors: Vec<NamedTensor>,
}

impl TensorArchive {
    pub fn get(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    /// Manifest and blob bytes; tensors are laid out contiguously in order.
    pub fn encode(&self) -> (Manifest, Vec<u8>) {
        let total: usize = self.tensors.iter().map(|t| t.data.len() * 4).sum();
        let mut blob = Vec::with_capacity(total);
        let mut entries = Vec::with_capacity(self.tensors.len());
        for t in &self.tensors {
            entries.push(TensorEntry {
                name: t.name.clone(),
                dtype: DTYPE_F32.to_string(),
                shape: t.shape.clone(),
                offset: blob.len() as u64,
            });
            for v in &t.data {
                blob.extend_from_slice(&v.to_le_bytes());
            }
        }
        let manifest = Manifest {
            format: FORMAT_TAG.to_string(),
            config: self.config,
            tensors: entries,
        };
        (manifest, blob)
    }

    pub fn write(&self, manifest_path: &Path, blob_path: &Path) -> Result<()> {
        let (manifest, blob) = self.encode();
        let mut text = serde_json::to_string_pretty(&manifest)
            .map_err(|e| Error::contract(format!("manifest serialization failed: {e}")))?;
        text.push('\n');
        fs::write(manifest_path, text).map_err(|e| Error::io(manifest_path, e))?;
        fs::write(blob_path, blob).map_err(|e| Error::io(blob_path, e))?;
        Ok(())
    }

    pub fn read(manifest_path: &Path, blob_path: &Path) -> Result<Self> {
        let manifest = read_manifest(manifest_path)?;
        let blob = fs::read(blob_path).map_err(|e| Error::io(blob_path, e))?;
        Self::decode(&manifest, &blob)
    }

    /// Validates extents and dtype tags, then copies each tensor out of `blob`.
    pub fn decode(manifest: &Manifest, blob: &[u8]) -> Result<Self> {
        let mut extents: Vec<(u64, u64, &str)> = Vec::with_capacity(manifest.tensors.len());
        let mut tensors = Vec::with_capacity(manifest.tensors.len());
        for entry in &manifest.tensors {
            let fail = |reason: String| Error::Load {
                name: entry.name.clone(),
                reason,
            };
            if entry.dtype != DTYPE_F32 {
                return Err(fail(format!("unknown dtype tag `{}`", entry.dtype)));
            }
            if tensors.iter().any(|t: &NamedTensor| t.name == entry.name) {
                return Err(fail("listed more than once".into()));
            }
            let start = entry.offset;
            let end = start + entry.byte_len();
            if end > blob.len() as u64 {
                return Err(fail(format!(
                    "extent {start}..{end} exceeds blob length {} (truncated blob?)",
                    blob.len()
                )));
            }
            extents.push((start, end, &entry.name));
            let bytes = &blob[start as usize..end as usize];
            let data = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            tensors.push(NamedTensor::new(entry.name.clone(), entry.shape.clone(), data));
        }
        extents.sort();
        for pair in extents.windows(2) {
            let ((_, end_a, name_a), (start_b, _, name_b)) = (pair[0], pair[1]);
            if start_b < end_a {
                return Err(Error::Load {
                    name: name_b.to_string(),
                    reason: format!("extent overlaps tensor `{name_a}`"),
                });
            }
        }
        Ok(Self {
            config: manifest.config,
            tensors,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> TensorArchive {
        TensorArchive {
            config: None,
            tensors: vec![
                NamedTensor::new("a", vec![2, 3], vec![1.0, -2.0, 3.5, 0.0, -0.0, f32::MIN_POSITIVE]),
                NamedTensor::new("b", vec![1], vec![42.0]),
            ],
        }
    }

    #[test]
    fn rejects_unknown_dtype() {
        let (mut manifest, blob) = sample().encode();
        manifest.tensors[1].dtype = "f16".into();
        let err = TensorArchive::decode(&manifest, &blob).unwrap_err();
        assert!(err.to_string().contains("`b`") && err.to_string().contains("f16"));
    }

    #[test]
    fn rejects_truncated_blob() {
        let (manifest, blob) = sample().encode();
        let err = TensorArchive::decode(&manifest, &blob[..blob.len() - 2]).unwrap_err();
        assert!(matches!(err, Error::Load { ref name, .. } if name == "b"));
    }

    #[test]
    fn rejects_overlap() {
        let (mut manifest, blob) = sample().encode();
        manifest.tensors[1].offset = 4;
        let err = TensorArchive::decode(&manifest, &blob).unwrap_err();
        assert!(err.to_string().contains("overlaps"));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let (m, b) = (dir.path().join("x.json"), dir.path().join("x.bin"));
        let archive = sample();
        archive.write(&m, &b).unwrap();
        let back = TensorArchive::read(&m, &b).unwrap();
        for (x, y) in archive.tensors.iter().zip(&back.tensors) {
            let bits = |t: &NamedTensor| t.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(x), bits(y));
        }
    }

    proptest! {
        #[test]
        fn encode_decode_is_bit_exact(bits in proptest::collection::vec(any::<u32>(), 0..64)) {
            let data: Vec<f32> = bits.iter().map(|&b| f32::from_bits(b)).collect();
            let archive = TensorArchive {
                config: None,
                tensors: vec![NamedTensor::new("t", vec![data.len()], data)],
            };
            let (manifest, blob) = archive.encode();
            let back = TensorArchive::decode(&manifest, &blob).unwrap();
            let back_bits: Vec<u32> = back.tensors[0].data.iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(back_bits, bits);
        }
    }
}
