use std::collections::BTreeSet;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ModelConfig;
use crate::container::{NamedTensor, TensorArchive};
use crate::error::{Error, Result};

/// A validated weight container: every tensor required by `config` is present
/// with the exact expected shape.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightContainer {
    config: ModelConfig,
    archive: TensorArchive,
}

impl WeightContainer {
    pub fn from_archive(archive: TensorArchive) -> Result<Self> {
        let config = archive.config.ok_or_else(|| Error::Load {
            name: "<config>".into(),
            reason: "manifest has no model config section".into(),
        })?;
        config.validate().map_err(|e| Error::Load {
            name: "<config>".into(),
            reason: e.to_string(),
        })?;
        let expected = config.expected_tensors();
        for (name, shape) in &expected {
            let t = archive.get(name).ok_or_else(|| Error::Load {
                name: name.clone(),
                reason: "missing from manifest".into(),
            })?;
            if &t.shape != shape {
                return Err(Error::Load {
                    name: name.clone(),
                    reason: format!("shape {:?} does not match expected {:?}", t.shape, shape),
                });
            }
            if let Some(i) = t.data.iter().position(|v| !v.is_finite()) {
                return Err(Error::Load {
                    name: name.clone(),
                    reason: format!("non-finite value at element {i}"),
                });
            }
        }
        let known: BTreeSet<&str> = expected.iter().map(|(n, _)| n.as_str()).collect();
        for t in &archive.tensors {
            if !known.contains(t.name.as_str()) {
                log::warn!("ignoring unexpected tensor `{}` in weight container", t.name);
            }
        }
        Ok(Self { config, archive })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn archive(&self) -> &TensorArchive {
        &self.archive
    }

    /// Tensor by name. Panics on names outside the validated set.
    pub fn tensor(&self, name: &str) -> &NamedTensor {
        self.archive
            .get(name)
            .unwrap_or_else(|| panic!("tensor `{name}` not present in validated container"))
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut NamedTensor> {
        self.archive.tensors.iter_mut().find(|t| t.name == name)
    }

    pub fn save(&self, manifest_path: &Path, blob_path: &Path) -> Result<()> {
        self.archive.write(manifest_path, blob_path)
    }

    /// Random weights for tests, benchmarks and demos. Linear layers draw from
    /// U(-1/sqrt(fan_in), 1/sqrt(fan_in)), norms start at unit gain.
    pub fn random(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = config
            .expected_tensors()
            .into_iter()
            .map(|(name, shape)| {
                let n: usize = shape.iter().product();
                let data = if name.ends_with("norm1.weight")
                    || name.ends_with("norm2.weight")
                    || name == "norm.weight"
                {
                    (0..n).map(|_| 1.0 + rng.random_range(-0.1f32..0.1)).collect()
                } else {
                    let fan_in = if shape.len() > 1 {
                        shape[1..].iter().product::<usize>()
                    } else {
                        config.embed_dim
                    };
                    let bound = 1.0 / (fan_in as f32).sqrt();
                    (0..n).map(|_| rng.random_range(-bound..bound)).collect()
                };
                NamedTensor::new(name, shape, data)
            })
            .collect();
        Self::from_archive(TensorArchive {
            config: Some(config),
            tensors,
        })
    }
}

/// Reads and validates a weight container from its manifest and blob files.
pub fn load_weights(manifest_path: &Path, blob_path: &Path) -> Result<WeightContainer> {
    WeightContainer::from_archive(TensorArchive::read(manifest_path, blob_path)?)
}
