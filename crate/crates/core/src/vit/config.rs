use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

/// Hyper-parameters of a ViT encoder plus its linear readout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub patch_size: usize,
    pub embed_dim: usize,
    pub num_heads: usize,
    pub num_layers: usize,
    pub mlp_ratio: usize,
    pub num_classes: usize,
    /// Side of the square input the positional table was trained for.
    pub image_size: usize,
    pub layer_norm_eps: f32,
}

/// Number of final-layer `[CLS]` vectors concatenated by the classifier.
pub const READOUT_LAYERS: usize = 4;

impl ModelConfig {
    /// ViT-S/16: 384-wide, 6 heads, 12 layers, ImageNet-1k readout.
    pub fn vit_small() -> Self {
        Self {
            patch_size: 16,
            embed_dim: 384,
            num_heads: 6,
            num_layers: 12,
            mlp_ratio: 4,
            num_classes: 1000,
            image_size: 224,
            layer_norm_eps: 1e-6,
        }
    }

    /// Small model used by property tests and demos.
    pub fn toy() -> Self {
        Self {
            patch_size: 16,
            embed_dim: 32,
            num_heads: 4,
            num_layers: 4,
            mlp_ratio: 4,
            num_classes: 10,
            image_size: 224,
            layer_norm_eps: 1e-6,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.num_heads
    }

    pub fn hidden_dim(&self) -> usize {
        self.embed_dim * self.mlp_ratio
    }

    /// Patch-grid side at the native input size.
    pub fn native_grid(&self) -> usize {
        self.image_size / self.patch_size
    }

    pub fn validate(&self) -> Result<()> {
        ensure(self.patch_size >= 1, || "patch_size must be positive".into())?;
        ensure(self.num_heads >= 1 && self.embed_dim.is_multiple_of(self.num_heads), || {
            format!(
                "embed_dim {} is not divisible by num_heads {}",
                self.embed_dim, self.num_heads
            )
        })?;
        ensure(self.num_layers >= 1, || "num_layers must be at least 1".into())?;
        ensure(self.mlp_ratio >= 1, || "mlp_ratio must be at least 1".into())?;
        ensure(self.num_classes >= 1, || "num_classes must be at least 1".into())?;
        ensure(
            self.image_size >= self.patch_size && self.image_size.is_multiple_of(self.patch_size),
            || {
                format!(
                    "patch_size {} does not divide image_size {}",
                    self.patch_size, self.image_size
                )
            },
        )?;
        ensure(self.layer_norm_eps > 0.0, || "layer_norm_eps must be positive".into())?;
        Ok(())
    }

    /// Every tensor a container must hold for this config, with its shape.
    pub fn expected_tensors(&self) -> Vec<(String, Vec<usize>)> {
        let d = self.embed_dim;
        let h = self.hidden_dim();
        let p = self.patch_size;
        let g = self.native_grid();
        let mut out = vec![
            ("patch_embed.proj.weight".to_string(), vec![d, 3, p, p]),
            ("patch_embed.proj.bias".to_string(), vec![d]),
            ("cls_token".to_string(), vec![d]),
            ("pos_embed".to_string(), vec![g * g + 1, d]),
        ];
        for i in 0..self.num_layers {
            let b = |s: &str| format!("blocks.{i}.{s}");
            out.extend([
                (b("norm1.weight"), vec![d]),
                (b("norm1.bias"), vec![d]),
                (b("attn.qkv.weight"), vec![3 * d, d]),
                (b("attn.qkv.bias"), vec![3 * d]),
                (b("attn.proj.weight"), vec![d, d]),
                (b("attn.proj.bias"), vec![d]),
                (b("norm2.weight"), vec![d]),
                (b("norm2.bias"), vec![d]),
                (b("mlp.fc1.weight"), vec![h, d]),
                (b("mlp.fc1.bias"), vec![h]),
                (b("mlp.fc2.weight"), vec![d, h]),
                (b("mlp.fc2.bias"), vec![d]),
            ]);
        }
        out.extend([
            ("norm.weight".to_string(), vec![d]),
            ("norm.bias".to_string(), vec![d]),
            (
                "head.weight".to_string(),
                vec![self.num_classes, READOUT_LAYERS * d],
            ),
            ("head.bias".to_string(), vec![self.num_classes]),
        ]);
        out
    }
}
