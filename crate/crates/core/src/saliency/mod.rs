//! Priority maps that drive fixation selection.

mod graph;

use std::fmt;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use graph::{graph_saliency, graph_saliency_detailed, ChannelActivation, GraphSaliency, GraphSaliencyParams, MarkovChain, Stationary};

use crate::container::{NamedTensor, TensorArchive};
use crate::error::{ensure, Error, Result};
use crate::image::{read_pgm, write_pgm, ImageTensor};
use crate::tensor::{bilinear_resize, Grid2D};
use crate::vit::{AttentionCapture, VisionTransformer};

/// Where a saliency map came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceTag {
    Attention,
    Random,
    Center,
    GraphBased,
    Imported,
}

impl SourceTag {
    pub fn as_str(self) -> &'static str {
        match self {
            SourceTag::Attention => "attention",
            SourceTag::Random => "random",
            SourceTag::Center => "center",
            SourceTag::GraphBased => "graph_based",
            SourceTag::Imported => "imported",
        }
    }
}

impl fmt::Display for SourceTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// How an attention map was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttentionProvenance {
    pub layer: usize,
    /// Side of the (square) input the attention pass ran on.
    pub resolution: usize,
    /// Patch grid of that pass before resizing.
    pub native_grid: (usize, usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyGrid {
    pub grid: Grid2D,
    pub source: SourceTag,
    pub provenance: Option<AttentionProvenance>,
}

impl SaliencyGrid {
    pub fn new(grid: Grid2D, source: SourceTag) -> Result<Self> {
        ensure(grid.is_finite(), || "saliency grid contains non-finite values".into())?;
        ensure(!grid.is_empty(), || "saliency grid is empty".into())?;
        Ok(Self {
            grid,
            source,
            provenance: None,
        })
    }
}

/// Elementwise maximum over the heads of a capture.
pub fn fuse_heads_max(capture: &AttentionCapture) -> Result<SaliencyGrid> {
    let first = capture
        .per_head
        .first()
        .ok_or_else(|| Error::contract("attention capture has no heads"))?;
    let mut fused = first.clone();
    for head in &capture.per_head[1..] {
        ensure(head.height() == fused.height() && head.width() == fused.width(), || {
            "heads of one capture have different grid sizes".into()
        })?;
        for (dst, &v) in fused.values_mut().iter_mut().zip(head.values()) {
            if v > *dst {
                *dst = v;
            }
        }
    }
    SaliencyGrid::new(fused, SourceTag::Attention)
}

/// Fused attention map at the native grid of an `att_resolution` input,
/// plus the provenance needed to interpret it.
pub fn native_attention_map(
    img: &ImageTensor,
    vit: &VisionTransformer,
    layer: usize,
    att_resolution: usize,
) -> Result<SaliencyGrid> {
    let p = vit.config().patch_size;
    ensure(att_resolution >= p && att_resolution.is_multiple_of(p), || {
        format!("attention resolution {att_resolution} is not a multiple of patch size {p}")
    })?;
    ensure(img.height() == img.width(), || {
        format!("attention saliency expects a square image, got {}x{}", img.height(), img.width())
    })?;
    let resized;
    let input = if att_resolution < img.height() {
        resized = img.resized(att_resolution, att_resolution)?;
        &resized
    } else {
        img
    };
    let seq = vit.patchify_embed(input)?;
    let out = vit.forward(&seq, layer)?;
    let mut sal = fuse_heads_max(&out.capture)?;
    sal.provenance = Some(AttentionProvenance {
        layer,
        resolution: input.height(),
        native_grid: seq.grid,
    });
    Ok(sal)
}

/// Attention-driven saliency on the classification grid of `img`. Maps
/// computed at a lower resolution are resized back with aligned corners.
pub fn attention_saliency(
    img: &ImageTensor,
    vit: &VisionTransformer,
    layer: usize,
    att_resolution: usize,
) -> Result<SaliencyGrid> {
    let native = native_attention_map(img, vit, layer, att_resolution)?;
    let p = vit.config().patch_size;
    resize_to_grid(native, img.height() / p, img.width() / p)
}

/// Resizes a map to `h x w` unless it already has that shape.
pub fn resize_to_grid(mut sal: SaliencyGrid, h: usize, w: usize) -> Result<SaliencyGrid> {
    if sal.grid.height() != h || sal.grid.width() != w {
        sal.grid = bilinear_resize(&sal.grid, h, w)?;
    }
    Ok(sal)
}

/// Shannon entropy (natural log) of a nonnegative map after renormalizing it
/// to a distribution over cells.
pub fn attention_entropy(map: &Grid2D) -> Result<f64> {
    ensure(map.values().iter().all(|&v| v >= 0.0 && v.is_finite()), || {
        "entropy input must be finite and nonnegative".into()
    })?;
    let total: f64 = map.values().iter().map(|&v| v as f64).sum();
    ensure(total > 0.0, || "entropy of an all-zero map is undefined".into())?;
    Ok(map
        .values()
        .iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| {
            let p = v as f64 / total;
            -p * p.ln()
        })
        .sum())
}

/// Entropy of every head of a capture.
pub fn head_entropies(capture: &AttentionCapture) -> Result<Vec<f64>> {
    capture.per_head.iter().map(attention_entropy).collect()
}

/// I.i.d. U(0, 1) values from ChaCha8 seeded with `seed`.
pub fn random_saliency(seed: u64, h: usize, w: usize) -> Result<SaliencyGrid> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = (0..h * w).map(|_| rng.random::<f32>()).collect();
    SaliencyGrid::new(Grid2D::new(h, w, values)?, SourceTag::Random)
}

/// Isotropic Gaussian bump centered on the grid, `sigma` in cells.
pub fn center_saliency(h: usize, w: usize, sigma: f64) -> Result<SaliencyGrid> {
    ensure(sigma > 0.0 && sigma.is_finite(), || format!("sigma must be positive, got {sigma}"))?;
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let grid = Grid2D::from_fn(h, w, |y, x| {
        let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
        (-d2 / (2.0 * sigma * sigma)).exp() as f32
    });
    SaliencyGrid::new(grid, SourceTag::Center)
}

/// Min-max scaling to bytes: min maps to 0, max to 255.
pub fn to_gray_bytes(map: &Grid2D) -> Vec<u8> {
    let (lo, hi) = (map.min() as f64, map.max() as f64);
    let span = hi - lo;
    map.values()
        .iter()
        .map(|&v| {
            if span > 0.0 {
                ((v as f64 - lo) / span * 255.0).round() as u8
            } else {
                0
            }
        })
        .collect()
}

/// Paths written by [`export_saliency`].
#[derive(Debug, Clone)]
pub struct SaliencyFiles {
    pub pgm: PathBuf,
    pub manifest: PathBuf,
    pub blob: PathBuf,
}

impl SaliencyFiles {
    pub fn for_stem(dir: &Path, stem: &str) -> Self {
        Self {
            pgm: dir.join(format!("{stem}.pgm")),
            manifest: dir.join(format!("{stem}.saliency.json")),
            blob: dir.join(format!("{stem}.saliency.bin")),
        }
    }
}

pub const SIDECAR_TENSOR: &str = "saliency";

/// Writes an 8-bit PGM preview and the lossless sidecar container.
pub fn export_saliency(map: &Grid2D, dir: &Path, stem: &str) -> Result<SaliencyFiles> {
    let files = SaliencyFiles::for_stem(dir, stem);
    write_pgm(&files.pgm, map.width(), map.height(), &to_gray_bytes(map))?;
    let archive = TensorArchive {
        config: None,
        tensors: vec![NamedTensor::new(
            SIDECAR_TENSOR,
            vec![map.height(), map.width()],
            map.values().to_vec(),
        )],
    };
    archive.write(&files.manifest, &files.blob)?;
    Ok(files)
}

/// Reads an externally produced map (sidecar manifest `.json` with its `.bin`
/// blob, or any PGM) and resizes it to `h x w`.
pub fn import_saliency(path: &Path, h: usize, w: usize) -> Result<SaliencyGrid> {
    let grid = if path.extension().is_some_and(|e| e == "json") {
        let blob = path.with_extension("bin");
        let archive = TensorArchive::read(path, &blob)?;
        let t = archive.get(SIDECAR_TENSOR).ok_or_else(|| Error::Load {
            name: SIDECAR_TENSOR.into(),
            reason: format!("missing from {}", path.display()),
        })?;
        ensure(t.shape.len() == 2, || format!("sidecar tensor has shape {:?}", t.shape))?;
        Grid2D::new(t.shape[0], t.shape[1], t.data.clone())?
    } else {
        let (gh, gw, values) = read_pgm(path)?;
        Grid2D::new(gh, gw, values)?
    };
    let sal = SaliencyGrid::new(grid, SourceTag::Imported)?;
    resize_to_grid(sal, h, w)
}
