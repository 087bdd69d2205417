//! Pre-norm ViT encoder that runs on an arbitrary subset of patch tokens.
//!
//! Hidden patches are removed from the token set before the first block: they
//! contribute no queries, keys or values and their rows are never updated. A
//! fully visible sequence takes the same gather path, so masking nothing is
//! bit-identical to an unmasked pass.

use super::config::READOUT_LAYERS;
use super::{ModelConfig, WeightContainer};
use crate::error::{ensure, Error, Result};
use crate::image::ImageTensor;
use crate::tensor::{
    bilinear_resize, gelu_scalar, layer_norm_into, layer_norm_rows, linear, softmax_in_place,
    Grid2D, Matrix,
};

/// `[CLS]` followed by the patch tokens, with a visibility flag per patch.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence {
    /// `(N + 1) x D`; row 0 is `[CLS]`.
    pub tokens: Matrix,
    /// One flag per patch in row-major grid order.
    pub visible: Vec<bool>,
    /// Patch grid `(rows, cols)`.
    pub grid: (usize, usize),
}

impl TokenSequence {
    pub fn num_patches(&self) -> usize {
        self.visible.len()
    }

    pub fn visible_count(&self) -> usize {
        self.visible.iter().filter(|&&v| v).count()
    }

    /// Replaces the visibility mask.
    pub fn with_visible(mut self, visible: Vec<bool>) -> Result<Self> {
        ensure(visible.len() == self.visible.len(), || {
            format!(
                "mask covers {} cells but sequence has {} patches",
                visible.len(),
                self.visible.len()
            )
        })?;
        self.visible = visible;
        Ok(self)
    }

    /// Patch indices of the visible cells, ascending.
    fn active_cells(&self) -> Vec<usize> {
        (0..self.visible.len()).filter(|&i| self.visible[i]).collect()
    }
}

/// `[CLS]` attention of one layer, one spatial map per head.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionCapture {
    /// 1-based layer index.
    pub layer: usize,
    /// Hidden cells hold zero.
    pub per_head: Vec<Grid2D>,
    /// The `[CLS] -> [CLS]` weight of each head, excluded from the maps.
    pub cls_self_weight: Vec<f32>,
}

impl AttentionCapture {
    /// Total attention mass of each head (`[CLS]` self weight plus all cells).
    pub fn head_mass(&self) -> Vec<f64> {
        self.per_head
            .iter()
            .zip(&self.cls_self_weight)
            .map(|(g, &s)| s as f64 + g.values().iter().map(|&v| v as f64).sum::<f64>())
            .collect()
    }
}

/// Readout of the linear head.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassScores {
    pub logits: Vec<f32>,
    pub probs: Vec<f64>,
    pub predicted: usize,
}

impl ClassScores {
    pub fn from_logits(logits: Vec<f32>) -> Self {
        let predicted = argmax_lowest(&logits);
        let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
        let exps: Vec<f64> = logits.iter().map(|&l| (l as f64 - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        let probs = exps.into_iter().map(|e| e / sum).collect();
        Self {
            logits,
            probs,
            predicted,
        }
    }
}

fn argmax_lowest(v: &[f32]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Result of a full forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    /// Post-block `[CLS]` vector of every layer, first layer first.
    pub cls_per_layer: Vec<Vec<f32>>,
    pub capture: AttentionCapture,
}

struct Block {
    norm1: (Vec<f32>, Vec<f32>),
    qkv: (Matrix, Vec<f32>),
    proj: (Matrix, Vec<f32>),
    norm2: (Vec<f32>, Vec<f32>),
    fc1: (Matrix, Vec<f32>),
    fc2: (Matrix, Vec<f32>),
}

/// Model with weights laid out for `x * W` products.
pub struct VisionTransformer {
    config: ModelConfig,
    /// `(3 * p * p) x D`, input ordered channel, row, column within a patch.
    patch_proj: (Matrix, Vec<f32>),
    cls_token: Vec<f32>,
    pos_embed: Matrix,
    blocks: Vec<Block>,
    norm: (Vec<f32>, Vec<f32>),
    head: (Matrix, Vec<f32>),
}

impl VisionTransformer {
    pub fn new(weights: &WeightContainer) -> Result<Self> {
        let config = *weights.config();
        let vec = |name: &str| weights.tensor(name).data.clone();
        // Stored as (out, in); transposed to (in, out).
        let lin = |name: &str| -> Result<(Matrix, Vec<f32>)> {
            let t = weights.tensor(&format!("{name}.weight"));
            let out = t.shape[0];
            let inp = t.data.len() / out;
            let m = Matrix::new(out, inp, t.data.clone())?.transpose();
            Ok((m, vec(&format!("{name}.bias"))))
        };
        let g = config.native_grid();
        let blocks = (0..config.num_layers)
            .map(|i| {
                let p = |s: &str| format!("blocks.{i}.{s}");
                Ok(Block {
                    norm1: (vec(&p("norm1.weight")), vec(&p("norm1.bias"))),
                    qkv: lin(&p("attn.qkv"))?,
                    proj: lin(&p("attn.proj"))?,
                    norm2: (vec(&p("norm2.weight")), vec(&p("norm2.bias"))),
                    fc1: lin(&p("mlp.fc1"))?,
                    fc2: lin(&p("mlp.fc2"))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            config,
            patch_proj: lin("patch_embed.proj")?,
            cls_token: vec("cls_token"),
            pos_embed: Matrix::new(g * g + 1, config.embed_dim, vec("pos_embed"))?,
            blocks,
            norm: (vec("norm.weight"), vec("norm.bias")),
            head: lin("head")?,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Positional table for a `gh x gw` patch grid; the patch part of the
    /// native table is resampled per channel when the grid differs.
    fn positional_rows(&self, gh: usize, gw: usize) -> Result<Matrix> {
        let g = self.config.native_grid();
        if (gh, gw) == (g, g) {
            return Ok(self.pos_embed.clone());
        }
        let d = self.config.embed_dim;
        let mut out = Matrix::zeros(gh * gw + 1, d);
        out.row_mut(0).copy_from_slice(self.pos_embed.row(0));
        for c in 0..d {
            let native = Grid2D::from_fn(g, g, |y, x| self.pos_embed.get(1 + y * g + x, c));
            let resized = bilinear_resize(&native, gh, gw)?;
            for (i, &v) in resized.values().iter().enumerate() {
                out.row_mut(1 + i)[c] = v;
            }
        }
        Ok(out)
    }

    /// Splits the image into non-overlapping patches, projects them, prepends
    /// `[CLS]` and adds positional embeddings. All patches start visible.
    pub fn patchify_embed(&self, img: &ImageTensor) -> Result<TokenSequence> {
        let p = self.config.patch_size;
        let (h, w) = (img.height(), img.width());
        ensure(h >= p && w >= p && h % p == 0 && w % p == 0, || {
            format!("image {h}x{w} is not divisible into {p}x{p} patches")
        })?;
        let (gh, gw) = (h / p, w / p);
        let n = gh * gw;
        let k = 3 * p * p;
        let mut patches = Matrix::zeros(n, k);
        let data = img.data();
        for py in 0..gh {
            for px in 0..gw {
                let row = patches.row_mut(py * gw + px);
                for c in 0..3 {
                    for ky in 0..p {
                        for kx in 0..p {
                            let (y, x) = (py * p + ky, px * p + kx);
                            row[c * p * p + ky * p + kx] = data[(y * w + x) * 3 + c];
                        }
                    }
                }
            }
        }
        let projected = linear(&patches, &self.patch_proj.0, &self.patch_proj.1)?;
        let pos = self.positional_rows(gh, gw)?;
        let d = self.config.embed_dim;
        let mut tokens = Matrix::zeros(n + 1, d);
        for (dst, (c, q)) in tokens.row_mut(0).iter_mut().zip(self.cls_token.iter().zip(pos.row(0))) {
            *dst = c + q;
        }
        for i in 0..n {
            let pos_row = pos.row(i + 1);
            let src = projected.row(i);
            for (j, dst) in tokens.row_mut(i + 1).iter_mut().enumerate() {
                *dst = src[j] + pos_row[j];
            }
        }
        Ok(TokenSequence {
            tokens,
            visible: vec![true; n],
            grid: (gh, gw),
        })
    }

    /// One transformer block over the visible tokens. Hidden rows are copied
    /// through unchanged.
    pub fn self_attention_layer(
        &self,
        seq: &TokenSequence,
        layer: usize,
        capture: bool,
    ) -> Result<(TokenSequence, Option<AttentionCapture>)> {
        ensure(layer >= 1 && layer <= self.config.num_layers, || {
            format!("layer {layer} outside 1..={}", self.config.num_layers)
        })?;
        let cells = seq.active_cells();
        let rows: Vec<usize> = std::iter::once(0).chain(cells.iter().map(|c| c + 1)).collect();
        let x = seq.tokens.gather_rows(&rows);
        let (y, cap) = self.block(&x, layer, &cells, seq.grid, capture)?;
        let mut out = seq.clone();
        for (i, &r) in rows.iter().enumerate() {
            out.tokens.row_mut(r).copy_from_slice(y.row(i));
        }
        Ok((out, cap))
    }

    /// Runs every layer on the visible tokens, recording the `[CLS]` vector
    /// after each block and the attention of `capture_layer` (1-based).
    pub fn forward(&self, seq: &TokenSequence, capture_layer: usize) -> Result<ForwardOutput> {
        let layers = self.config.num_layers;
        ensure(capture_layer >= 1 && capture_layer <= layers, || {
            format!("capture layer {capture_layer} outside 1..={layers}")
        })?;
        let cells = seq.active_cells();
        let rows: Vec<usize> = std::iter::once(0).chain(cells.iter().map(|c| c + 1)).collect();
        let mut x = seq.tokens.gather_rows(&rows);
        let mut cls_per_layer = Vec::with_capacity(layers);
        let mut captured = None;
        for layer in 1..=layers {
            let (y, cap) = self.block(&x, layer, &cells, seq.grid, layer == capture_layer)?;
            x = y;
            cls_per_layer.push(x.row(0).to_vec());
            if cap.is_some() {
                captured = cap;
            }
        }
        Ok(ForwardOutput {
            cls_per_layer,
            capture: captured.expect("capture layer is in range"),
        })
    }

    fn block(
        &self,
        x: &Matrix,
        layer: usize,
        cells: &[usize],
        grid: (usize, usize),
        capture: bool,
    ) -> Result<(Matrix, Option<AttentionCapture>)> {
        let b = &self.blocks[layer - 1];
        let eps = self.config.layer_norm_eps;
        let heads = self.config.num_heads;
        let hd = self.config.head_dim();
        let d = self.config.embed_dim;
        let n = x.rows();
        let scale = 1.0 / (hd as f64).sqrt();

        let qkv = linear(&layer_norm_rows(x, &b.norm1.0, &b.norm1.1, eps)?, &b.qkv.0, &b.qkv.1)?;
        let mut attended = Matrix::zeros(n, d);
        let mut per_head = Vec::new();
        let mut cls_self = Vec::new();
        let mut scores = vec![0f32; n];
        for h in 0..heads {
            let (qo, ko, vo) = (h * hd, d + h * hd, 2 * d + h * hd);
            for i in 0..n {
                let q = &qkv.row(i)[qo..qo + hd];
                for (j, s) in scores.iter_mut().enumerate() {
                    let k = &qkv.row(j)[ko..ko + hd];
                    let dot: f64 = q.iter().zip(k).map(|(&a, &b)| a as f64 * b as f64).sum();
                    *s = (dot * scale) as f32;
                }
                if !scores.iter().all(|s| s.is_finite()) {
                    return Err(Error::contract(format!(
                        "non-finite attention score in layer {layer}, head {h}"
                    )));
                }
                softmax_in_place(&mut scores);
                let mut acc = vec![0f64; hd];
                for (j, &a) in scores.iter().enumerate() {
                    let v = &qkv.row(j)[vo..vo + hd];
                    for (s, &vv) in acc.iter_mut().zip(v) {
                        *s += a as f64 * vv as f64;
                    }
                }
                for (dst, s) in attended.row_mut(i)[h * hd..(h + 1) * hd].iter_mut().zip(&acc) {
                    *dst = *s as f32;
                }
                if capture && i == 0 {
                    let mut g = Grid2D::filled(grid.0, grid.1, 0.0);
                    for (j, &cell) in cells.iter().enumerate() {
                        g.values_mut()[cell] = scores[j + 1];
                    }
                    per_head.push(g);
                    cls_self.push(scores[0]);
                }
            }
        }
        let projected = linear(&attended, &b.proj.0, &b.proj.1)?;
        let mut x1 = x.clone();
        for (dst, p) in x1.data_mut().iter_mut().zip(projected.data()) {
            *dst += p;
        }

        let mut hidden = linear(&layer_norm_rows(&x1, &b.norm2.0, &b.norm2.1, eps)?, &b.fc1.0, &b.fc1.1)?;
        for v in hidden.data_mut() {
            *v = gelu_scalar(*v);
        }
        let mlp = linear(&hidden, &b.fc2.0, &b.fc2.1)?;
        for (dst, m) in x1.data_mut().iter_mut().zip(mlp.data()) {
            *dst += m;
        }
        let cap = capture.then_some(AttentionCapture {
            layer,
            per_head,
            cls_self_weight: cls_self,
        });
        Ok((x1, cap))
    }

    /// Normalizes the last four `[CLS]` vectors, concatenates them (earliest
    /// first) and applies the linear head.
    pub fn classify(&self, cls_per_layer: &[Vec<f32>]) -> Result<ClassScores> {
        ensure(cls_per_layer.len() >= READOUT_LAYERS, || {
            format!(
                "classifier needs {READOUT_LAYERS} layers of [CLS] vectors, got {}",
                cls_per_layer.len()
            )
        })?;
        let d = self.config.embed_dim;
        let eps = self.config.layer_norm_eps;
        let mut features = vec![0f32; READOUT_LAYERS * d];
        for (chunk, cls) in features
            .chunks_mut(d)
            .zip(&cls_per_layer[cls_per_layer.len() - READOUT_LAYERS..])
        {
            ensure(cls.len() == d, || format!("[CLS] vector has length {} not {d}", cls.len()))?;
            layer_norm_into(cls, &self.norm.0, &self.norm.1, eps, chunk);
        }
        let x = Matrix::new(1, features.len(), features)?;
        let logits = linear(&x, &self.head.0, &self.head.1)?.into_data();
        Ok(ClassScores::from_logits(logits))
    }

    /// Forward pass plus classification of the visible subset of `seq`.
    pub fn classify_sequence(
        &self,
        seq: &TokenSequence,
        capture_layer: usize,
    ) -> Result<(ClassScores, AttentionCapture)> {
        let out = self.forward(seq, capture_layer)?;
        Ok((self.classify(&out.cls_per_layer)?, out.capture))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toy(layers: usize, seed: u64) -> (WeightContainer, VisionTransformer) {
        let cfg = ModelConfig {
            num_layers: layers,
            image_size: 64,
            ..ModelConfig::toy()
        };
        let w = WeightContainer::random(cfg, seed).unwrap();
        let vit = VisionTransformer::new(&w).unwrap();
        (w, vit)
    }

    fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> ImageTensor {
        ImageTensor::new(h, w, (0..h * w * 3).map(|_| rng.random_range(-2.0f32..2.0)).collect()).unwrap()
    }

    #[test]
    fn grid_sizes() {
        let (_, vit) = toy(1, 0);
        let seq = vit.patchify_embed(&ImageTensor::filled(32, 32, [0.0; 3])).unwrap();
        assert_eq!((seq.grid, seq.num_patches()), ((2, 2), 4));
        let seq = vit.patchify_embed(&ImageTensor::filled(224, 224, [0.0; 3])).unwrap();
        assert_eq!((seq.grid, seq.num_patches()), ((14, 14), 196));
        assert!(vit.patchify_embed(&ImageTensor::filled(40, 32, [0.0; 3])).is_err());
    }

    #[test]
    fn zero_image_tokens_equal_bias() {
        let (mut w, _) = toy(1, 1);
        w.tensor_mut("pos_embed").unwrap().data.fill(0.0);
        let vit = VisionTransformer::new(&w).unwrap();
        let seq = vit.patchify_embed(&ImageTensor::filled(64, 64, [0.0; 3])).unwrap();
        let bias = &w.tensor("patch_embed.proj.bias").data;
        for i in 1..=16 {
            assert_eq!(seq.tokens.row(i), &bias[..]);
        }
    }

    #[test]
    fn capture_mass_is_one() {
        let (_, vit) = toy(2, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let seq = vit.patchify_embed(&random_image(&mut rng, 64, 64)).unwrap();
        let (_, cap) = vit.self_attention_layer(&seq, 1, true).unwrap();
        for m in cap.unwrap().head_mass() {
            assert!((m - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn single_visible_patch_two_way_softmax() {
        let (_, vit) = toy(2, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut mask = vec![false; 16];
        mask[6] = true;
        let seq = vit
            .patchify_embed(&random_image(&mut rng, 64, 64))
            .unwrap()
            .with_visible(mask)
            .unwrap();
        let out = vit.forward(&seq, 2).unwrap();
        for (g, &s) in out.capture.per_head.iter().zip(&out.capture.cls_self_weight) {
            assert!(((g.values()[6] + s) as f64 - 1.0).abs() < 1e-5);
            assert!(g.values().iter().enumerate().all(|(i, &v)| i == 6 || v == 0.0));
        }
    }

    #[test]
    fn hidden_rows_are_untouched_by_a_layer() {
        let (_, vit) = toy(1, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mask: Vec<bool> = (0..16).map(|i| i % 3 == 0).collect();
        let seq = vit
            .patchify_embed(&random_image(&mut rng, 64, 64))
            .unwrap()
            .with_visible(mask.clone())
            .unwrap();
        let (out, _) = vit.self_attention_layer(&seq, 1, false).unwrap();
        for (i, &v) in mask.iter().enumerate() {
            if !v {
                assert_eq!(out.tokens.row(i + 1), seq.tokens.row(i + 1));
            } else {
                assert_ne!(out.tokens.row(i + 1), seq.tokens.row(i + 1));
            }
        }
    }

    #[test]
    fn layerwise_matches_forward() {
        let (_, vit) = toy(3, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mask: Vec<bool> = (0..16).map(|i| i % 2 == 1).collect();
        let seq = vit
            .patchify_embed(&random_image(&mut rng, 64, 64))
            .unwrap()
            .with_visible(mask)
            .unwrap();
        let full = vit.forward(&seq, 3).unwrap();
        let mut cur = seq;
        for layer in 1..=3 {
            let (next, _) = vit.self_attention_layer(&cur, layer, false).unwrap();
            assert_eq!(next.tokens.row(0), &full.cls_per_layer[layer - 1][..]);
            cur = next;
        }
    }

    #[test]
    fn forward_layer_count_and_capture_range() {
        let (_, vit) = toy(1, 10);
        let seq = vit.patchify_embed(&ImageTensor::filled(32, 32, [0.1; 3])).unwrap();
        let out = vit.forward(&seq, 1).unwrap();
        assert_eq!(out.cls_per_layer.len(), 1);
        assert_eq!(out.capture.layer, 1);
        assert!(vit.forward(&seq, 0).is_err());
        assert!(vit.forward(&seq, 2).is_err());
        assert!(vit.classify(&out.cls_per_layer).is_err());
    }

    #[test]
    fn capture_layer_does_not_change_logits() {
        let (_, vit) = toy(6, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let seq = vit.patchify_embed(&random_image(&mut rng, 64, 64)).unwrap();
        let (a, _) = vit.classify_sequence(&seq, 3).unwrap();
        let (b, _) = vit.classify_sequence(&seq, 6).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn head_bias_controls_prediction() {
        let (mut w, _) = toy(4, 13);
        w.tensor_mut("head.weight").unwrap().data.fill(0.0);
        w.tensor_mut("head.bias").unwrap().data.fill(0.0);
        let vit = VisionTransformer::new(&w).unwrap();
        let seq = vit.patchify_embed(&ImageTensor::filled(32, 32, [0.3; 3])).unwrap();
        let (scores, _) = vit.classify_sequence(&seq, 4).unwrap();
        assert_eq!(scores.predicted, 0);
        assert!(scores.probs.iter().all(|&p| (p - 0.1).abs() < 1e-12));

        w.tensor_mut("head.bias").unwrap().data[7] = 1.0;
        let vit = VisionTransformer::new(&w).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let seq = vit.patchify_embed(&random_image(&mut rng, 32, 32)).unwrap();
        assert_eq!(vit.classify_sequence(&seq, 4).unwrap().0.predicted, 7);
    }

    #[test]
    fn ties_break_to_lowest_index() {
        assert_eq!(ClassScores::from_logits(vec![1.0, 3.0, 3.0, 2.0]).predicted, 1);
    }

    #[test]
    fn low_resolution_input_uses_resampled_positions() {
        let (_, vit) = toy(1, 15);
        let seq = vit.patchify_embed(&ImageTensor::filled(32, 48, [0.0; 3])).unwrap();
        assert_eq!(seq.grid, (2, 3));
        // cls row keeps the native cls position entry.
        let cls: Vec<f32> = vit.cls_token.iter().zip(vit.pos_embed.row(0)).map(|(a, b)| a + b).collect();
        assert_eq!(seq.tokens.row(0), &cls[..]);
    }
}
