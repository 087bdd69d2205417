//! Comparison against reference outputs for converted ViT-S/16 weights.
//! Runs only when `SACCADE_PARITY_DIR` points at a directory holding
//! `weights.{json,bin}` and `fixture.{json,bin}`.

use std::path::PathBuf;

use saccade_core::saliency::fuse_heads_max;
use saccade_core::vit::load_weights;
use saccade_core::{ImageTensor, ModelConfig, TensorArchive, VisionTransformer};

fn fixture_dir() -> Option<PathBuf> {
    let dir = std::env::var_os("SACCADE_PARITY_DIR").map(PathBuf::from);
    if dir.is_none() {
        eprintln!("SACCADE_PARITY_DIR not set; skipping parity check");
    }
    dir
}

#[test]
fn converted_weights_match_reference() {
    let Some(dir) = fixture_dir() else { return };
    let weights = load_weights(&dir.join("weights.json"), &dir.join("weights.bin")).unwrap();
    let cfg = *weights.config();
    assert_eq!(cfg.num_layers, 12);
    assert_eq!(cfg.embed_dim, ModelConfig::vit_small().embed_dim);
    let vit = VisionTransformer::new(&weights).unwrap();
    let fx = TensorArchive::read(&dir.join("fixture.json"), &dir.join("fixture.bin")).unwrap();

    let input = fx.get("input").expect("fixture input");
    assert_eq!(input.shape, vec![3, 224, 224]);
    let plane = 224 * 224;
    let hwc = (0..plane * 3).map(|i| input.data[(i % 3) * plane + i / 3]).collect();
    let img = ImageTensor::new(224, 224, hwc).unwrap();
    let out = vit.forward(&vit.patchify_embed(&img).unwrap(), 12).unwrap();
    let scores = vit.classify(&out.cls_per_layer).unwrap();

    let logits = &fx.get("logits").expect("fixture logits").data;
    assert_eq!(logits.len(), 1000);
    let dot: f64 = scores.logits.iter().zip(logits).map(|(&a, &b)| a as f64 * b as f64).sum();
    let norm = |v: &[f32]| v.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
    let cosine = dot / (norm(&scores.logits) * norm(logits));
    assert!(cosine >= 0.999, "cosine {cosine}");
    let top = (0..1000).fold(0, |b, i| if logits[i] > logits[b] { i } else { b });
    assert_eq!(scores.predicted, top);

    let reference = fx.get("attention").expect("fixture attention");
    assert_eq!(reference.shape, vec![14, 14]);
    let fused = fuse_heads_max(&out.capture).unwrap();
    let (a, b) = (fused.grid.values(), &reference.data);
    let mean = |v: &[f32]| v.iter().map(|&x| x as f64).sum::<f64>() / v.len() as f64;
    let (ma, mb) = (mean(a), mean(b));
    let cov: f64 = a.iter().zip(b).map(|(&x, &y)| (x as f64 - ma) * (y as f64 - mb)).sum();
    let va: f64 = a.iter().map(|&x| (x as f64 - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|&y| (y as f64 - mb).powi(2)).sum();
    let r = cov / (va * vb).sqrt();
    assert!(r >= 0.99, "attention correlation {r}");
}
