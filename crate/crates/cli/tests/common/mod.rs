#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use saccade_core::image::write_ppm;
use saccade_core::{ModelConfig, RgbImage, WeightContainer};

pub fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_saccade"));
    cmd.env_remove("SACCADE_DATASET").env("RUST_LOG", "error");
    cmd
}

pub fn run_ok(args: &[&str]) -> Output {
    let out = bin().args(args).output().expect("binary runs");
    assert!(
        out.status.success(),
        "saccade {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// Random toy weights with `classes` outputs; returns the manifest path.
pub fn toy_weights(dir: &Path, classes: usize) -> PathBuf {
    let config = ModelConfig {
        num_classes: classes,
        ..ModelConfig::toy()
    };
    let manifest = dir.join("toy.json");
    WeightContainer::random(config, 11)
        .unwrap()
        .save(&manifest, &dir.join("toy.bin"))
        .unwrap();
    manifest
}

/// `classes x per_class` noisy images with a bright square, 240x300 pixels.
pub fn toy_dataset(dir: &Path, classes: usize, per_class: usize) -> PathBuf {
    let root = dir.join("data");
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for c in 0..classes {
        let class_dir = root.join(format!("class{c}"));
        std::fs::create_dir_all(&class_dir).unwrap();
        for i in 0..per_class {
            let (h, w) = (240, 300);
            let (sy, sx) = (rng.random_range(20..180), rng.random_range(40..220));
            let tint = c as f32 / classes as f32;
            let mut data = Vec::with_capacity(h * w * 3);
            for y in 0..h {
                for x in 0..w {
                    let inside = (sy..sy + 40).contains(&y) && (sx..sx + 40).contains(&x);
                    let noise: f32 = rng.random_range(0.0..0.1);
                    if inside {
                        data.extend([0.9, 0.9 - tint * 0.5, 0.2 + noise]);
                    } else {
                        data.extend([0.3 + noise, 0.4, 0.3 + tint * 0.3]);
                    }
                }
            }
            let img = RgbImage::new(h, w, data).unwrap();
            write_ppm(&class_dir.join(format!("img{i}.ppm")), &img).unwrap();
        }
    }
    root
}
