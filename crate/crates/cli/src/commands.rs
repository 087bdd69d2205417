use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use saccade_core::container::read_manifest;
use saccade_core::harness::{
    export_crops, file_stem, load_images, run_dataset, saliency_for, summarize, write_run_outputs, CropRequest,
    DatasetIndex, LoadedImage, Summary, SweepConfig,
};
use saccade_core::saccade::run_saccade_sequence;
use saccade_core::saliency::export_saliency;
use saccade_core::vit::load_weights;
use saccade_core::{FoveaSpec, ModelConfig, TensorArchive, VisionTransformer, WeightContainer};

use crate::config::{parse_list, usage, ConfigFile, RunConfig, SourceKind};
use crate::{ExportKind, Preset, SweepArgs};

struct Prepared {
    vit: VisionTransformer,
    images: Vec<LoadedImage>,
}

fn prepare(cfg: &RunConfig) -> anyhow::Result<Prepared> {
    let weights = load_weights(&cfg.weights, &cfg.blob)
        .with_context(|| format!("loading weights from {}", cfg.weights.display()))?;
    let vit = VisionTransformer::new(&weights)?;
    let index = DatasetIndex::scan(&cfg.dataset, cfg.per_class_limit)
        .with_context(|| format!("scanning dataset {}", cfg.dataset.display()))?;
    let classes = vit.config().num_classes;
    if index.num_classes() > classes {
        return Err(usage(format!(
            "dataset has {} classes but the model predicts {classes}",
            index.num_classes()
        )));
    }
    if index.is_empty() {
        log::warn!("no images found under {}", cfg.dataset.display());
    }
    let images = load_images(&index, &saccade_core::PreprocessConfig::default())?;
    Ok(Prepared { vit, images })
}

fn print_table(summary: &Summary) {
    let s = &summary.settings;
    println!(
        "source {}, fovea {}, layer {}, attention at {} px: {} images, {} failed",
        s.source,
        s.fovea,
        s.layer,
        s.att_resolution,
        summary.num_images,
        summary.failures.len()
    );
    println!("full-image accuracy {:.4}", summary.full_image_accuracy);
    let row = |label: &str, values: &[f64]| {
        let cells: String = values.iter().map(|v| format!("{v:>8.4}")).collect();
        println!("{label:<12}{cells}");
    };
    let header: String = (1..=summary.accuracy.len()).map(|i| format!("{i:>8}")).collect();
    println!("{:<12}{header}", "saccade");
    row("accuracy", &summary.accuracy);
    row("cumulative", &summary.cumulative_accuracy);
    row("revealed", &summary.mean_revealed_fraction);
}

pub fn run(cfg: &RunConfig) -> anyhow::Result<bool> {
    let p = prepare(cfg)?;
    let settings = cfg.settings(p.vit.config().num_layers)?;
    let output = run_dataset(&p.images, &p.vit, &settings);
    let summary = summarize(&output, &settings)?;
    write_run_outputs(&cfg.out, &output, &summary)?;
    print_table(&summary);
    for (id, err) in &output.failures {
        eprintln!("failed: {id}: {err}");
    }
    Ok(output.failures.is_empty())
}

pub fn sweep(cfg: &RunConfig, args: &SweepArgs, file: &ConfigFile) -> anyhow::Result<bool> {
    let p = prepare(cfg)?;
    let base = cfg.settings(p.vit.config().num_layers)?;
    let list = |flag: &Option<String>, key: &str| -> anyhow::Result<Option<Vec<usize>>> {
        match flag {
            Some(text) => parse_list(key, text).map(Some),
            None => file.get_list(key),
        }
    };
    let sources: Vec<SourceKind> = match &args.sources {
        Some(text) => parse_list("sources", text)?,
        None => file.get_list("sources")?.unwrap_or_else(|| vec![cfg.source]),
    };
    let grid = SweepConfig {
        layers: list(&args.layers, "layers")?.unwrap_or_else(|| vec![base.layer]),
        resolutions: list(&args.resolutions, "resolutions")?.unwrap_or_else(|| vec![base.att_resolution]),
        foveas: list(&args.foveas, "foveas")?.unwrap_or_else(|| vec![base.fovea]),
        sources: sources
            .into_iter()
            .map(|k| cfg.source_for(k))
            .collect::<anyhow::Result<_>>()?,
    };
    let layers = p.vit.config().num_layers;
    if let Some(bad) = grid.layers.iter().find(|&&l| l == 0 || l > layers) {
        return Err(usage(format!("sweep layer {bad} outside 1..={layers}")));
    }
    let report = saccade_core::harness::sweep(&p.images, &p.vit, &base, &grid, &cfg.out)?;
    println!("{:<28}{:>10}{:>10}{:>10}", "point", "full", "first", "last cum");
    for (point, s) in &report.completed {
        println!(
            "{:<28}{:>10.4}{:>10.4}{:>10.4}",
            point.label(),
            s.full_image_accuracy,
            s.accuracy.first().copied().unwrap_or(0.0),
            s.cumulative_accuracy.last().copied().unwrap_or(0.0)
        );
    }
    for (point, err) in &report.failed {
        eprintln!("failed point {}: {err}", point.label());
    }
    Ok(report.all_ok())
}

pub fn export(cfg: &RunConfig, what: ExportKind) -> anyhow::Result<bool> {
    let p = prepare(cfg)?;
    let settings = cfg.settings(p.vit.config().num_layers)?;
    fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
    let mut ok = true;
    let mut firsts = Vec::new();
    for img in &p.images {
        let id = &img.entry.image_id;
        let result = saliency_for(&settings, &p.vit, &img.tensor, id).and_then(|sal| match what {
            ExportKind::Maps => export_saliency(&sal.grid, &cfg.out, &file_stem(id)).map(|_| None),
            ExportKind::Crops => {
                let grid = (sal.grid.height(), sal.grid.width());
                let spec = FoveaSpec::new(settings.fovea, grid, p.vit.config().patch_size)?;
                let trace = run_saccade_sequence(&sal, &spec, 1)?;
                Ok(Some((img, trace.centers[0], spec)))
            }
        });
        match result {
            Ok(Some(first)) => firsts.push(first),
            Ok(None) => {}
            Err(e) => {
                eprintln!("failed: {id}: {e}");
                ok = false;
            }
        }
    }
    if what == ExportKind::Crops {
        let requests: Vec<CropRequest<'_>> = firsts
            .iter()
            .map(|(img, center, spec)| CropRequest {
                image_id: &img.entry.image_id,
                class_index: img.entry.class_index,
                rgb: &img.rgb,
                center: *center,
                spec: *spec,
            })
            .collect();
        let written = export_crops(&cfg.out, &requests)?;
        println!("wrote {} crops to {}", written.len(), cfg.out.display());
    } else {
        println!("wrote maps to {}", cfg.out.display());
    }
    Ok(ok)
}

pub fn inspect(manifest_path: &Path, blob: Option<PathBuf>) -> anyhow::Result<bool> {
    let manifest = read_manifest(manifest_path)?;
    println!("format {}", manifest.format);
    if let Some(c) = &manifest.config {
        println!(
            "config patch {} embed_dim {} heads {} layers {} mlp_ratio {} classes {} image {}",
            c.patch_size, c.embed_dim, c.num_heads, c.num_layers, c.mlp_ratio, c.num_classes, c.image_size
        );
    }
    let mut params = 0usize;
    for t in &manifest.tensors {
        params += t.num_elements();
        println!("{:<40} {:<5} {:<20} offset {}", t.name, t.dtype, format!("{:?}", t.shape), t.offset);
    }
    println!("{} tensors, {params} values", manifest.tensors.len());
    let blob = blob.unwrap_or_else(|| manifest_path.with_extension("bin"));
    if manifest.config.is_some() {
        load_weights(manifest_path, &blob)?;
        println!("weights valid");
    } else {
        TensorArchive::read(manifest_path, &blob)?;
        println!("container valid");
    }
    Ok(true)
}

pub fn random_weights(out: &Path, preset: Preset, seed: u64, classes: Option<usize>) -> anyhow::Result<bool> {
    let mut config = match preset {
        Preset::Toy => ModelConfig::toy(),
        Preset::VitSmall => ModelConfig::vit_small(),
    };
    if let Some(c) = classes {
        config.num_classes = c;
    }
    let weights = WeightContainer::random(config, seed)?;
    let blob = out.with_extension("bin");
    weights.save(out, &blob)?;
    println!("wrote {} and {}", out.display(), blob.display());
    Ok(true)
}
