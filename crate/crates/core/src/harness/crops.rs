use std::fs;
use std::path::{Path, PathBuf};

use super::file_stem;
use crate::error::{Error, Result};
use crate::image::{write_ppm, RgbImage};
use crate::saccade::{Cell, FoveaSpec};

/// Manifest written next to the crops.
pub const CROP_MANIFEST: &str = "manifest.csv";

/// The pixel region under one fixation.
#[derive(Debug, Clone, Copy)]
pub struct CropRequest<'a> {
    pub image_id: &'a str,
    pub class_index: usize,
    /// Unnormalized RGB on the classification grid.
    pub rgb: &'a RgbImage,
    pub center: Cell,
    pub spec: FoveaSpec,
}

/// Writes one PPM per request (the clamped fovea window, `f * patch` pixels
/// square) and a manifest mapping file names to image ids and classes.
pub fn export_crops(dir: &Path, requests: &[CropRequest<'_>]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let csv_err = |e: csv::Error| Error::contract(format!("csv write failed: {e}"));
    let manifest_path = dir.join(CROP_MANIFEST);
    let mut manifest = csv::Writer::from_path(&manifest_path).map_err(csv_err)?;
    manifest
        .write_record(["file", "image_id", "class_index", "row", "col", "pixels"])
        .map_err(csv_err)?;
    let mut written = Vec::with_capacity(requests.len());
    for req in requests {
        let p = req.spec.patch_size;
        let (r0, c0) = req.spec.window_origin(req.center);
        let px = req.spec.pixels();
        let crop = req
            .rgb
            .cropped(r0 * p, c0 * p, px, px)
            .map_err(|e| e.context(format!("crop of {}", req.image_id)))?;
        let name = format!("{}.ppm", file_stem(req.image_id));
        let path = dir.join(&name);
        write_ppm(&path, &crop)?;
        let (row, col) = req.spec.clamp_center(req.center);
        manifest
            .write_record([
                name,
                req.image_id.to_string(),
                req.class_index.to_string(),
                row.to_string(),
                col.to_string(),
                px.to_string(),
            ])
            .map_err(csv_err)?;
        written.push(path);
    }
    manifest.flush().map_err(|e| Error::io(&manifest_path, e))?;
    Ok(written)
}
