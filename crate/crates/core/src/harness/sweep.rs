use std::fs;
use std::io::Write;
use std::path::Path;

use super::evaluate::{EvalSettings, SaliencySource};
use super::fmt_float;
use super::report::{run_dataset, summarize, write_run_outputs, LoadedImage, Summary};
use crate::error::{Error, Result};
use crate::vit::VisionTransformer;

/// Cartesian grid of settings to evaluate. Fields not varied here are taken
/// from the base [`EvalSettings`].
#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub layers: Vec<usize>,
    pub resolutions: Vec<usize>,
    pub foveas: Vec<usize>,
    pub sources: Vec<SaliencySource>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridPoint {
    pub settings: EvalSettings,
}

impl GridPoint {
    /// Directory name of the point, e.g. `L12_R224_F3_attention`.
    pub fn label(&self) -> String {
        let s = &self.settings;
        format!("L{}_R{}_F{}_{}", s.layer, s.att_resolution, s.fovea, s.source.tag())
    }
}

impl SweepConfig {
    pub fn points(&self, base: &EvalSettings) -> Vec<GridPoint> {
        let mut points = Vec::new();
        for source in &self.sources {
            for &layer in &self.layers {
                for &att_resolution in &self.resolutions {
                    for &fovea in &self.foveas {
                        points.push(GridPoint {
                            settings: EvalSettings {
                                source: source.clone(),
                                layer,
                                att_resolution,
                                fovea,
                                ..base.clone()
                            },
                        });
                    }
                }
            }
        }
        points
    }
}

#[derive(Debug, Clone)]
pub struct SweepReport {
    pub completed: Vec<(GridPoint, Summary)>,
    /// Points that could not be run at all, with the reason.
    pub failed: Vec<(GridPoint, String)>,
}

impl SweepReport {
    /// True when every point ran and no image failed.
    pub fn all_ok(&self) -> bool {
        self.failed.is_empty() && self.completed.iter().all(|(_, s)| s.failures.is_empty())
    }
}

pub const CURVE_CSV_HEADER: [&str; 5] = [
    "saccade",
    "accuracy",
    "cumulative_accuracy",
    "mean_revealed_fraction",
    "num_images",
];

fn write_curve<W: Write>(out: W, label: Option<&str>, summary: &Summary) -> csv::Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    for i in 0..summary.accuracy.len() {
        let mut row: Vec<String> = label.map(str::to_string).into_iter().collect();
        row.extend([
            (i + 1).to_string(),
            fmt_float(summary.accuracy[i]),
            fmt_float(summary.cumulative_accuracy[i]),
            fmt_float(summary.mean_revealed_fraction[i]),
            summary.num_images.to_string(),
        ]);
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Runs every grid point over `images`, writing one subdirectory per point
/// (run outputs plus `curve.csv`) and an overall `sweep.csv` into `out_dir`.
/// A failing point is logged and skipped.
pub fn sweep(
    images: &[LoadedImage],
    vit: &VisionTransformer,
    base: &EvalSettings,
    config: &SweepConfig,
    out_dir: &Path,
) -> Result<SweepReport> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let csv_err = |e: csv::Error| Error::contract(format!("csv write failed: {e}"));
    let mut report = SweepReport {
        completed: Vec::new(),
        failed: Vec::new(),
    };
    let mut overall = Vec::new();
    writeln!(overall, "point,{}", CURVE_CSV_HEADER.join(",")).expect("write to memory");
    for point in config.points(base) {
        let label = point.label();
        let dir = out_dir.join(&label);
        let result = (|| -> Result<Summary> {
            let output = run_dataset(images, vit, &point.settings);
            let summary = summarize(&output, &point.settings)?;
            write_run_outputs(&dir, &output, &summary)?;
            let path = dir.join("curve.csv");
            let mut file = Vec::new();
            writeln!(file, "{}", CURVE_CSV_HEADER.join(",")).expect("write to memory");
            write_curve(&mut file, None, &summary).map_err(csv_err)?;
            fs::write(&path, file).map_err(|e| Error::io(&path, e))?;
            Ok(summary)
        })();
        match result {
            Ok(summary) => {
                log::info!("{label}: {} images, {} failed", summary.num_images, summary.failures.len());
                write_curve(&mut overall, Some(&label), &summary).map_err(csv_err)?;
                report.completed.push((point, summary));
            }
            Err(e) => {
                log::error!("{label}: {e}");
                report.failed.push((point, e.to_string()));
            }
        }
    }
    let path = out_dir.join("sweep.csv");
    fs::write(&path, overall).map_err(|e| Error::io(&path, e))?;
    Ok(report)
}
