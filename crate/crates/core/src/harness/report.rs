use std::fs;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::Value;

use super::dataset::{DatasetEntry, DatasetIndex};
use super::evaluate::{evaluate_image_detailed, EvalSettings};
use super::metrics::{
    certainty_groups, dynamics_report, entropy_groups, CertaintyGroup, DynamicsReport, EntropyGroups, SaccadeRecord,
};
use super::{fmt_float, round_sig9};
use crate::error::{Error, Result};
use crate::image::{normalize, read_ppm, resize_and_crop, ImageTensor, PreprocessConfig, RgbImage};
use crate::saccade::{distances_of, write_trace_csv, SaccadeTrace};

/// A dataset image after resize and crop, in both display and model form.
#[derive(Debug, Clone)]
pub struct LoadedImage {
    pub entry: DatasetEntry,
    /// Cropped RGB in `[0, 1]`, before standardization.
    pub rgb: RgbImage,
    pub tensor: ImageTensor,
}

/// Decodes and preprocesses every image of the index, in index order.
pub fn load_images(index: &DatasetIndex, cfg: &PreprocessConfig) -> Result<Vec<LoadedImage>> {
    index
        .entries
        .par_iter()
        .map(|entry| {
            let raw = read_ppm(&entry.path)?;
            let rgb = resize_and_crop(&raw, cfg)?;
            let tensor = normalize(&rgb, cfg)?;
            Ok(LoadedImage {
                entry: entry.clone(),
                rgb,
                tensor,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Default)]
pub struct RunOutput {
    /// Successful evaluations, ordered by image id.
    pub records: Vec<SaccadeRecord>,
    pub traces: Vec<SaccadeTrace>,
    /// `(image_id, message)` for every image that could not be evaluated.
    pub failures: Vec<(String, String)>,
}

/// Evaluates every image on the current rayon pool.
pub fn run_dataset(
    images: &[LoadedImage],
    vit: &crate::vit::VisionTransformer,
    settings: &EvalSettings,
) -> RunOutput {
    let results: Vec<_> = images
        .par_iter()
        .map(|img| {
            let id = &img.entry.image_id;
            (id.clone(), evaluate_image_detailed(vit, &img.tensor, id, img.entry.class_index, settings))
        })
        .collect();
    let mut results = results;
    results.sort_by(|a, b| a.0.cmp(&b.0));
    let mut out = RunOutput::default();
    for (id, res) in results {
        match res {
            Ok(ev) => {
                out.records.push(ev.record);
                out.traces.push(ev.trace);
            }
            Err(e) => {
                log::warn!("{e}");
                out.failures.push((id, e.to_string()));
            }
        }
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct Failure {
    pub image_id: String,
    pub error: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct SettingsSummary {
    pub source: String,
    pub fovea: usize,
    pub saccades: usize,
    pub layer: usize,
    pub att_resolution: usize,
    pub fingerprint: String,
}

/// Aggregate results of one run, serialized as `summary.json`.
#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub settings: SettingsSummary,
    pub num_images: usize,
    pub failures: Vec<Failure>,
    pub full_image_accuracy: f64,
    pub accuracy: Vec<f64>,
    pub cumulative_accuracy: Vec<f64>,
    pub mean_revealed_fraction: Vec<f64>,
    /// Mean distance (token units) of fixation `i` from the first fixation.
    pub mean_distance_from_first: Vec<f64>,
    pub dynamics: DynamicsReport,
    pub certainty_groups: Vec<CertaintyGroup>,
    pub entropy_groups: EntropyGroups,
}

pub fn summarize(output: &RunOutput, settings: &EvalSettings) -> Result<Summary> {
    let records = &output.records;
    let dynamics = dynamics_report(records)?;
    let k = dynamics.saccades;
    let n = records.len().max(1) as f64;
    let mean_revealed_fraction = (0..k)
        .map(|i| records.iter().map(|r| r.saccades[i].revealed_fraction).sum::<f64>() / n)
        .collect();
    let mut mean_distance_from_first = vec![0.0; k];
    for r in records {
        let centers: Vec<_> = r.saccades.iter().map(|s| s.center).collect();
        let d = distances_of(&centers, None)?;
        for (acc, v) in mean_distance_from_first.iter_mut().zip(d.from_first) {
            *acc += v / n;
        }
    }
    let entropies: Vec<f64> = records.iter().map(|r| r.attention_entropy).collect();
    Ok(Summary {
        settings: SettingsSummary {
            source: settings.source.tag().to_string(),
            fovea: settings.fovea,
            saccades: settings.saccades,
            layer: settings.layer,
            att_resolution: settings.att_resolution,
            fingerprint: settings.fingerprint(),
        },
        num_images: records.len(),
        failures: output
            .failures
            .iter()
            .map(|(image_id, error)| Failure {
                image_id: image_id.clone(),
                error: error.clone(),
            })
            .collect(),
        full_image_accuracy: dynamics.full_image_accuracy,
        accuracy: dynamics.accuracy.clone(),
        cumulative_accuracy: dynamics.cumulative_accuracy.clone(),
        mean_revealed_fraction,
        mean_distance_from_first,
        certainty_groups: certainty_groups(records),
        entropy_groups: entropy_groups(records, &entropies)?,
        dynamics,
    })
}

/// Column order of `records.csv`; one row per image and saccade.
pub const RECORDS_CSV_HEADER: [&str; 16] = [
    "image_id",
    "true_class",
    "source",
    "saccade",
    "predicted",
    "correct",
    "certainty",
    "revealed_cells",
    "revealed_fraction",
    "row",
    "col",
    "full_predicted",
    "full_correct",
    "full_certainty",
    "attention_entropy",
    "input_digest",
];

pub fn write_records_csv<W: Write>(out: W, records: &[SaccadeRecord]) -> Result<()> {
    let csv_err = |e: csv::Error| Error::contract(format!("csv write failed: {e}"));
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RECORDS_CSV_HEADER).map_err(csv_err)?;
    for r in records {
        let full_correct = r.full_correct();
        for (i, s) in r.saccades.iter().enumerate() {
            let correct = s.predicted == r.true_class;
            w.write_record([
                r.image_id.clone(),
                r.true_class.to_string(),
                r.source.to_string(),
                (i + 1).to_string(),
                s.predicted.to_string(),
                u8::from(correct).to_string(),
                fmt_float(s.certainty),
                s.revealed_cells.to_string(),
                fmt_float(s.revealed_fraction),
                s.center.0.to_string(),
                s.center.1.to_string(),
                r.full.predicted.to_string(),
                u8::from(full_correct).to_string(),
                fmt_float(r.full.certainty),
                fmt_float(r.attention_entropy),
                r.input_digest.clone(),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush().map_err(|e| Error::contract(format!("csv flush failed: {e}")))?;
    Ok(())
}

/// Every float in the tree rounded to 9 significant digits.
fn round_json(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            if let Some(r) = n.as_f64().map(round_sig9).and_then(serde_json::Number::from_f64) {
                *n = r;
            }
        }
        Value::Array(items) => items.iter_mut().for_each(round_json),
        Value::Object(map) => map.values_mut().for_each(round_json),
        _ => {}
    }
}

/// JSON text with floats rounded to 9 significant digits.
pub fn to_rounded_json<T: Serialize>(value: &T) -> Result<String> {
    let mut v = serde_json::to_value(value).map_err(|e| Error::contract(format!("json encoding failed: {e}")))?;
    round_json(&mut v);
    let mut text =
        serde_json::to_string_pretty(&v).map_err(|e| Error::contract(format!("json encoding failed: {e}")))?;
    text.push('\n');
    Ok(text)
}

/// Writes `records.csv`, `traces.csv` and `summary.json` into `dir`.
pub fn write_run_outputs(dir: &Path, output: &RunOutput, summary: &Summary) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let create = |name: &str| {
        let path = dir.join(name);
        fs::File::create(&path).map(std::io::BufWriter::new).map_err(|e| Error::io(path, e))
    };
    write_records_csv(create("records.csv")?, &output.records)?;
    write_trace_csv(
        create("traces.csv")?,
        output
            .records
            .iter()
            .zip(&output.traces)
            .map(|(r, t)| (r.image_id.as_str(), t)),
    )?;
    let path = dir.join("summary.json");
    fs::write(&path, to_rounded_json(summary)?).map_err(|e| Error::io(path, e))
}
