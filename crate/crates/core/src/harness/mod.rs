//! Dataset ingestion, per-image saccade evaluation and the metric suite.

mod crops;
mod dataset;
mod evaluate;
mod metrics;
mod report;
mod sweep;

pub use crops::{export_crops, CropRequest, CROP_MANIFEST};
pub use dataset::{DatasetEntry, DatasetIndex, CLASS_LIST_FILE};
pub use evaluate::{
    evaluate_image, evaluate_image_detailed, image_seed, saliency_for, EvalSettings, ImageEvaluation,
    SaliencySource,
};
pub use metrics::{
    certainty, certainty_groups, dynamics_from_outcomes, dynamics_report, entropy_groups, CertaintyGroup,
    DynamicsReport, EntropyGroup, EntropyGroups, Outcome, Prediction, SaccadeRecord, SaccadeStep,
};
pub use report::{
    load_images, run_dataset, summarize, to_rounded_json, write_records_csv, write_run_outputs, Failure,
    LoadedImage, RunOutput, SettingsSummary, Summary, RECORDS_CSV_HEADER,
};
pub use sweep::{sweep, GridPoint, SweepConfig, SweepReport, CURVE_CSV_HEADER};

/// Formats a float with at most 9 significant digits, trailing zeros trimmed.
pub fn fmt_float(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        trim_zeros(format!("{x:.decimals$}"))
    } else {
        format!("{}e{exp}", trim_zeros(mantissa.to_string()))
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

/// `x` rounded to 9 significant digits.
pub fn round_sig9(x: f64) -> f64 {
    if x.is_finite() {
        fmt_float(x).parse().expect("formatted float parses")
    } else {
        x
    }
}

/// File-system safe form of an image id (`class/name` -> `class__name`).
pub fn file_stem(image_id: &str) -> String {
    image_id.replace(['/', '\\'], "__")
}
