use std::path::PathBuf;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use super::file_stem;
use super::metrics::{certainty, Prediction, SaccadeRecord, SaccadeStep};
use crate::error::{ensure, Error, Result};
use crate::image::{ImageTensor, PreprocessConfig};
use crate::saccade::{run_saccade_sequence, FoveaSpec, SaccadeTrace};
use crate::saliency::{
    attention_entropy, attention_saliency, center_saliency, fuse_heads_max, graph_saliency, import_saliency,
    random_saliency, AttentionProvenance, GraphSaliencyParams, SaliencyFiles, SaliencyGrid, SourceTag,
};
use crate::tensor::Grid2D;
use crate::vit::{ClassScores, VisionTransformer};

/// How the fixation priority map of an image is obtained.
#[derive(Debug, Clone, PartialEq)]
pub enum SaliencySource {
    /// Fused `[CLS]` attention of the classifying model.
    Attention,
    /// Uniform noise; the per-image seed is derived from `seed` and the image id.
    Random { seed: u64 },
    /// Gaussian centered on the grid, `sigma` in cells.
    Center { sigma: f64 },
    GraphBased(GraphSaliencyParams),
    /// Maps previously exported to `dir` under the image's file stem.
    Imported { dir: PathBuf },
}

impl SaliencySource {
    pub fn tag(&self) -> SourceTag {
        match self {
            SaliencySource::Attention => SourceTag::Attention,
            SaliencySource::Random { .. } => SourceTag::Random,
            SaliencySource::Center { .. } => SourceTag::Center,
            SaliencySource::GraphBased(_) => SourceTag::GraphBased,
            SaliencySource::Imported { .. } => SourceTag::Imported,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSettings {
    pub source: SaliencySource,
    /// Fovea side in tokens.
    pub fovea: usize,
    pub saccades: usize,
    /// 1-based layer whose attention drives fixations.
    pub layer: usize,
    /// Input side used for the attention pass.
    pub att_resolution: usize,
    pub preprocess: PreprocessConfig,
}

impl EvalSettings {
    pub fn new(source: SaliencySource) -> Self {
        Self {
            source,
            fovea: 3,
            saccades: 10,
            layer: 12,
            att_resolution: 224,
            preprocess: PreprocessConfig::default(),
        }
    }

    /// Short hex digest identifying these settings.
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(format!("{self:?}").as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Seed of the random map for one image: stable across runs and thread
/// counts, distinct between images.
pub fn image_seed(seed: u64, image_id: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(image_id.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// Saliency map for `img` on its classification grid.
pub fn saliency_for(
    settings: &EvalSettings,
    vit: &VisionTransformer,
    img: &ImageTensor,
    image_id: &str,
) -> Result<SaliencyGrid> {
    saliency_with(settings, vit, img, image_id, None)
}

fn saliency_with(
    settings: &EvalSettings,
    vit: &VisionTransformer,
    img: &ImageTensor,
    image_id: &str,
    full_attention: Option<&SaliencyGrid>,
) -> Result<SaliencyGrid> {
    let p = vit.config().patch_size;
    let (gh, gw) = (img.height() / p, img.width() / p);
    match &settings.source {
        SaliencySource::Attention => match full_attention {
            Some(sal) if settings.att_resolution == img.height() => Ok(sal.clone()),
            _ => attention_saliency(img, vit, settings.layer, settings.att_resolution),
        },
        SaliencySource::Random { seed } => random_saliency(image_seed(*seed, image_id), gh, gw),
        SaliencySource::Center { sigma } => center_saliency(gh, gw, *sigma),
        SaliencySource::GraphBased(params) => {
            let params = GraphSaliencyParams {
                output_grid: (gh, gw),
                ..params.clone()
            };
            graph_saliency(img, &params)
        }
        SaliencySource::Imported { dir } => {
            let files = SaliencyFiles::for_stem(dir, &file_stem(image_id));
            let path = if files.manifest.is_file() { files.manifest } else { files.pgm };
            import_saliency(&path, gh, gw)
        }
    }
}

/// Intermediate products of one evaluation.
#[derive(Debug, Clone)]
pub struct ImageEvaluation {
    pub record: SaccadeRecord,
    pub saliency: SaliencyGrid,
    pub trace: SaccadeTrace,
    pub full_scores: ClassScores,
    pub step_scores: Vec<ClassScores>,
    /// Fused attention of the full image at the capture layer.
    pub attention: Grid2D,
}

pub fn evaluate_image(
    vit: &VisionTransformer,
    img: &ImageTensor,
    image_id: &str,
    true_class: usize,
    settings: &EvalSettings,
) -> Result<SaccadeRecord> {
    evaluate_image_detailed(vit, img, image_id, true_class, settings).map(|e| e.record)
}

/// Classifies the full image, builds the saliency map, runs the saccade
/// sequence and classifies every cumulative reveal.
pub fn evaluate_image_detailed(
    vit: &VisionTransformer,
    img: &ImageTensor,
    image_id: &str,
    true_class: usize,
    settings: &EvalSettings,
) -> Result<ImageEvaluation> {
    evaluate_inner(vit, img, image_id, true_class, settings)
        .map_err(|e| e.context(format!("image {image_id}")))
}

fn evaluate_inner(
    vit: &VisionTransformer,
    img: &ImageTensor,
    image_id: &str,
    true_class: usize,
    settings: &EvalSettings,
) -> Result<ImageEvaluation> {
    let cfg = vit.config();
    ensure(true_class < cfg.num_classes, || {
        format!("class {true_class} outside a {}-way classifier", cfg.num_classes)
    })?;
    let seq = vit.patchify_embed(img)?;
    let full = vit.forward(&seq, settings.layer)?;
    let full_scores = vit.classify(&full.cls_per_layer)?;
    let mut fused = fuse_heads_max(&full.capture)?;
    fused.provenance = Some(AttentionProvenance {
        layer: settings.layer,
        resolution: img.height(),
        native_grid: seq.grid,
    });
    let entropy = attention_entropy(&fused.grid)?;

    let saliency = saliency_with(settings, vit, img, image_id, Some(&fused))?;
    let spec = FoveaSpec::new(settings.fovea, seq.grid, cfg.patch_size)?;
    let trace = run_saccade_sequence(&saliency, &spec, settings.saccades)?;

    let step_scores = trace
        .masks
        .par_iter()
        .map(|mask| {
            let masked = seq.clone().with_visible(mask.clone())?;
            let out = vit.forward(&masked, settings.layer)?;
            vit.classify(&out.cls_per_layer)
        })
        .collect::<Result<Vec<_>>>()?;

    let saccades = step_scores
        .iter()
        .enumerate()
        .map(|(i, s)| SaccadeStep {
            predicted: s.predicted,
            certainty: certainty(&s.probs),
            center: trace.centers[i],
            revealed_cells: trace.revealed_cells[i],
            revealed_fraction: trace.revealed_fraction[i],
        })
        .collect();
    let record = SaccadeRecord {
        image_id: image_id.to_string(),
        true_class,
        full: Prediction {
            predicted: full_scores.predicted,
            certainty: certainty(&full_scores.probs),
        },
        saccades,
        source: saliency.source,
        attention_entropy: entropy,
        input_digest: img.digest(),
        config_fingerprint: settings.fingerprint(),
    };
    if !record.full.certainty.is_finite() {
        return Err(Error::contract("non-finite certainty"));
    }
    Ok(ImageEvaluation {
        record,
        saliency,
        trace,
        full_scores,
        step_scores,
        attention: fused.grid,
    })
}
