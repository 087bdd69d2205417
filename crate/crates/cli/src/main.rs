use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod config;

use config::{SourceKind, UsageError};

/// Classify images from a few foveal glimpses chosen by ViT attention or a
/// baseline saliency map.
#[derive(Debug, Parser)]
#[command(name = "saccade", version)]
struct Cli {
    /// Worker threads; 0 uses one per core.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    /// Flat `key=value` file supplying defaults for any long flag.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// Weight container manifest (`.json`).
    #[arg(long, value_name = "MANIFEST")]
    pub weights: Option<PathBuf>,

    /// Weight blob; defaults to the manifest path with a `.bin` extension.
    #[arg(long)]
    pub blob: Option<PathBuf>,

    /// Dataset root laid out as `root/<class>/*.ppm`.
    #[arg(long, env = "SACCADE_DATASET", value_name = "DIR")]
    pub dataset: Option<PathBuf>,

    /// Output directory [default: saccade-out].
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,

    /// Images per class, in file-name order.
    #[arg(long)]
    pub per_class_limit: Option<usize>,

    /// Saliency source: attention, random, center, graph or imported [default: attention].
    #[arg(long)]
    pub source: Option<SourceKind>,

    /// Fovea side in tokens (odd) [default: 3].
    #[arg(long)]
    pub fovea: Option<usize>,

    /// Saccades per image [default: 10].
    #[arg(long)]
    pub saccades: Option<usize>,

    /// Layer whose attention drives fixations [default: last layer].
    #[arg(long)]
    pub layer: Option<usize>,

    /// Input side for the attention pass [default: 224].
    #[arg(long)]
    pub att_resolution: Option<usize>,

    /// Seed for random saliency [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,

    /// Width of the center baseline in cells [default: 3.5].
    #[arg(long)]
    pub center_sigma: Option<f64>,

    /// Directory of exported maps for `--source imported`.
    #[arg(long, value_name = "DIR")]
    pub saliency_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: CommonArgs,

    /// Comma-separated capture layers.
    #[arg(long)]
    pub layers: Option<String>,

    /// Comma-separated attention resolutions.
    #[arg(long)]
    pub resolutions: Option<String>,

    /// Comma-separated fovea sizes.
    #[arg(long)]
    pub foveas: Option<String>,

    /// Comma-separated saliency sources.
    #[arg(long)]
    pub sources: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExportKind {
    /// Saliency maps as PGM previews plus lossless sidecars.
    Maps,
    /// Pixel crops under the first fixation, with a manifest.
    Crops,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Toy,
    VitSmall,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Evaluate the dataset; writes records.csv, traces.csv and summary.json.
    Run(CommonArgs),
    /// Evaluate a grid of layers, resolutions, fovea sizes and sources.
    Sweep(SweepArgs),
    /// Export saliency maps or first-fixation crops.
    Export {
        what: ExportKind,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// List the tensors of a container and validate it.
    Inspect {
        manifest: PathBuf,
        /// Blob path; defaults to the manifest path with a `.bin` extension.
        #[arg(long)]
        blob: Option<PathBuf>,
    },
    /// Write a container of random weights (for smoke tests).
    RandomWeights {
        /// Manifest path; the blob goes next to it.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Preset::Toy)]
        preset: Preset,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Override the number of classes.
        #[arg(long)]
        classes: Option<usize>,
    },
}

fn dispatch(cli: Cli) -> anyhow::Result<bool> {
    let file = match &cli.config {
        Some(path) => config::ConfigFile::load(path)?,
        None => config::ConfigFile::default(),
    };
    match cli.command {
        Command::Run(common) => commands::run(&config::resolve(&common, &file)?),
        Command::Sweep(args) => commands::sweep(&config::resolve(&args.common, &file)?, &args, &file),
        Command::Export { what, common } => commands::export(&config::resolve(&common, &file)?, what),
        Command::Inspect { manifest, blob } => commands::inspect(&manifest, blob),
        Command::RandomWeights {
            out,
            preset,
            seed,
            classes,
        } => commands::random_weights(&out, preset, seed, classes),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build()
        .map_err(anyhow::Error::from)
        .and_then(|pool| pool.install(|| dispatch(cli)));
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
