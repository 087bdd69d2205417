//! Flat `key=value` run configuration and its merge with command-line flags.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use saccade_core::harness::{EvalSettings, SaliencySource};
use saccade_core::saliency::GraphSaliencyParams;
use saccade_core::PreprocessConfig;

use crate::CommonArgs;

/// A configuration problem; reported with exit status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Keys accepted in a config file; they match the long flag names.
pub const KEYS: &[&str] = &[
    "weights",
    "blob",
    "dataset",
    "out",
    "per-class-limit",
    "source",
    "fovea",
    "saccades",
    "layer",
    "att-resolution",
    "seed",
    "center-sigma",
    "saliency-dir",
    "layers",
    "resolutions",
    "foveas",
    "sources",
];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigFile {
    values: BTreeMap<String, String>,
}

impl ConfigFile {
    /// Parses `key = value` lines; `#` starts a comment.
    pub fn parse(text: &str) -> anyhow::Result<Self> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| usage(format!("config line {}: expected key=value, got `{raw}`", i + 1)))?;
            let key = key.trim().replace('_', "-");
            if !KEYS.contains(&key.as_str()) {
                return Err(usage(format!("config line {}: unknown key `{key}`", i + 1)));
            }
            values.insert(key, value.trim().to_string());
        }
        Ok(Self { values })
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> anyhow::Result<Option<T>>
    where
        T::Err: fmt::Display,
    {
        self.values
            .get(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|e| usage(format!("config key `{key}`: cannot parse `{v}`: {e}")))
            })
            .transpose()
    }

    pub fn get_list<T: FromStr>(&self, key: &str) -> anyhow::Result<Option<Vec<T>>>
    where
        T::Err: fmt::Display,
    {
        self.values.get(key).map(|v| parse_list(key, v)).transpose()
    }
}

pub fn parse_list<T: FromStr>(key: &str, text: &str) -> anyhow::Result<Vec<T>>
where
    T::Err: fmt::Display,
{
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<T>().map_err(|e| usage(format!("`{key}`: cannot parse `{s}`: {e}"))))
        .collect()
}

/// Saliency source names used on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceKind {
    Attention,
    Random,
    Center,
    Graph,
    Imported,
}

impl FromStr for SourceKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "attention" => Ok(Self::Attention),
            "random" => Ok(Self::Random),
            "center" => Ok(Self::Center),
            "graph" | "graph_based" | "gbvs" => Ok(Self::Graph),
            "imported" => Ok(Self::Imported),
            other => Err(format!(
                "unknown source `{other}` (expected attention, random, center, graph or imported)"
            )),
        }
    }
}

/// Fully resolved settings shared by `run`, `sweep` and `export`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub weights: PathBuf,
    pub blob: PathBuf,
    pub dataset: PathBuf,
    pub out: PathBuf,
    pub per_class_limit: Option<usize>,
    pub source: SourceKind,
    pub fovea: usize,
    pub saccades: usize,
    /// `None` selects the model's last layer.
    pub layer: Option<usize>,
    pub att_resolution: usize,
    pub seed: u64,
    pub center_sigma: f64,
    pub saliency_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn source_for(&self, kind: SourceKind) -> anyhow::Result<SaliencySource> {
        Ok(match kind {
            SourceKind::Attention => SaliencySource::Attention,
            SourceKind::Random => SaliencySource::Random { seed: self.seed },
            SourceKind::Center => SaliencySource::Center {
                sigma: self.center_sigma,
            },
            SourceKind::Graph => SaliencySource::GraphBased(GraphSaliencyParams::default()),
            SourceKind::Imported => SaliencySource::Imported {
                dir: self
                    .saliency_dir
                    .clone()
                    .ok_or_else(|| usage("source `imported` needs `--saliency-dir`"))?,
            },
        })
    }

    pub fn settings(&self, num_layers: usize) -> anyhow::Result<EvalSettings> {
        let layer = self.layer.unwrap_or(num_layers);
        if layer == 0 || layer > num_layers {
            return Err(usage(format!("`--layer` {layer} outside 1..={num_layers}")));
        }
        if self.saccades == 0 {
            return Err(usage("`--saccades` must be at least 1"));
        }
        Ok(EvalSettings {
            source: self.source_for(self.source)?,
            fovea: self.fovea,
            saccades: self.saccades,
            layer,
            att_resolution: self.att_resolution,
            preprocess: PreprocessConfig::default(),
        })
    }
}

/// Merges flags (which already include the dataset environment override)
/// over the config file over built-in defaults.
pub fn resolve(args: &CommonArgs, file: &ConfigFile) -> anyhow::Result<RunConfig> {
    let weights = match &args.weights {
        Some(w) => w.clone(),
        None => file
            .get::<PathBuf>("weights")?
            .ok_or_else(|| usage("missing required `--weights <MANIFEST>` (weight container manifest)"))?,
    };
    let blob = match &args.blob {
        Some(b) => b.clone(),
        None => file.get("blob")?.unwrap_or_else(|| weights.with_extension("bin")),
    };
    let dataset = match &args.dataset {
        Some(d) => d.clone(),
        None => file
            .get::<PathBuf>("dataset")?
            .ok_or_else(|| usage("missing required `--dataset <DIR>` (or SACCADE_DATASET)"))?,
    };
    macro_rules! pick {
        ($field:ident, $key:literal, $default:expr) => {
            match args.$field.clone() {
                Some(v) => v,
                None => file.get($key)?.unwrap_or($default),
            }
        };
    }
    Ok(RunConfig {
        weights,
        blob,
        dataset,
        out: pick!(out, "out", PathBuf::from("saccade-out")),
        per_class_limit: match args.per_class_limit {
            Some(v) => Some(v),
            None => file.get("per-class-limit")?,
        },
        source: pick!(source, "source", SourceKind::Attention),
        fovea: pick!(fovea, "fovea", 3),
        saccades: pick!(saccades, "saccades", 10),
        layer: match args.layer {
            Some(v) => Some(v),
            None => file.get("layer")?,
        },
        att_resolution: pick!(att_resolution, "att-resolution", 224),
        seed: pick!(seed, "seed", 0),
        center_sigma: pick!(center_sigma, "center-sigma", 3.5),
        saliency_dir: match &args.saliency_dir {
            Some(v) => Some(v.clone()),
            None => file.get("saliency-dir")?,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_pairs_and_comments() {
        let cfg = ConfigFile::parse("# run\nfovea = 5\nper_class_limit=10 # ten\n\nsource=random\n").unwrap();
        assert_eq!(cfg.get::<usize>("fovea").unwrap(), Some(5));
        assert_eq!(cfg.get::<usize>("per-class-limit").unwrap(), Some(10));
        assert_eq!(cfg.get::<SourceKind>("source").unwrap(), Some(SourceKind::Random));
        assert_eq!(cfg.get::<usize>("layer").unwrap(), None);
    }

    #[test]
    fn rejects_unknown_and_malformed() {
        assert!(ConfigFile::parse("colour=red").is_err());
        assert!(ConfigFile::parse("fovea").is_err());
        assert!(ConfigFile::parse("fovea=x").unwrap().get::<usize>("fovea").is_err());
    }

    #[test]
    fn precedence_flags_over_file_over_defaults() {
        let file = ConfigFile::parse("weights=w.json\ndataset=d\nfovea=5\nsaccades=4").unwrap();
        let args = CommonArgs {
            fovea: Some(3),
            ..CommonArgs::default()
        };
        let cfg = resolve(&args, &file).unwrap();
        assert_eq!(cfg.fovea, 3);
        assert_eq!(cfg.saccades, 4);
        assert_eq!(cfg.att_resolution, 224);
        assert_eq!(cfg.blob, PathBuf::from("w.bin"));
    }

    #[test]
    fn missing_weights_names_the_flag() {
        let err = resolve(&CommonArgs::default(), &ConfigFile::default()).unwrap_err();
        assert!(err.downcast_ref::<UsageError>().is_some());
        assert!(err.to_string().contains("--weights"));
    }

    #[test]
    fn lists() {
        let cfg = ConfigFile::parse("layers = 1, 2,3").unwrap();
        assert_eq!(cfg.get_list::<usize>("layers").unwrap(), Some(vec![1, 2, 3]));
    }
}
