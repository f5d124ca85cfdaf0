//! Run configuration: a preset, overlaid by a JSON file, overlaid by flags.
//!
//! File schema (every key optional):
//!
//! ```json
//! {
//!   "preset": "full" | "compact" | "reduced",
//!   "manifest": "path/to/manifest.json",
//!   "model": { ...ModelConfig fields... },
//!   "train": { ...TrainConfig fields... }
//! }
//! ```
//!
//! A relative `manifest` is resolved against the config file's directory.
//! `n_classes`, `t` and `m` always come from the manifest.

use std::path::{Path, PathBuf};

use mxj_core::{Fusion, ModelConfig, TrainConfig};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::{Failure, TrainArgs, Without};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// Published layer widths.
    #[default]
    Full,
    /// Narrow layers on full-size frames.
    Compact,
    /// 16 x 16 frames, for smoke runs.
    Reduced,
}

impl Preset {
    pub fn model(self) -> ModelConfig {
        match self {
            Preset::Full => ModelConfig::default(),
            Preset::Compact => ModelConfig::compact(),
            Preset::Reduced => ModelConfig::reduced(),
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunFile {
    preset: Option<Preset>,
    manifest: Option<PathBuf>,
    #[serde(default)]
    model: Map<String, Value>,
    #[serde(default)]
    train: Map<String, Value>,
}

/// Fully resolved settings of a training run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub preset: Preset,
    pub manifest: PathBuf,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

/// Recursively overwrites `base` with the keys of `over`.
fn overlay(base: &mut Value, over: &Map<String, Value>) {
    let Value::Object(base) = base else { unreachable!("configs serialize to objects") };
    for (k, v) in over {
        match (base.get_mut(k), v) {
            (Some(b @ Value::Object(_)), Value::Object(o)) => overlay(b, o),
            _ => {
                base.insert(k.clone(), v.clone());
            }
        }
    }
}

fn layered<T: Serialize + for<'de> Deserialize<'de>>(base: &T, over: &Map<String, Value>, what: &str) -> Result<T, Failure> {
    let mut v = serde_json::to_value(base).expect("config serializes");
    overlay(&mut v, over);
    serde_json::from_value(v).map_err(|e| Failure::Invalid(format!("{what} config: {e}")))
}

fn read_file(path: &Path) -> Result<RunFile, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Path(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::Invalid(format!("{}: {e}", path.display())))
}

pub fn parse_fusion(s: &str) -> Result<Fusion, String> {
    serde_json::from_value(Value::String(s.to_string()))
        .map_err(|_| "expected concat, add, subtract, first-frames, last-frames or all-frames".to_string())
}

/// Resolves everything except the manifest-derived fields.
pub fn resolve(args: &TrainArgs) -> Result<RunConfig, Failure> {
    let file = match &args.config {
        Some(p) => read_file(p)?,
        None => RunFile::default(),
    };
    let preset = args.preset.or(file.preset).unwrap_or_default();
    let base_model = preset.model();
    let mut model: ModelConfig = layered(&base_model, &file.model, "model")?;
    let base_train = TrainConfig {
        crop: model.frame_size,
        ..TrainConfig::default()
    };
    let mut train: TrainConfig = layered(&base_train, &file.train, "train")?;
    if !file.train.contains_key("crop") {
        train.crop = model.frame_size;
    }

    let file_manifest = file.manifest.map(|m| match args.config.as_deref().and_then(Path::parent) {
        Some(dir) if m.is_relative() => dir.join(m),
        _ => m,
    });
    let manifest = args
        .manifest
        .clone()
        .or(file_manifest)
        .ok_or_else(|| Failure::Invalid("no manifest given (--manifest or \"manifest\" in --config)".into()))?;

    macro_rules! set {
        ($dst:expr, $flag:expr) => {
            if let Some(v) = $flag {
                $dst = v;
            }
        };
    }
    set!(train.epochs, args.epochs);
    set!(train.batch_size, args.batch_size);
    set!(train.lr, args.lr);
    set!(train.seed, args.seed);
    set!(train.workers, args.workers);
    set!(train.weights.lambda_f, args.lambda_f);
    set!(train.weights.lambda_m, args.lambda_m);
    set!(train.augment, args.augment);
    set!(train.flip, args.flip);
    set!(model.fusion, args.fusion);
    set!(model.k, args.k);
    for w in &args.without {
        match w {
            Without::Ofe => model.flow_head = false,
            Without::Fld => model.landmark_head = false,
            Without::Fcc => model.use_fcc = false,
            Without::Ccc => model.use_ccc = false,
            Without::F5c => model.f5c_blocks = 0,
        }
    }
    Ok(RunConfig {
        preset,
        manifest,
        model,
        train,
    })
}
