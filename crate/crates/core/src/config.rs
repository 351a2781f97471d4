//! Run configuration: JSON with defaults for every field and dotted-path
//! overrides.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::harness::data::SyntheticConfig;
use crate::model::{ModelConfig, TrainScope};
use crate::objective::LossConfig;
use crate::optim::OptimizerConfig;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    #[default]
    Synthetic,
    Files,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FileFormat {
    Idx,
    Csv,
}

/// File-backed image set. IDX needs both image and label files; CSV carries
/// labels in its first column.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileDataConfig {
    pub format: FileFormat,
    pub train_images: PathBuf,
    #[serde(default)]
    pub train_labels: Option<PathBuf>,
    pub test_images: PathBuf,
    #[serde(default)]
    pub test_labels: Option<PathBuf>,
    pub manifest: PathBuf,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    pub synthetic: SyntheticConfig,
    pub files: Option<FileDataConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InjuryConfig {
    pub target: usize,
    pub fraction: f64,
    pub repair_epochs: usize,
    /// Multiplier on `optimizer.lr` while repairing. Only the target's
    /// embedding and selection move, so the repair needs larger steps than
    /// the original training to reach the same accuracy.
    pub lr_scale: f64,
    pub scope: TrainScope,
}

impl Default for InjuryConfig {
    fn default() -> Self {
        Self {
            target: 0,
            fraction: 0.5,
            repair_epochs: 100,
            lr_scale: 2.0,
            scope: TrainScope::TaskOnly,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HarnessConfig {
    /// Evaluate every trained task at each epoch boundary.
    pub eval_every_epoch: bool,
    pub injury: InjuryConfig,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        Self {
            eval_every_epoch: true,
            injury: InjuryConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub optimizer: OptimizerConfig,
    pub data: DataConfig,
    pub harness: HarnessConfig,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            model: ModelConfig::default(),
            loss: LossConfig::default(),
            optimizer: OptimizerConfig::default(),
            data: DataConfig::default(),
            harness: HarnessConfig::default(),
            output_dir: PathBuf::from("runs/latest"),
        }
    }
}

fn parse(text: &str, origin: &str) -> Result<RunConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        Error::InvalidConfig {
            field: if path == "." { origin.to_string() } else { path },
            reason: e.inner().to_string(),
        }
    })
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg = parse(text, "<root>")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::InvalidConfig {
            field: path.display().to_string(),
            reason: e.to_string(),
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Applies `key=value` overrides. Values parse as JSON, falling back to
    /// a plain string.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        let mut tree = serde_json::to_value(self)?;
        for raw in overrides {
            let raw = raw.as_ref();
            let (key, value) = raw.split_once('=').ok_or_else(|| Error::InvalidConfig {
                field: raw.to_string(),
                reason: "override must look like key=value".into(),
            })?;
            let value: Value =
                serde_json::from_str(value).unwrap_or_else(|_| Value::String(value.to_string()));
            set_path(&mut tree, key, value)?;
        }
        let cfg = parse(&tree.to_string(), "<overrides>")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.loss.validate()?;
        self.optimizer.validate()?;
        if self.data.source == DataSource::Synthetic {
            self.data.synthetic.validate()?;
            if self.model.architecture.classes() != self.data.synthetic.classes_per_task {
                return Err(Error::config(
                    "model.architecture.layers",
                    "readout width must equal data.synthetic.classes_per_task",
                ));
            }
            if self.model.architecture.input_len() != self.data.synthetic.dim {
                return Err(Error::config(
                    "model.architecture.input_shape",
                    "input size must equal data.synthetic.dim",
                ));
            }
        } else if self.data.files.is_none() {
            return Err(Error::config("data.files", "required when data.source is files"));
        }
        let f = self.harness.injury.fraction;
        if !(0.0..=1.0).contains(&f) {
            return Err(Error::config("harness.injury.fraction", "must lie in [0, 1]"));
        }
        let k = self.harness.injury.lr_scale;
        if !(k.is_finite() && k > 0.0) {
            return Err(Error::config("harness.injury.lr_scale", "must be finite and positive"));
        }
        Ok(())
    }
}

fn set_path(tree: &mut Value, key: &str, value: Value) -> Result<()> {
    let mut node = tree;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let unknown = || Error::InvalidConfig {
            field: key.to_string(),
            reason: format!("unknown key `{}`", parts[..=i].join(".")),
        };
        node = match node {
            Value::Object(map) => {
                if i + 1 == parts.len() {
                    if !map.contains_key(*part) {
                        return Err(unknown());
                    }
                    map.insert(part.to_string(), value);
                    return Ok(());
                }
                map.get_mut(*part).ok_or_else(unknown)?
            }
            Value::Array(items) => {
                let idx: usize = part.parse().map_err(|_| unknown())?;
                if i + 1 == parts.len() {
                    let slot = items.get_mut(idx).ok_or_else(unknown)?;
                    *slot = value;
                    return Ok(());
                }
                items.get_mut(idx).ok_or_else(unknown)?
            }
            Value::Null if i + 1 < parts.len() => {
                return Err(Error::InvalidConfig {
                    field: key.to_string(),
                    reason: format!("`{}` is unset; provide the whole object", parts[..i].join(".")),
                })
            }
            _ => return Err(unknown()),
        };
    }
    Ok(())
}
