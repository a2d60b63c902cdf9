//! Sectioned TOML experiment configuration.
//!
//! Unknown keys anywhere are errors. Seeds have no defaults: they come from
//! the file or from explicit overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imp::{ImpConfig, RewindTarget, Seeds, Variant};
use crate::models::{Architecture, InitMode, ModelSpec};
use crate::pruning::PruneStyle;
use crate::training::{LrSchedule, LrShape, OptimizerConfig, RepellenceConfig, RepellenceMode, TrainConfig};

/// The bundled LeNet IMP configuration.
pub const LENET_IMP_CFG: &str = include_str!("../../configs/lenet_imp.cfg");
/// Conv-S on downsampled MNIST with weight decay 0.01.
pub const CONV_S_IMP_CFG: &str = include_str!("../../configs/conv_s_imp.cfg");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSection,
    pub dataset: DatasetSection,
    pub optimizer: OptimizerSection,
    #[serde(default)]
    pub schedule: ScheduleSection,
    pub training: TrainingSection,
    pub imp: ImpSection,
    #[serde(default)]
    pub repellence: RepellenceSection,
    #[serde(default)]
    pub seeds: SeedsSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub arch: Architecture,
    /// Defaults to uniform for lenet, normal for conv_s.
    pub init: Option<InitMode>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetName {
    Mnist,
    Synthetic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub name: DatasetName,
    /// Directory holding the dataset; defaults to `$IMP_DATA_ROOT/<name>`.
    pub root: Option<PathBuf>,
    /// Use only the first N training examples.
    pub train_subset: Option<usize>,
    pub test_subset: Option<usize>,
    /// Average-pool images by this factor (1 keeps them).
    #[serde(default = "one")]
    pub downsample: usize,
    /// Synthetic blobs: classes, examples per class, image side, separation.
    #[serde(default = "default_classes")]
    pub classes: usize,
    #[serde(default = "default_per_class")]
    pub per_class: usize,
    #[serde(default = "default_side")]
    pub side: usize,
    #[serde(default = "default_separation")]
    pub separation: f64,
    #[serde(default)]
    pub synthetic_seed: u64,
}

fn one() -> usize {
    1
}
fn default_classes() -> usize {
    3
}
fn default_per_class() -> usize {
    100
}
fn default_side() -> usize {
    4
}
fn default_separation() -> f64 {
    6.0
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Adam,
    SgdMomentum,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSection {
    pub algorithm: Algorithm,
    pub lr: f64,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default = "d_momentum")]
    pub momentum: f64,
    #[serde(default = "d_beta1")]
    pub beta1: f64,
    #[serde(default = "d_beta2")]
    pub beta2: f64,
    #[serde(default = "d_eps")]
    pub eps: f64,
}

fn d_momentum() -> f64 {
    0.9
}
fn d_beta1() -> f64 {
    0.9
}
fn d_beta2() -> f64 {
    0.999
}
fn d_eps() -> f64 {
    1e-8
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleShape {
    #[default]
    Constant,
    StepDrops,
    Cosine,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSection {
    #[serde(default)]
    pub shape: ScheduleShape,
    #[serde(default)]
    pub warmup_epochs: f64,
    /// Epochs at which step_drops multiplies the rate by `drop_factor`.
    #[serde(default)]
    pub drop_epochs: Vec<f64>,
    #[serde(default = "d_drop")]
    pub drop_factor: f64,
}

fn d_drop() -> f64 {
    0.1
}

impl Default for ScheduleSection {
    fn default() -> Self {
        ScheduleSection {
            shape: ScheduleShape::Constant,
            warmup_epochs: 0.0,
            drop_epochs: Vec::new(),
            drop_factor: d_drop(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub fixed_steps: Option<usize>,
    pub augment_pad: Option<usize>,
    #[serde(default = "yes")]
    pub eval_every_epoch: bool,
}

fn yes() -> bool {
    true
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PruningStyleName {
    #[default]
    Iterative,
    OneShot,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImpSection {
    pub variant: Variant,
    pub rounds: usize,
    #[serde(default)]
    pub style: PruningStyleName,
    #[serde(default = "d_rate")]
    pub rate: f64,
    /// Density kept by one-shot pruning.
    pub one_shot_target: Option<f64>,
    #[serde(default = "d_rewind")]
    pub rewind: RewindTarget,
    /// IMP run directory whose masks the reinit variant trains.
    pub mask_source: Option<PathBuf>,
}

fn d_rate() -> f64 {
    0.2
}
fn d_rewind() -> RewindTarget {
    RewindTarget::Init
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RepellenceSection {
    #[serde(default)]
    pub mode: RepellenceMode,
    #[serde(default = "d_lambda")]
    pub lambda_r: f64,
}

fn d_lambda() -> f64 {
    2.0
}

impl Default for RepellenceSection {
    fn default() -> Self {
        RepellenceSection {
            mode: RepellenceMode::Off,
            lambda_r: d_lambda(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedsSection {
    pub init: Option<u64>,
    pub data: Option<u64>,
    pub reinit: Option<u64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
}

/// Applies `key=value` overrides to a TOML document. Values parse as TOML
/// when possible and fall back to plain strings.
pub fn apply_overrides(doc: &mut toml::Table, overrides: &[String]) -> Result<()> {
    for ov in overrides {
        let (key, raw) = ov
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {ov:?} is not key=value")))?;
        let path: Vec<&str> = key.trim().split('.').collect();
        if path.iter().any(|p| p.is_empty()) {
            return Err(Error::Config(format!("bad override key {key:?}")));
        }
        let value = parse_value(raw.trim());
        let mut table = &mut *doc;
        for part in &path[..path.len() - 1] {
            let entry = table
                .entry(part.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            table = entry
                .as_table_mut()
                .ok_or_else(|| Error::Config(format!("override {key:?}: {part} is not a section")))?;
        }
        table.insert(path[path.len() - 1].to_string(), value);
    }
    Ok(())
}

fn parse_value(raw: &str) -> toml::Value {
    let wrapped = format!("v = {raw}");
    match wrapped.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str, overrides: &[String]) -> Result<Self> {
        let mut doc: toml::Table = text.parse().map_err(|e| Error::Config(format!("{e}")))?;
        apply_overrides(&mut doc, overrides)?;
        let cfg: ExperimentConfig = doc.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::parse(&text, overrides).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn seeds(&self) -> Result<Seeds> {
        let s = &self.seeds;
        match (s.init, s.data, s.reinit) {
            (Some(init), Some(data), Some(reinit)) => Ok(Seeds { init, data, reinit }),
            _ => {
                let missing: Vec<&str> = [("init", s.init), ("data", s.data), ("reinit", s.reinit)]
                    .iter()
                    .filter(|(_, v)| v.is_none())
                    .map(|(k, _)| *k)
                    .collect();
                Err(Error::Config(format!("seeds must be given explicitly; missing {}", missing.join(", "))))
            }
        }
    }

    pub fn input_shape(&self) -> Result<[usize; 3]> {
        let d = &self.dataset;
        if d.downsample == 0 {
            return Err(Error::Config("dataset.downsample must be >= 1".into()));
        }
        let base = match d.name {
            DatasetName::Mnist => [1, 28, 28],
            DatasetName::Synthetic => [1, d.side, d.side],
        };
        if base[1] % d.downsample != 0 {
            return Err(Error::Config(format!("downsample {} does not divide {}", d.downsample, base[1])));
        }
        Ok([base[0], base[1] / d.downsample, base[2] / d.downsample])
    }

    pub fn classes(&self) -> usize {
        match self.dataset.name {
            DatasetName::Mnist => 10,
            DatasetName::Synthetic => self.dataset.classes,
        }
    }

    pub fn model_spec(&self) -> Result<ModelSpec> {
        let mut spec = ModelSpec::new(self.model.arch, self.input_shape()?, self.classes());
        if let Some(init) = self.model.init {
            spec.init = init;
        }
        Ok(spec)
    }

    pub fn train_config(&self) -> TrainConfig {
        let o = &self.optimizer;
        let optimizer = match o.algorithm {
            Algorithm::Adam => OptimizerConfig::Adam {
                beta1: o.beta1,
                beta2: o.beta2,
                eps: o.eps,
            },
            Algorithm::SgdMomentum => OptimizerConfig::SgdMomentum { momentum: o.momentum },
        };
        let s = &self.schedule;
        let shape = match s.shape {
            ScheduleShape::Constant => LrShape::Constant,
            ScheduleShape::StepDrops => LrShape::StepDrops {
                epochs: s.drop_epochs.clone(),
                factor: s.drop_factor,
            },
            ScheduleShape::Cosine => LrShape::Cosine {
                total_epochs: self.training.epochs as f64,
            },
        };
        TrainConfig {
            epochs: self.training.epochs,
            batch_size: self.training.batch_size,
            optimizer,
            schedule: LrSchedule {
                base_lr: o.lr,
                shape,
                warmup_epochs: s.warmup_epochs,
            },
            weight_decay: o.weight_decay,
            fixed_steps: self.training.fixed_steps,
            augment_pad: self.training.augment_pad,
            eval_every_epoch: self.training.eval_every_epoch,
        }
    }

    pub fn pruning(&self) -> Result<PruneStyle> {
        match self.imp.style {
            PruningStyleName::Iterative => Ok(PruneStyle::Iterative { rate: self.imp.rate }),
            PruningStyleName::OneShot => self
                .imp
                .one_shot_target
                .map(|target| PruneStyle::OneShot { target })
                .ok_or_else(|| Error::Config("one_shot style needs imp.one_shot_target".into())),
        }
    }

    /// The IMP configuration after validation.
    pub fn imp_config(&self) -> Result<ImpConfig> {
        let cfg = ImpConfig {
            rounds: self.imp.rounds,
            pruning: self.pruning()?,
            rewind: self.imp.rewind,
            variant: self.imp.variant,
            repellence: RepellenceConfig {
                lambda_r: self.repellence.lambda_r,
                mode: self.repellence.mode,
            },
            train: self.train_config(),
            seeds: self.seeds()?,
        };
        cfg.validate().map_err(|e| match e {
            Error::Parameter(m) => Error::Config(m),
            other => other,
        })?;
        if self.imp.variant == Variant::Reinit && self.imp.mask_source.is_none() {
            return Err(Error::Config("variant reinit needs imp.mask_source".into()));
        }
        let d = &self.dataset;
        if d.name == DatasetName::Synthetic && (d.classes < 2 || d.side == 0 || d.per_class == 0) {
            return Err(Error::Config("synthetic dataset needs classes >= 2, side >= 1, per_class >= 1".into()));
        }
        if matches!(d.train_subset, Some(0)) || matches!(d.test_subset, Some(0)) {
            return Err(Error::Config("dataset subsets must be positive".into()));
        }
        self.model_spec()?;
        Ok(cfg)
    }

    /// Full validation, including seeds.
    pub fn validate(&self) -> Result<()> {
        self.imp_config().map(|_| ())
    }
}
