//! Config-driven runs, sweeps and analyses over run directories.

pub mod analyze;
pub mod checkpoint;
pub mod config;
pub mod rundir;
pub mod sweep;

use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

pub use checkpoint::{Checkpoint, CheckpointKind};
pub use config::{DatasetName, ExperimentConfig, CONV_S_IMP_CFG, LENET_IMP_CFG};
pub use analyze::{analyze, AnalyzeReport, AnalyzeRequest, Which};
pub use rundir::{RunDir, RunManifest, RunStatus};
pub use sweep::{run_sweep, SweepRow, SweepSpec};

use crate::data::{synthetic_blobs_with, Dataset, MnistFiles, Split};
use crate::error::{Error, Result};
use crate::imp::{imp_run, ImpData, Variant};
use crate::pruning::Mask;
use rundir::{create_run_dir, CheckpointEntry, DatasetInfo, RunSink, INIT_FILE, SCHEMA_VERSION};

/// Environment variable naming the dataset root; MNIST lives in `<root>/mnist`.
pub const DATA_ROOT_ENV: &str = "IMP_DATA_ROOT";

pub fn dataset_dir(cfg: &ExperimentConfig) -> Result<PathBuf> {
    if let Some(root) = &cfg.dataset.root {
        return Ok(root.clone());
    }
    let root = std::env::var_os(DATA_ROOT_ENV).ok_or_else(|| {
        Error::Config(format!("dataset root unknown: set {DATA_ROOT_ENV} or dataset.root"))
    })?;
    Ok(PathBuf::from(root).join("mnist"))
}

/// Train and test splits after subsetting and downsampling.
pub fn load_datasets(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    let d = &cfg.dataset;
    let (train, test) = match d.name {
        DatasetName::Mnist => {
            let dir = dataset_dir(cfg)?;
            let files = MnistFiles::in_dir(&dir);
            if !files.exist() {
                return Err(Error::Config(format!(
                    "dataset missing: MNIST IDX files not found in {} (set {DATA_ROOT_ENV})",
                    dir.display()
                )));
            }
            files.load()?
        }
        DatasetName::Synthetic => {
            let test_per_class = (d.per_class / 2).max(1);
            let all = synthetic_blobs_with(
                d.classes,
                d.per_class + test_per_class,
                d.side * d.side,
                d.separation,
                1.0,
                d.synthetic_seed,
            )?
            .reshaped([1, d.side, d.side])?;
            let n_train = d.classes * d.per_class;
            (all.take(n_train), all.slice(n_train, d.classes * test_per_class).with_split(Split::Test))
        }
    };
    let train = match d.train_subset {
        Some(n) => train.take(n),
        None => train,
    };
    let test = match d.test_subset {
        Some(n) => test.take(n),
        None => test,
    };
    Ok((train.downsampled(d.downsample)?, test.downsampled(d.downsample)?))
}

/// The config as echoed into manifests: output location removed.
pub fn config_echo(cfg: &ExperimentConfig) -> ExperimentConfig {
    let mut echo = cfg.clone();
    echo.output.dir = None;
    echo
}

pub fn config_hash(cfg: &ExperimentConfig) -> String {
    hex(&Sha256::digest(config_echo(cfg).to_toml().as_bytes()))
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Masks of rounds `0..=rounds` from an IMP run, for reinit baselines.
pub fn load_mask_schedule(source: &Path, cfg: &ExperimentConfig, rounds: usize) -> Result<Vec<Mask>> {
    let run = RunDir::open(source)?;
    let spec = cfg.model_spec()?;
    if run.manifest.model.arch != spec.arch || run.manifest.model.input != spec.input {
        return Err(Error::Config(format!(
            "mask source {} trains {:?}, this config {:?}",
            source.display(),
            run.manifest.model,
            spec
        )));
    }
    if run.manifest.variant == Variant::Reinit {
        return Err(Error::Config(format!("mask source {} is itself a reinit run", source.display())));
    }
    (0..=rounds)
        .map(|r| run.load_round(r).map(|ck| ck.mask.with_round(r)))
        .collect()
}

/// Executes one configured run into `out`.
///
/// Validation and dataset loading happen before the directory is touched.
/// On a training failure the manifest is finalized as failed with the round
/// and the error is returned.
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path, overwrite: bool) -> Result<RunManifest> {
    let imp = cfg.imp_config()?;
    let spec = cfg.model_spec()?;
    let model = spec.build()?;
    let (train, test) = load_datasets(cfg)?;
    let masks = match (&cfg.imp.mask_source, imp.variant) {
        (Some(src), Variant::Reinit) => Some(load_mask_schedule(src, cfg, imp.rounds)?),
        _ => None,
    };
    create_run_dir(out, overwrite)?;
    let manifest = RunManifest {
        schema_version: SCHEMA_VERSION,
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        status: RunStatus::Running,
        failed_round: None,
        error: None,
        model: spec,
        parameters: model.layout().len(),
        weights: model.layout().weight_count(),
        dataset: DatasetInfo {
            id: train.id.clone(),
            train_examples: train.len(),
            test_examples: test.len(),
            input: train.shape(),
            classes: train.classes(),
            normalization: train.normalization().cloned(),
        },
        variant: imp.variant,
        seeds: imp.seeds,
        config_hash: config_hash(cfg),
        config: config_echo(cfg),
        init_checkpoint: INIT_FILE.to_string(),
        checkpoints: Vec::<CheckpointEntry>::new(),
    };
    let policy = (imp.variant != Variant::Reinit).then(|| imp.store_policy());
    let mut sink = RunSink::new(out, manifest, policy)?;
    let data = ImpData {
        train: &train,
        test: &test,
    };
    let outcome = imp_run(&model, &imp, &data, masks.as_deref(), &mut sink);
    let manifest = sink.finish(&outcome)?;
    outcome.map(|_| manifest)
}
