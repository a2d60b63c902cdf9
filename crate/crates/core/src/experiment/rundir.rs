//! Run directories: manifest, metric traces, checkpoints.
//!
//! ```text
//! <run>/manifest.json        config echo, seeds, status, checkpoint index
//! <run>/metrics.csv          round,epoch,split,loss,accuracy,lr,repellence_value
//! <run>/rounds.csv           one RoundRecord per row
//! <run>/optima.json          rounds held by the optima store
//! <run>/checkpoints/init.ckpt
//! <run>/checkpoints/round_NNN.ckpt
//! <run>/analysis/*.csv       written by analyses only
//! ```

use std::fs::{self, File};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::checkpoint::{Checkpoint, CheckpointKind};
use super::config::ExperimentConfig;
use crate::data::Normalization;
use crate::error::{Error, Result};
use crate::imp::{RoundRecord, RoundSink, Seeds, StorePolicy, Variant};
use crate::models::ModelSpec;
use crate::pruning::Mask;
use crate::training::MetricRow;

pub const MANIFEST: &str = "manifest.json";
pub const METRICS: &str = "metrics.csv";
pub const ROUNDS: &str = "rounds.csv";
pub const OPTIMA: &str = "optima.json";
pub const CHECKPOINTS: &str = "checkpoints";
pub const ANALYSIS: &str = "analysis";
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Complete,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub id: String,
    pub train_examples: usize,
    pub test_examples: usize,
    pub input: [usize; 3],
    pub classes: usize,
    pub normalization: Option<Normalization>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointEntry {
    pub round: usize,
    pub file: String,
    pub density: f64,
    pub test_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub code_version: String,
    pub status: RunStatus,
    pub failed_round: Option<usize>,
    pub error: Option<String>,
    pub model: ModelSpec,
    pub parameters: usize,
    pub weights: usize,
    pub dataset: DatasetInfo,
    pub variant: Variant,
    pub seeds: Seeds,
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub init_checkpoint: String,
    pub checkpoints: Vec<CheckpointEntry>,
}

impl RunManifest {
    pub fn model_id(&self) -> &'static str {
        self.model.arch.id()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct OptimaIndex {
    policy: StorePolicy,
    rounds: Vec<usize>,
    files: Vec<String>,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(format!("writing {}", tmp.display()), e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(format!("renaming {}", tmp.display()), e))
}

pub fn write_manifest(dir: &Path, m: &RunManifest) -> Result<()> {
    let mut text = serde_json::to_string_pretty(m).map_err(|e| Error::Manifest(e.to_string()))?;
    text.push('\n');
    write_atomic(&dir.join(MANIFEST), text.as_bytes())
}

pub fn read_manifest(dir: &Path) -> Result<RunManifest> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    serde_json::from_str(&text).map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))
}

/// Prepares an empty run directory. An existing directory is an error unless
/// `overwrite` is set, in which case it is removed first.
pub fn create_run_dir(dir: &Path, overwrite: bool) -> Result<()> {
    if dir.exists() {
        if !overwrite {
            return Err(Error::Config(format!(
                "{} already exists; pass --overwrite to replace it",
                dir.display()
            )));
        }
        fs::remove_dir_all(dir).map_err(|e| Error::io(format!("removing {}", dir.display()), e))?;
    }
    fs::create_dir_all(dir.join(CHECKPOINTS)).map_err(|e| Error::io(format!("creating {}", dir.display()), e))
}

pub fn checkpoint_file(round: usize) -> String {
    format!("{CHECKPOINTS}/{}.ckpt", crate::imp::checkpoint_name(round))
}

pub const INIT_FILE: &str = "checkpoints/init.ckpt";

/// Persists a run as it progresses.
pub struct RunSink {
    dir: PathBuf,
    manifest: RunManifest,
    metrics: csv::Writer<File>,
    rounds: csv::Writer<File>,
    store_policy: Option<StorePolicy>,
    optima: Vec<usize>,
}

impl RunSink {
    pub fn new(dir: &Path, manifest: RunManifest, store_policy: Option<StorePolicy>) -> Result<Self> {
        let open = |name: &str| {
            let p = dir.join(name);
            csv::Writer::from_path(&p).map_err(|e| Error::Manifest(format!("{}: {e}", p.display())))
        };
        let metrics = open(METRICS)?;
        let rounds = open(ROUNDS)?;
        write_manifest(dir, &manifest)?;
        Ok(RunSink {
            dir: dir.to_path_buf(),
            manifest,
            metrics,
            rounds,
            store_policy,
            optima: Vec::new(),
        })
    }

    pub fn manifest(&self) -> &RunManifest {
        &self.manifest
    }

    pub fn finish(mut self, outcome: &Result<Vec<RoundRecord>>) -> Result<RunManifest> {
        self.metrics.flush().map_err(|e| Error::io("flushing metrics", e))?;
        self.rounds.flush().map_err(|e| Error::io("flushing rounds", e))?;
        match outcome {
            Ok(_) => self.manifest.status = RunStatus::Complete,
            Err(e) => {
                self.manifest.status = RunStatus::Failed;
                self.manifest.failed_round = e.round();
                self.manifest.error = Some(e.to_string());
            }
        }
        write_manifest(&self.dir, &self.manifest)?;
        Ok(self.manifest)
    }

    fn checkpoint(&self, round: usize, kind: CheckpointKind, mask: &Mask, theta: &[f32]) -> Checkpoint {
        Checkpoint {
            model_id: self.manifest.model_id().to_string(),
            round,
            seeds: self.manifest.seeds,
            kind,
            mask: mask.clone(),
            weights: theta.to_vec(),
        }
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Manifest(format!("csv: {e}"))
}

impl RoundSink for RunSink {
    fn on_init(&mut self, init: &[f32], mask: &Mask) -> Result<()> {
        self.checkpoint(0, CheckpointKind::Init, mask, init).save(&self.dir.join(INIT_FILE))
    }

    fn on_round(&mut self, record: &RoundRecord, theta: &[f32], mask: &Mask, metrics: &[MetricRow]) -> Result<()> {
        let file = checkpoint_file(record.round);
        self.checkpoint(record.round, CheckpointKind::Trained, mask, theta)
            .save(&self.dir.join(&file))?;
        for m in metrics {
            self.metrics.serialize(m).map_err(csv_err)?;
        }
        self.rounds.serialize(record).map_err(csv_err)?;
        self.metrics.flush().map_err(|e| Error::io("flushing metrics", e))?;
        self.rounds.flush().map_err(|e| Error::io("flushing rounds", e))?;
        self.manifest.checkpoints.push(CheckpointEntry {
            round: record.round,
            file,
            density: record.density,
            test_accuracy: record.test_accuracy,
        });
        if let Some(policy) = self.store_policy {
            if policy == StorePolicy::LastOnly {
                self.optima.clear();
            }
            self.optima.push(record.round);
            let index = OptimaIndex {
                policy,
                rounds: self.optima.clone(),
                files: self.optima.iter().map(|&r| checkpoint_file(r)).collect(),
            };
            let text = serde_json::to_string_pretty(&index).map_err(|e| Error::Manifest(e.to_string()))?;
            write_atomic(&self.dir.join(OPTIMA), text.as_bytes())?;
        }
        write_manifest(&self.dir, &self.manifest)
    }
}

/// Read access to a finished or partial run.
#[derive(Clone, Debug)]
pub struct RunDir {
    pub path: PathBuf,
    pub manifest: RunManifest,
}

impl RunDir {
    pub fn open(path: &Path) -> Result<Self> {
        if !path.join(MANIFEST).exists() {
            return Err(Error::Manifest(format!("{} has no {MANIFEST}", path.display())));
        }
        Ok(RunDir {
            path: path.to_path_buf(),
            manifest: read_manifest(path)?,
        })
    }

    /// Errors unless the run completed, or `partial` allows an incomplete one.
    pub fn require_complete(&self, partial: bool) -> Result<()> {
        if self.manifest.status != RunStatus::Complete && !partial {
            return Err(Error::Manifest(format!(
                "run {} is {:?}; pass --partial to analyze what exists",
                self.path.display(),
                self.manifest.status
            )));
        }
        Ok(())
    }

    pub fn rounds(&self) -> Vec<usize> {
        self.manifest.checkpoints.iter().map(|c| c.round).collect()
    }

    pub fn load_round(&self, round: usize) -> Result<Checkpoint> {
        let entry = self
            .manifest
            .checkpoints
            .iter()
            .find(|c| c.round == round)
            .ok_or_else(|| Error::Manifest(format!("run {} has no checkpoint for round {round}", self.path.display())))?;
        let path = self.path.join(&entry.file);
        if !path.exists() {
            return Err(Error::Manifest(format!("checkpoint for round {round} missing: {}", path.display())));
        }
        let ck = Checkpoint::load(&path)?;
        self.check_model(&ck, &path)?;
        Ok(ck)
    }

    pub fn load_init(&self) -> Result<Checkpoint> {
        let path = self.path.join(&self.manifest.init_checkpoint);
        if !path.exists() {
            return Err(Error::Manifest(format!("init checkpoint missing: {}", path.display())));
        }
        let ck = Checkpoint::load(&path)?;
        self.check_model(&ck, &path)?;
        Ok(ck)
    }

    fn check_model(&self, ck: &Checkpoint, path: &Path) -> Result<()> {
        if ck.model_id != self.manifest.model_id() || ck.weights.len() != self.manifest.parameters {
            return Err(Error::Manifest(format!(
                "{} holds {} with {} values, manifest says {} with {}",
                path.display(),
                ck.model_id,
                ck.weights.len(),
                self.manifest.model_id(),
                self.manifest.parameters
            )));
        }
        Ok(())
    }

    pub fn records(&self) -> Result<Vec<RoundRecord>> {
        let path = self.path.join(ROUNDS);
        let mut r = csv::Reader::from_path(&path).map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
        r.deserialize().map(|row| row.map_err(csv_err)).collect()
    }

    pub fn metrics(&self) -> Result<Vec<MetricRow>> {
        let path = self.path.join(METRICS);
        let mut r = csv::Reader::from_path(&path).map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
        r.deserialize().map(|row| row.map_err(csv_err)).collect()
    }

    pub fn analysis_dir(&self) -> Result<PathBuf> {
        let p = self.path.join(ANALYSIS);
        fs::create_dir_all(&p).map_err(|e| Error::io(format!("creating {}", p.display()), e))?;
        Ok(p)
    }
}
