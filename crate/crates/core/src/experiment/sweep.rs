//! One run per axis value and seed, plus a combined summary.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{load_datasets, run_experiment, ExperimentConfig, RunManifest};
use crate::analysis::{self, InstabilityJob};
use crate::error::{Error, Result};
use crate::imp::Seeds;
use crate::pruning::Mask;

pub const SUMMARY: &str = "summary.csv";

pub struct SweepSpec<'a> {
    /// Config text every run starts from.
    pub base: &'a str,
    pub overrides: &'a [String],
    /// Dotted config key, e.g. `training.batch_size`.
    pub axis: &'a str,
    pub values: &'a [String],
    pub seeds: &'a [u64],
    pub instability: bool,
    pub overwrite: bool,
}

/// Summary columns are stable: value, seed, round, density, accuracy,
/// instability, status, error.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: String,
    pub seed: u64,
    pub round: Option<usize>,
    pub density: Option<f64>,
    pub accuracy: Option<f64>,
    pub instability: Option<f64>,
    pub status: String,
    pub error: Option<String>,
}

pub fn run_dir_name(axis: &str, value: &str, seed: u64) -> String {
    let key = axis.rsplit('.').next().unwrap_or(axis);
    let value: String = value
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
        .collect();
    format!("{key}_{value}_s{seed}")
}

fn config_for(spec: &SweepSpec<'_>, value: &str, seed: u64) -> Result<ExperimentConfig> {
    let mut ov = spec.overrides.to_vec();
    ov.push(format!("{}={value}", spec.axis));
    ov.extend([format!("seeds.init={seed}"), format!("seeds.data={seed}"), format!("seeds.reinit={seed}")]);
    ExperimentConfig::parse(spec.base, &ov)
}

/// Instability of the dense network trained from the run's initialization.
fn dense_instability(cfg: &ExperimentConfig) -> Result<f64> {
    let spec = cfg.model_spec()?;
    let model = spec.build()?;
    let seeds = cfg.seeds()?;
    let (train, test) = load_datasets(cfg)?;
    let init = model.init(seeds.init).into_flat();
    let mask = Mask::full(init.len());
    let other = Seeds {
        data: seeds.data.wrapping_add(1),
        ..seeds
    };
    let tc = cfg.train_config();
    let job = InstabilityJob {
        model: &model,
        rewind: &init,
        mask: &mask,
        train: &train,
        test: &test,
        config: &tc,
        seeds: (seeds.data_for_round(0), other.data_for_round(0)),
        samples: analysis::DEFAULT_SAMPLES,
    };
    Ok(analysis::instability(&job)?.barrier)
}

fn rows_for(value: &str, seed: u64, outcome: Result<(RunManifest, Option<f64>)>) -> Vec<SweepRow> {
    match outcome {
        Ok((m, inst)) => m
            .checkpoints
            .iter()
            .map(|c| SweepRow {
                value: value.to_string(),
                seed,
                round: Some(c.round),
                density: Some(c.density),
                accuracy: Some(c.test_accuracy),
                instability: if c.round == 0 { inst } else { None },
                status: "complete".into(),
                error: None,
            })
            .collect(),
        Err(e) => vec![SweepRow {
            value: value.to_string(),
            seed,
            round: e.round(),
            density: None,
            accuracy: None,
            instability: None,
            status: "failed".into(),
            error: Some(e.to_string()),
        }],
    }
}

/// Runs every value × seed into `out`. A failing run is recorded in the
/// summary and the sweep moves on; only setup errors abort it.
pub fn run_sweep(spec: &SweepSpec<'_>, out: &Path) -> Result<Vec<SweepRow>> {
    if spec.values.is_empty() || spec.seeds.is_empty() {
        return Err(Error::Parameter("sweep needs at least one value and one seed".into()));
    }
    // surface config mistakes before any training
    for v in spec.values {
        config_for(spec, v, spec.seeds[0])?.validate()?;
    }
    std::fs::create_dir_all(out).map_err(|e| Error::io(format!("creating {}", out.display()), e))?;
    let mut rows = Vec::new();
    for v in spec.values {
        for &seed in spec.seeds {
            let dir: PathBuf = out.join(run_dir_name(spec.axis, v, seed));
            let outcome = config_for(spec, v, seed).and_then(|cfg| {
                let m = run_experiment(&cfg, &dir, spec.overwrite)?;
                let inst = if spec.instability { Some(dense_instability(&cfg)?) } else { None };
                Ok((m, inst))
            });
            rows.extend(rows_for(v, seed, outcome));
        }
    }
    write_summary(&rows, &out.join(SUMMARY))?;
    Ok(rows)
}

pub fn write_summary(rows: &[SweepRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::Manifest(format!("csv: {e}")))?;
    }
    w.flush().map_err(|e| Error::io(format!("writing {}", path.display()), e))
}
