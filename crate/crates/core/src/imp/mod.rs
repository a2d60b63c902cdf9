//! IMP orchestration: train, prune, rewind, retrain.

pub mod store;

pub use store::{OptimaStore, StorePolicy, StoredOptimum};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::models::Model;
use crate::pruning::{global_magnitude_prune, Mask, PruneReport, PruneStyle};
use crate::rng::{self, stream};
use crate::training::{squared_cosines, train, MetricRow, RepellenceConfig, RepellenceMode, TrainConfig, TrainJob};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Imp,
    Reinit,
    Repellent,
    Attractive,
}

impl Variant {
    pub fn id(self) -> &'static str {
        match self {
            Variant::Imp => "imp",
            Variant::Reinit => "reinit",
            Variant::Repellent => "repellent",
            Variant::Attractive => "attractive",
        }
    }
}

/// Where surviving weights are reset to before retraining.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RewindTarget {
    Init,
    Epoch(usize),
}

impl fmt::Display for RewindTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RewindTarget::Init => f.write_str("init"),
            RewindTarget::Epoch(k) => write!(f, "epoch:{k}"),
        }
    }
}

impl FromStr for RewindTarget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "init" {
            return Ok(RewindTarget::Init);
        }
        s.strip_prefix("epoch:")
            .and_then(|k| k.parse().ok())
            .map(RewindTarget::Epoch)
            .ok_or_else(|| Error::Config(format!("rewind must be \"init\" or \"epoch:<k>\", got {s:?}")))
    }
}

impl Serialize for RewindTarget {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for RewindTarget {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub init: u64,
    pub data: u64,
    pub reinit: u64,
}

impl Seeds {
    /// Data-order seed used in `round`.
    pub fn data_for_round(&self, round: usize) -> u64 {
        rng::derive(rng::derive(self.data, stream::ROUND), round as u64)
    }

    /// Initialization seed of the reinit baseline in `round`.
    pub fn reinit_for_round(&self, round: usize) -> u64 {
        rng::derive(rng::derive(self.reinit, stream::REINIT), round as u64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImpConfig {
    pub rounds: usize,
    pub pruning: PruneStyle,
    pub rewind: RewindTarget,
    pub variant: Variant,
    pub repellence: RepellenceConfig,
    pub train: TrainConfig,
    pub seeds: Seeds,
}

impl ImpConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        let bad = |m: String| Err(Error::Config(m));
        let rate = self.pruning.rate();
        if !(rate > 0.0 && rate < 1.0) {
            return bad(format!("prune rate {rate} not in (0, 1)"));
        }
        if matches!(self.pruning, PruneStyle::OneShot { .. }) && self.rounds > 1 {
            return bad(format!("one-shot pruning takes at most 1 round, got {}", self.rounds));
        }
        if let RewindTarget::Epoch(k) = self.rewind {
            if k >= self.train.epochs {
                return bad(format!("rewind epoch {k} must be below epochs {}", self.train.epochs));
            }
        }
        let mode = self.repellence.mode;
        let lambda = self.repellence.lambda_r;
        match self.variant {
            Variant::Imp if mode != RepellenceMode::Off => {
                bad("variant imp with repellence enabled; use repellent or attractive".into())
            }
            Variant::Reinit if mode != RepellenceMode::Off => {
                bad("variant reinit contradicts repellence mode other than off".into())
            }
            Variant::Repellent | Variant::Attractive if mode == RepellenceMode::Off => {
                bad(format!("variant {} needs a repellence mode", self.variant.id()))
            }
            Variant::Repellent if lambda.is_nan() || lambda <= 0.0 => bad(format!("repellent variant needs lambda_r > 0, got {lambda}")),
            Variant::Attractive if lambda.is_nan() || lambda >= 0.0 => {
                bad(format!("attractive variant needs lambda_r < 0, got {lambda}"))
            }
            _ => Ok(()),
        }
    }

    pub fn store_policy(&self) -> StorePolicy {
        match self.repellence.mode {
            RepellenceMode::LastOnly => StorePolicy::LastOnly,
            _ => StorePolicy::All,
        }
    }
}

/// Record, trained weights, mask, metrics and the early-epoch rewind snapshot of one round.
type RoundOutcome = (RoundRecord, Vec<f32>, Mask, Vec<MetricRow>, Option<Vec<f32>>);

/// Results of one IMP round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub density: f64,
    pub surviving: usize,
    /// Pruning threshold that produced this round's mask; absent for round 0.
    pub threshold: Option<f64>,
    pub test_accuracy: f64,
    pub test_error: f64,
    pub test_loss: f64,
    pub checkpoint: String,
    pub seed_init: u64,
    pub seed_data: u64,
    pub seed_reinit: u64,
    pub steps: usize,
    /// Largest squared masked cosine to the optima the repellence term saw.
    pub max_sq_cosine: Option<f64>,
}

pub fn checkpoint_name(round: usize) -> String {
    format!("round_{round:03}")
}

/// SHA-256 over the little-endian bytes of a flat vector.
pub fn weights_digest(values: &[f32]) -> [u8; 32] {
    let mut h = Sha256::new();
    for v in values {
        h.update(v.to_le_bytes());
    }
    h.finalize().into()
}

/// Weights captured once and verified before every reuse.
#[derive(Clone, Debug)]
pub struct Snapshot {
    values: Vec<f32>,
    digest: [u8; 32],
}

impl Snapshot {
    pub fn capture(values: Vec<f32>) -> Self {
        let digest = weights_digest(&values);
        Snapshot { values, digest }
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn digest(&self) -> [u8; 32] {
        self.digest
    }

    pub fn verify(&self) -> Result<&[f32]> {
        if weights_digest(&self.values) != self.digest {
            return Err(Error::State("rewind snapshot changed after capture".into()));
        }
        Ok(&self.values)
    }
}

/// `snapshot ⊙ mask`.
pub fn rewind(snapshot: Option<&Snapshot>, mask: &Mask) -> Result<Vec<f32>> {
    let snap = snapshot.ok_or_else(|| Error::State("no rewind snapshot captured".into()))?;
    crate::pruning::apply_mask(snap.verify()?, mask)
}

/// Fresh masked initialization for the reinit baseline of `round`.
pub fn reinit_round(model: &Model, mask: &Mask, seeds: &Seeds, round: usize) -> Result<Vec<f32>> {
    let fresh = model.init(seeds.reinit_for_round(round)).into_flat();
    crate::pruning::apply_mask(&fresh, mask)
}

/// Receives artifacts as a run progresses.
pub trait RoundSink {
    fn on_init(&mut self, _init: &[f32], _mask: &Mask) -> Result<()> {
        Ok(())
    }

    fn on_round(&mut self, record: &RoundRecord, theta: &[f32], mask: &Mask, metrics: &[MetricRow]) -> Result<()>;
}

/// Discards everything.
pub struct NullSink;

impl RoundSink for NullSink {
    fn on_round(&mut self, _: &RoundRecord, _: &[f32], _: &Mask, _: &[MetricRow]) -> Result<()> {
        Ok(())
    }
}

/// Collects records and final weights in memory.
#[derive(Default)]
pub struct MemorySink {
    pub records: Vec<RoundRecord>,
    pub weights: Vec<Vec<f32>>,
    pub masks: Vec<Mask>,
    pub metrics: Vec<MetricRow>,
    pub init: Option<Vec<f32>>,
}

impl RoundSink for MemorySink {
    fn on_init(&mut self, init: &[f32], _mask: &Mask) -> Result<()> {
        self.init = Some(init.to_vec());
        Ok(())
    }

    fn on_round(&mut self, record: &RoundRecord, theta: &[f32], mask: &Mask, metrics: &[MetricRow]) -> Result<()> {
        self.records.push(record.clone());
        self.weights.push(theta.to_vec());
        self.masks.push(mask.clone());
        self.metrics.extend_from_slice(metrics);
        Ok(())
    }
}

pub struct ImpData<'a> {
    pub train: &'a Dataset,
    pub test: &'a Dataset,
}

/// Mask per round for the reinit baseline; index `r` holds round `r`'s mask.
pub type MaskSchedule = [Mask];

/// Runs rounds `0..=cfg.rounds`. The reinit variant needs `masks` from an
/// IMP run; the other variants derive masks by pruning.
pub fn imp_run(
    model: &Model,
    cfg: &ImpConfig,
    data: &ImpData<'_>,
    masks: Option<&MaskSchedule>,
    sink: &mut dyn RoundSink,
) -> Result<Vec<RoundRecord>> {
    cfg.validate()?;
    let is_weight = model.layout().weight_positions();
    let reinit = cfg.variant == Variant::Reinit;
    if reinit {
        let m = masks.ok_or_else(|| Error::Config("reinit variant needs masks from an IMP run".into()))?;
        if m.len() < cfg.rounds + 1 {
            return Err(Error::Config(format!(
                "mask source has {} rounds, need {}",
                m.len(),
                cfg.rounds + 1
            )));
        }
    }
    let rate = cfg.pruning.rate();
    let mut store = OptimaStore::new(cfg.store_policy());
    let mut mask = Mask::full(model.layout().len());
    let init = if reinit {
        reinit_round(model, &masks.expect("checked")[0], &cfg.seeds, 0)?
    } else {
        model.init(cfg.seeds.init).into_flat()
    };
    let init_snap = Snapshot::capture(init);
    sink.on_init(init_snap.values(), &mask)?;
    let mut rewind_snap: Option<Snapshot> = match cfg.rewind {
        RewindTarget::Init | RewindTarget::Epoch(0) => Some(init_snap.clone()),
        RewindTarget::Epoch(_) => None,
    };
    let mut records = Vec::with_capacity(cfg.rounds + 1);
    let mut prev_theta: Option<Vec<f32>> = None;

    for round in 0..=cfg.rounds {
        let step = || -> Result<RoundOutcome> {
            let (next_mask, report): (Mask, Option<PruneReport>) = match (&prev_theta, reinit) {
                (None, false) => (mask.clone(), None),
                (None, true) => (masks.expect("checked")[0].clone(), None),
                (Some(theta), false) => {
                    let (m, rep) = global_magnitude_prune(theta, &mask, &is_weight, rate)?;
                    (m, Some(rep))
                }
                (Some(theta), true) => {
                    // threshold this solution would have been pruned at
                    let (_, rep) = global_magnitude_prune(theta, &mask, &is_weight, rate)?;
                    (masks.expect("checked")[round].clone().with_round(round), Some(rep))
                }
            };
            if !next_mask.is_nested_in(&mask) || !next_mask.keeps_biases(&is_weight) {
                return Err(Error::State(format!("mask of round {round} is not nested in its parent or prunes a bias")));
            }
            let start = match (round, reinit) {
                (0, _) => init_snap.verify()?.to_vec(),
                (_, true) => reinit_round(model, &next_mask, &cfg.seeds, round)?,
                (_, false) => rewind(rewind_snap.as_ref(), &next_mask)?,
            };
            let snapshot_epoch = match (round, cfg.rewind) {
                (0, RewindTarget::Epoch(k)) if k > 0 && !reinit => Some(k),
                _ => None,
            };
            let out = train(&TrainJob {
                model,
                init: &start,
                mask: &next_mask,
                train: data.train,
                test: Some(data.test),
                config: &cfg.train,
                data_seed: cfg.seeds.data_for_round(round),
                round,
                store: (!reinit).then_some(&store),
                repellence: cfg.repellence,
                snapshot_epoch,
            })?;
            let eval = out.test.expect("test split given");
            let max_sq_cosine = if cfg.repellence.is_off() || store.is_empty() {
                None
            } else {
                squared_cosines(&out.params, &next_mask, &store, &cfg.repellence)?
                    .into_iter()
                    .map(|(_, s)| s)
                    .reduce(f64::max)
            };
            let record = RoundRecord {
                round,
                density: next_mask.density(&is_weight),
                surviving: next_mask.surviving_weights(&is_weight),
                threshold: report.map(|r| r.threshold),
                test_accuracy: eval.accuracy,
                test_error: eval.error(),
                test_loss: eval.loss,
                checkpoint: checkpoint_name(round),
                seed_init: cfg.seeds.init,
                seed_data: cfg.seeds.data_for_round(round),
                seed_reinit: if reinit { cfg.seeds.reinit_for_round(round) } else { cfg.seeds.reinit },
                steps: out.steps,
                max_sq_cosine,
            };
            Ok((record, out.params, next_mask, out.metrics, out.snapshot))
        };
        let (record, theta, next_mask, metrics, snap) = step().map_err(|e| e.in_round(round))?;
        if let Some(s) = snap {
            rewind_snap = Some(Snapshot::capture(s));
        }
        sink.on_round(&record, &theta, &next_mask, &metrics).map_err(|e| e.in_round(round))?;
        if !reinit {
            store.store_optimum(round, &theta, &next_mask).map_err(|e| e.in_round(round))?;
        }
        mask = next_mask;
        prev_theta = Some(theta);
        records.push(record);
    }
    Ok(records)
}
