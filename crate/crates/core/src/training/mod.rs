//! Optimizers, learning-rate schedules, the repellence term and the epoch loop.

mod optim;
mod repellence;
mod schedule;

pub use optim::{adam_step, sgd_momentum_step, AdamHyper, OptimState, OptimizerConfig};
pub use repellence::{
    repellence_value, squared_cosines, RepellenceConfig, RepellenceMode, Repeller,
};
pub use schedule::{lr_at, LrSchedule, LrShape};

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor};
use crate::data::{augment_batch, BatchPlan, Dataset, Split};
use crate::error::{Error, Result};
use crate::imp::store::OptimaStore;
use crate::models::Model;
use crate::pruning::Mask;
use crate::rng::{self, CounterRng};

const EVAL_BATCH: usize = 250;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub schedule: LrSchedule,
    pub weight_decay: f64,
    /// Train for exactly this many steps instead of `epochs` full passes.
    pub fixed_steps: Option<usize>,
    /// Shift-crop padding plus random horizontal flips.
    pub augment_pad: Option<usize>,
    /// Evaluate on the test split after every epoch, not only the last.
    pub eval_every_epoch: bool,
}

impl TrainConfig {
    /// Adam at constant 1.2e-3, batch 60, 25 epochs, no weight decay.
    pub fn lenet() -> Self {
        TrainConfig {
            epochs: 25,
            batch_size: 60,
            optimizer: OptimizerConfig::adam(),
            schedule: LrSchedule::constant(1.2e-3),
            weight_decay: 0.0,
            fixed_steps: None,
            augment_pad: None,
            eval_every_epoch: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Parameter("batch_size must be positive".into()));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::Parameter(format!("weight_decay {} must be >= 0", self.weight_decay)));
        }
        self.optimizer.validate()?;
        self.schedule.validate()
    }

    pub fn total_steps(&self, n: usize) -> usize {
        let per_epoch = n.div_ceil(self.batch_size.max(1));
        self.fixed_steps.unwrap_or(self.epochs * per_epoch)
    }
}

/// One row of the metric trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub round: usize,
    pub epoch: usize,
    pub split: Split,
    pub loss: f64,
    pub accuracy: f64,
    pub lr: f64,
    pub repellence_value: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
    pub examples: usize,
}

impl Evaluation {
    pub fn error(&self) -> f64 {
        1.0 - self.accuracy
    }
}

/// Everything one training run reads.
pub struct TrainJob<'a> {
    pub model: &'a Model,
    pub init: &'a [f32],
    pub mask: &'a Mask,
    pub train: &'a Dataset,
    pub test: Option<&'a Dataset>,
    pub config: &'a TrainConfig,
    pub data_seed: u64,
    pub round: usize,
    pub store: Option<&'a OptimaStore>,
    pub repellence: RepellenceConfig,
    /// Capture the weights after this many epochs (0 = before training).
    pub snapshot_epoch: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub params: Vec<f32>,
    pub metrics: Vec<MetricRow>,
    pub snapshot: Option<Vec<f32>>,
    pub steps: usize,
    pub test: Option<Evaluation>,
}

/// Runs the configured number of steps of cross-entropy plus repellence.
pub fn train(job: &TrainJob<'_>) -> Result<TrainOutput> {
    let cfg = job.config;
    cfg.validate()?;
    let layout = job.model.layout();
    if job.init.len() != layout.len() || job.mask.len() != layout.len() {
        return Err(Error::dim("train", &[layout.len()], &[job.init.len(), job.mask.len()]));
    }
    check_input(job.model, job.train)?;
    if let Some(test) = job.test {
        check_input(job.model, test)?;
    }
    let repeller = match job.store {
        Some(store) => Repeller::<f32>::new(store, job.mask, &job.repellence)?,
        None => None,
    };

    let mut params = job.init.to_vec();
    crate::pruning::apply_mask_in_place(&mut params, job.mask)?;
    let mut state = OptimState::new(cfg.optimizer, params.len());
    let mut grads = vec![0.0f32; params.len()];
    let n = job.train.len();
    let plan = BatchPlan::new(job.data_seed, cfg.batch_size.min(n));
    let per_epoch = plan.batches_per_epoch(n);
    let total = cfg.total_steps(n);
    let mut snapshot = (job.snapshot_epoch == Some(0)).then(|| params.clone());
    let mut metrics = Vec::new();
    let mut test_eval = None;
    let mut step = 0usize;
    let mut epoch = 0usize;

    while step < total {
        let order = plan.batch_indices(n, epoch)?;
        let mut aug = CounterRng::new(rng::derive(
            rng::derive(job.data_seed, rng::stream::AUGMENT),
            epoch as u64,
        ));
        let (mut loss_sum, mut rep_sum, mut correct, mut seen, mut batches) = (0.0f64, 0.0f64, 0usize, 0usize, 0usize);
        let mut lr = 0.0;
        for (b, idx) in order.iter().enumerate() {
            if step >= total {
                break;
            }
            lr = lr_at(&cfg.schedule, epoch as f64 + b as f64 / per_epoch as f64);
            let (mut images, labels) = job.train.gather(idx);
            if let Some(pad) = cfg.augment_pad {
                augment_batch(&mut images, pad, &mut aug);
            }
            let mut g = Graph::<f32>::new();
            let leaves = job.model.leaves(&mut g, &params, true);
            let x = g.constant(images);
            let logits = job.model.forward(&mut g, &leaves, x)?;
            let ce = g.softmax_cross_entropy(logits, &labels)?;
            let ce_value = g.value(ce).item()? as f64;
            let (loss, rep_value) = match &repeller {
                Some(r) => {
                    let j = r.term(&mut g, &leaves)?;
                    let jv = g.value(j).item()? as f64;
                    (g.add(ce, j)?, jv)
                }
                None => (ce, 0.0),
            };
            let total_loss = ce_value + rep_value;
            if !total_loss.is_finite() {
                return Err(Error::Diverged { step, loss: total_loss });
            }
            correct += count_correct(g.value(logits), &labels);
            seen += labels.len();
            loss_sum += ce_value;
            rep_sum += rep_value;
            batches += 1;

            g.backward(loss)?;
            for (entry, &leaf) in layout.entries().iter().zip(&leaves) {
                let grad = g.grad(leaf).ok_or_else(|| Error::State(format!("no gradient for {}", entry.name)))?;
                grads[entry.range()].copy_from_slice(grad);
            }
            state.step(&mut params, &mut grads, job.mask, lr, cfg.weight_decay)?;
            step += 1;
        }
        epoch += 1;
        if params.iter().zip(job.mask.bits()).any(|(&p, &keep)| !keep && p != 0.0) {
            return Err(Error::State(format!("pruned weight became nonzero in epoch {epoch}")));
        }
        if job.snapshot_epoch == Some(epoch) {
            snapshot = Some(params.clone());
        }
        let rep_mean = rep_sum / batches.max(1) as f64;
        metrics.push(MetricRow {
            round: job.round,
            epoch,
            split: Split::Train,
            loss: loss_sum / batches.max(1) as f64,
            accuracy: correct as f64 / seen.max(1) as f64,
            lr,
            repellence_value: rep_mean,
        });
        let last = step >= total;
        if let Some(test) = job.test {
            if cfg.eval_every_epoch || last {
                let e = evaluate(job.model, &params, test)?;
                metrics.push(MetricRow {
                    round: job.round,
                    epoch,
                    split: Split::Test,
                    loss: e.loss,
                    accuracy: e.accuracy,
                    lr,
                    repellence_value: rep_mean,
                });
                test_eval = Some(e);
            }
        }
    }
    if test_eval.is_none() {
        if let Some(test) = job.test {
            test_eval = Some(evaluate(job.model, &params, test)?);
        }
    }
    if job.snapshot_epoch.is_some() && snapshot.is_none() {
        return Err(Error::Parameter(format!(
            "snapshot epoch {:?} not reached in {epoch} epochs",
            job.snapshot_epoch
        )));
    }
    Ok(TrainOutput {
        params,
        metrics,
        snapshot,
        steps: step,
        test: test_eval,
    })
}

fn check_input(model: &Model, data: &Dataset) -> Result<()> {
    if data.shape() != model.spec().input {
        return Err(Error::dim("dataset vs model input", &data.shape(), &model.spec().input));
    }
    if data.classes() != model.spec().classes {
        return Err(Error::dim("dataset vs model classes", &[data.classes()], &[model.spec().classes]));
    }
    Ok(())
}

fn count_correct(logits: &Tensor<f32>, labels: &[usize]) -> usize {
    let classes = logits.shape()[1];
    logits
        .data()
        .chunks(classes)
        .zip(labels)
        .filter(|(row, &y)| argmax(row) == y)
        .count()
}

// first index wins on ties
fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Mean cross-entropy and accuracy of `params` on `data`, in dataset order.
pub fn evaluate(model: &Model, params: &[f32], data: &Dataset) -> Result<Evaluation> {
    check_input(model, data)?;
    if params.len() != model.layout().len() {
        return Err(Error::dim("evaluate", &[model.layout().len()], &[params.len()]));
    }
    let n = data.len();
    let (mut loss, mut correct) = (0.0f64, 0usize);
    let idx: Vec<usize> = (0..n).collect();
    for chunk in idx.chunks(EVAL_BATCH) {
        let (images, labels) = data.gather(chunk);
        let mut g = Graph::<f32>::new();
        let leaves = model.leaves(&mut g, params, false);
        let x = g.constant(images);
        let logits = model.forward(&mut g, &leaves, x)?;
        let ce = g.softmax_cross_entropy(logits, &labels)?;
        loss += g.value(ce).item()? as f64 * labels.len() as f64;
        correct += count_correct(g.value(logits), &labels);
    }
    Ok(Evaluation {
        loss: loss / n.max(1) as f64,
        accuracy: correct as f64 / n.max(1) as f64,
        examples: n,
    })
}
