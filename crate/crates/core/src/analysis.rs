//! Similarity and stability diagnostics.
//!
//! Distances are computed in `f64` over the intersection of two masks.
//! Angles live in `[0, π]`, so angular distance spans `[0, 2]`; values above
//! 1 (negatively correlated networks) are reported raw and flagged, never
//! folded.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::experiment::RunDir;
use crate::imp::RoundRecord;
use crate::models::Model;
use crate::pruning::Mask;
use crate::training::{self, evaluate, RepellenceConfig, TrainConfig, TrainJob};

/// Interpolation samples along a linear path, endpoints included.
pub const DEFAULT_SAMPLES: usize = 20;
pub const DEFAULT_BINS: usize = 101;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Angular,
    Cosine,
    Euclidean,
}

impl Metric {
    pub fn id(self) -> &'static str {
        match self {
            Metric::Angular => "angular",
            Metric::Cosine => "cosine",
            Metric::Euclidean => "euclidean",
        }
    }

    /// Whether entries above 1 signal anti-correlated vectors.
    pub fn is_bounded(self) -> bool {
        !matches!(self, Metric::Euclidean)
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "angular" => Ok(Metric::Angular),
            "cosine" => Ok(Metric::Cosine),
            "euclidean" => Ok(Metric::Euclidean),
            other => Err(Error::Parameter(format!("unknown metric {other:?}; expected angular|cosine|euclidean"))),
        }
    }
}

struct Moments {
    dot: f64,
    aa: f64,
    bb: f64,
    diff: f64,
}

fn moments(a: &[f32], ma: &Mask, b: &[f32], mb: &Mask) -> Result<Moments> {
    let n = a.len();
    if b.len() != n || ma.len() != n || mb.len() != n {
        return Err(Error::dim("distance", &[a.len(), ma.len()], &[b.len(), mb.len()]));
    }
    let mut m = Moments {
        dot: 0.0,
        aa: 0.0,
        bb: 0.0,
        diff: 0.0,
    };
    for i in 0..n {
        if ma.bits()[i] && mb.bits()[i] {
            let (x, y) = (a[i] as f64, b[i] as f64);
            m.dot += x * y;
            m.aa += x * x;
            m.bb += y * y;
            m.diff += (x - y) * (x - y);
        }
    }
    Ok(m)
}

fn cosine_of(m: &Moments) -> Result<f64> {
    if m.aa == 0.0 || m.bb == 0.0 {
        return Err(Error::Degenerate("masked network".into()));
    }
    Ok((m.dot / (m.aa.sqrt() * m.bb.sqrt())).clamp(-1.0, 1.0))
}

/// `2·∠(a⊙m, b⊙m)/π` with `m = ma ∧ mb`.
pub fn angular_distance(a: &[f32], ma: &Mask, b: &[f32], mb: &Mask) -> Result<f64> {
    let m = moments(a, ma, b, mb)?;
    if a == b && ma == mb {
        cosine_of(&m)?;
        return Ok(0.0);
    }
    Ok(2.0 * cosine_of(&m)?.acos() / std::f64::consts::PI)
}

/// `1 − cos(a⊙m, b⊙m)`.
pub fn cosine_distance(a: &[f32], ma: &Mask, b: &[f32], mb: &Mask) -> Result<f64> {
    let m = moments(a, ma, b, mb)?;
    if a == b && ma == mb {
        cosine_of(&m)?;
        return Ok(0.0);
    }
    Ok(1.0 - cosine_of(&m)?)
}

/// `‖(a − b)⊙m‖₂`.
pub fn euclidean_distance(a: &[f32], ma: &Mask, b: &[f32], mb: &Mask) -> Result<f64> {
    Ok(moments(a, ma, b, mb)?.diff.sqrt())
}

pub fn distance(metric: Metric, a: &[f32], ma: &Mask, b: &[f32], mb: &Mask) -> Result<f64> {
    match metric {
        Metric::Angular => angular_distance(a, ma, b, mb),
        Metric::Cosine => cosine_distance(a, ma, b, mb),
        Metric::Euclidean => euclidean_distance(a, ma, b, mb),
    }
}

/// A labelled network for pairwise comparison.
pub struct Point<'a> {
    pub label: String,
    pub weights: &'a [f32],
    pub mask: &'a Mask,
}

/// Pairwise distances; for a run the labels are rounds `0..=R` then `init`.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceMatrix {
    pub metric: Metric,
    pub labels: Vec<String>,
    values: Vec<f64>,
}

impl DistanceMatrix {
    pub fn size(&self) -> usize {
        self.labels.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.size() + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.size();
        &self.values[i * n..(i + 1) * n]
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    /// Entries beyond 1 on a bounded metric: anti-correlated pairs.
    pub fn flagged(&self) -> Vec<(usize, usize)> {
        if !self.metric.is_bounded() {
            return Vec::new();
        }
        let n = self.size();
        (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .filter(|&(i, j)| self.get(i, j) > 1.0)
            .collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv_writer(path)?;
        let mut header = vec![self.metric.id().to_string()];
        header.extend(self.labels.iter().cloned());
        w.write_record(&header).map_err(csv_err)?;
        for (i, label) in self.labels.iter().enumerate() {
            let mut rec = vec![label.clone()];
            rec.extend(self.row(i).iter().map(|v| v.to_string()));
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }
}

/// Symmetric matrix with an exactly zero diagonal.
pub fn distance_matrix_of(points: &[Point<'_>], metric: Metric) -> Result<DistanceMatrix> {
    let n = points.len();
    let mut values = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let (p, q) = (&points[i], &points[j]);
            let d = distance(metric, p.weights, p.mask, q.weights, q.mask)
                .map_err(|e| Error::State(format!("{} vs {}: {e}", p.label, q.label)))?;
            values[i * n + j] = d;
            values[j * n + i] = d;
        }
    }
    Ok(DistanceMatrix {
        metric,
        labels: points.iter().map(|p| p.label.clone()).collect(),
        values,
    })
}

/// All trained rounds of a run plus its initialization as the last row.
pub fn distance_matrix(run: &RunDir, metric: Metric) -> Result<DistanceMatrix> {
    let mut nets = Vec::new();
    for r in run.rounds() {
        let ck = run.load_round(r)?;
        nets.push((r.to_string(), ck.weights, ck.mask));
    }
    if nets.is_empty() {
        return Err(Error::Manifest(format!("run {} has no trained rounds", run.path.display())));
    }
    let init = run.load_init()?;
    nets.push(("init".to_string(), init.weights, init.mask));
    let points: Vec<Point<'_>> = nets
        .iter()
        .map(|(label, w, m)| Point {
            label: label.clone(),
            weights: w,
            mask: m,
        })
        .collect();
    distance_matrix_of(&points, metric)
}

/// Test error (and loss) along `θ(α) = (1−α)·θa + α·θb` under one mask.
#[derive(Clone, Debug, PartialEq)]
pub struct InterpolationCurve {
    pub from: String,
    pub to: String,
    pub split: Split,
    pub alphas: Vec<f64>,
    pub errors: Vec<f64>,
    pub losses: Vec<f64>,
}

pub fn alphas(n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..n).map(|i| i as f64 / (n - 1) as f64).collect(),
    }
}

/// The point at `alpha`; exact copies of the endpoints at 0 and 1.
pub fn lerp(a: &[f32], b: &[f32], alpha: f64) -> Vec<f32> {
    if alpha == 1.0 {
        return b.to_vec();
    }
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x as f64 + alpha * (y as f64 - x as f64)) as f32)
        .collect()
}

/// Picks the later (sparser) of two nested masks.
fn common_mask<'m>(ma: &'m Mask, mb: &'m Mask) -> Result<&'m Mask> {
    if mb.is_nested_in(ma) {
        Ok(mb)
    } else if ma.is_nested_in(mb) {
        Ok(ma)
    } else {
        Err(Error::Contract(format!(
            "interpolation endpoints have non-nested masks (rounds {} and {})",
            ma.round(),
            mb.round()
        )))
    }
}

/// Evaluates `n` equidistant points between two networks on `data`.
///
/// Both endpoints are restricted to the sparser of the two masks, which must
/// be nested in the other.
pub fn interpolate_and_eval(
    model: &Model,
    a: (&str, &[f32], &Mask),
    b: (&str, &[f32], &Mask),
    n: usize,
    data: &Dataset,
) -> Result<InterpolationCurve> {
    if n < 2 {
        return Err(Error::Parameter(format!("interpolation needs at least 2 samples, got {n}")));
    }
    let mask = common_mask(a.2, b.2)?;
    let wa = crate::pruning::apply_mask(a.1, mask)?;
    let wb = crate::pruning::apply_mask(b.1, mask)?;
    let mut curve = InterpolationCurve {
        from: a.0.to_string(),
        to: b.0.to_string(),
        split: data.split,
        alphas: alphas(n),
        errors: Vec::with_capacity(n),
        losses: Vec::with_capacity(n),
    };
    for &alpha in &curve.alphas {
        let ev = evaluate(model, &lerp(&wa, &wb, alpha), data)?;
        curve.errors.push(ev.error());
        curve.losses.push(ev.loss);
    }
    Ok(curve)
}

/// Largest error above the mean of the endpoint errors, floored at 0.
pub fn error_barrier(curve: &InterpolationCurve) -> f64 {
    barrier_of(&curve.errors)
}

pub fn barrier_of(errors: &[f64]) -> f64 {
    let (Some(first), Some(last)) = (errors.first(), errors.last()) else {
        return 0.0;
    };
    let base = 0.5 * (first + last);
    let peak = errors.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (peak - base).max(0.0)
}

/// Barrier of one successive-round pair.
#[derive(Clone, Debug, PartialEq)]
pub struct BarrierRow {
    pub from: usize,
    pub to: usize,
    pub density: f64,
    pub barrier: f64,
    pub curve: InterpolationCurve,
    pub train_curve: Option<InterpolationCurve>,
}

/// Interpolates every pair `(r−1, r)` of a run under round r's mask.
pub fn successive_barriers(
    run: &RunDir,
    model: &Model,
    test: &Dataset,
    train: Option<&Dataset>,
    n: usize,
) -> Result<Vec<BarrierRow>> {
    let rounds = run.rounds();
    let entries = &run.manifest.checkpoints;
    let mut out = Vec::new();
    for (k, pair) in rounds.windows(2).enumerate() {
        let (a, b) = (run.load_round(pair[0])?, run.load_round(pair[1])?);
        let (la, lb) = (pair[0].to_string(), pair[1].to_string());
        let ends = ((la.as_str(), &a.weights[..], &a.mask), (lb.as_str(), &b.weights[..], &b.mask));
        let curve = interpolate_and_eval(model, ends.0, ends.1, n, test)?;
        let train_curve = match train {
            Some(t) => Some(interpolate_and_eval(model, ends.0, ends.1, n, t)?),
            None => None,
        };
        out.push(BarrierRow {
            from: pair[0],
            to: pair[1],
            density: entries[k + 1].density,
            barrier: error_barrier(&curve),
            curve,
            train_curve,
        });
    }
    Ok(out)
}

pub fn write_barriers_csv(rows: &[BarrierRow], summary: &Path, curves: &Path) -> Result<()> {
    let mut w = csv_writer(summary)?;
    w.write_record(["from", "to", "density", "barrier", "train_barrier"]).map_err(csv_err)?;
    for r in rows {
        let tb = r.train_curve.as_ref().map(|c| error_barrier(c).to_string()).unwrap_or_default();
        w.write_record([r.from.to_string(), r.to.to_string(), r.density.to_string(), r.barrier.to_string(), tb])
            .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(format!("writing {}", summary.display()), e))?;
    let mut w = csv_writer(curves)?;
    w.write_record(["from", "to", "alpha", "test_error", "test_loss", "train_error", "train_loss"])
        .map_err(csv_err)?;
    for r in rows {
        for (i, alpha) in r.curve.alphas.iter().enumerate() {
            let (te, tl) = match &r.train_curve {
                Some(c) => (c.errors[i].to_string(), c.losses[i].to_string()),
                None => (String::new(), String::new()),
            };
            w.write_record([
                r.from.to_string(),
                r.to.to_string(),
                alpha.to_string(),
                r.curve.errors[i].to_string(),
                r.curve.losses[i].to_string(),
                te,
                tl,
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush().map_err(|e| Error::io(format!("writing {}", curves.display()), e))
}

pub fn write_curve_csv(curve: &InterpolationCurve, path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["alpha", "error", "loss"]).map_err(csv_err)?;
    for i in 0..curve.alphas.len() {
        w.write_record([curve.alphas[i].to_string(), curve.errors[i].to_string(), curve.losses[i].to_string()])
            .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// What an instability measurement trains from.
pub struct InstabilityJob<'a> {
    pub model: &'a Model,
    pub rewind: &'a [f32],
    pub mask: &'a Mask,
    pub train: &'a Dataset,
    pub test: &'a Dataset,
    pub config: &'a TrainConfig,
    pub seeds: (u64, u64),
    pub samples: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Instability {
    pub barrier: f64,
    pub curve: InterpolationCurve,
}

/// Trains twice from the rewind point under two data orders and measures
/// the error barrier between the results.
pub fn instability(job: &InstabilityJob<'_>) -> Result<Instability> {
    let solve = |seed: u64| {
        training::train(&TrainJob {
            model: job.model,
            init: job.rewind,
            mask: job.mask,
            train: job.train,
            test: None,
            config: job.config,
            data_seed: seed,
            round: 0,
            store: None,
            repellence: RepellenceConfig::default(),
            snapshot_epoch: None,
        })
        .map(|o| o.params)
    };
    let a = solve(job.seeds.0)?;
    let b = solve(job.seeds.1)?;
    let (la, lb) = (format!("seed_{}", job.seeds.0), format!("seed_{}", job.seeds.1));
    let curve = interpolate_and_eval(job.model, (&la, &a, job.mask), (&lb, &b, job.mask), job.samples, job.test)?;
    Ok(Instability {
        barrier: error_barrier(&curve),
        curve,
    })
}

/// Equal-width bins over the surviving weights.
#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    /// The bin holding zero, or the bin nearest to it.
    pub fn zero_bin(&self) -> usize {
        let bins = self.counts.len();
        (0..bins)
            .min_by(|&i, &j| {
                let d = |k: usize| {
                    let (lo, hi) = (self.edges[k], self.edges[k + 1]);
                    if lo <= 0.0 && 0.0 <= hi {
                        0.0
                    } else {
                        lo.abs().min(hi.abs())
                    }
                };
                d(i).total_cmp(&d(j))
            })
            .unwrap_or(0)
    }

    /// First bin with the largest count.
    pub fn modal_bin(&self) -> usize {
        let max = self.counts.iter().copied().max().unwrap_or(0);
        self.counts.iter().position(|&c| c == max).unwrap_or(0)
    }

    pub fn zero_bin_is_modal(&self) -> bool {
        self.counts[self.zero_bin()] == self.counts[self.modal_bin()]
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv_writer(path)?;
        w.write_record(["lower", "upper", "count"]).map_err(csv_err)?;
        for (i, c) in self.counts.iter().enumerate() {
            w.write_record([self.edges[i].to_string(), self.edges[i + 1].to_string(), c.to_string()])
                .map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }
}

/// Histogram of weight entries whose mask bit is set; biases are skipped.
pub fn weight_histogram(theta: &[f32], mask: &Mask, is_weight: &[bool], bins: usize) -> Result<Histogram> {
    if bins < 2 {
        return Err(Error::Parameter(format!("histogram needs at least 2 bins, got {bins}")));
    }
    if mask.len() != theta.len() || is_weight.len() != theta.len() {
        return Err(Error::dim("weight_histogram", &[theta.len()], &[mask.len(), is_weight.len()]));
    }
    let values: Vec<f64> = (0..theta.len())
        .filter(|&i| mask.bits()[i] && is_weight[i])
        .map(|i| theta[i] as f64)
        .collect();
    if values.is_empty() {
        return Err(Error::State("no surviving weights to histogram".into()));
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = (hi - lo) / bins as f64;
    let edges = (0..=bins)
        .map(|i| if i == bins { hi } else { lo + width * i as f64 })
        .collect();
    let mut counts = vec![0; bins];
    for v in values {
        let k = if width > 0.0 { ((v - lo) / width) as usize } else { 0 };
        counts[k.min(bins - 1)] += 1;
    }
    Ok(Histogram { edges, counts })
}

/// `(round, threshold)` for every pruned round; the dense round has none.
pub fn threshold_trace(records: &[RoundRecord]) -> Vec<(usize, f64)> {
    records.iter().filter_map(|r| r.threshold.map(|t| (r.round, t))).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdPair {
    pub round: usize,
    pub first: f64,
    pub second: f64,
}

/// Aligns two traces on their shared rounds.
pub fn pair_thresholds(a: &[(usize, f64)], b: &[(usize, f64)]) -> Vec<ThresholdPair> {
    a.iter()
        .filter_map(|&(r, x)| {
            b.iter().find(|&&(s, _)| s == r).map(|&(_, y)| ThresholdPair {
                round: r,
                first: x,
                second: y,
            })
        })
        .collect()
}

pub fn write_thresholds_csv(trace: &[(usize, f64)], compare: Option<&[(usize, f64)]>, path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    match compare {
        None => {
            w.write_record(["round", "threshold"]).map_err(csv_err)?;
            for (r, t) in trace {
                w.write_record([r.to_string(), t.to_string()]).map_err(csv_err)?;
            }
        }
        Some(other) => {
            w.write_record(["round", "threshold", "compare_threshold"]).map_err(csv_err)?;
            for p in pair_thresholds(trace, other) {
                w.write_record([p.round.to_string(), p.first.to_string(), p.second.to_string()])
                    .map_err(csv_err)?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))
}

fn csv_err(e: csv::Error) -> Error {
    Error::Manifest(format!("csv: {e}"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic_blobs_with;
    use crate::models::{Architecture, ModelSpec};
    use proptest::prelude::*;

    fn full(n: usize) -> Mask {
        Mask::full(n)
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn distance_examples() {
        let m = full(2);
        assert_eq!(angular_distance(&[1.0, 0.0], &m, &[1.0, 0.0], &m).unwrap(), 0.0);
        assert!(close(angular_distance(&[1.0, 0.0], &m, &[0.0, 1.0], &m).unwrap(), 1.0));
        assert!(close(angular_distance(&[1.0, 1.0], &m, &[1.0, 0.0], &m).unwrap(), 0.5));
        assert!(close(cosine_distance(&[1.0, 0.0], &m, &[0.0, 1.0], &m).unwrap(), 1.0));
        assert!(close(euclidean_distance(&[1.0, 0.0], &m, &[0.0, 1.0], &m).unwrap(), 2f64.sqrt()));
        // anti-parallel vectors are reported raw
        assert!(close(angular_distance(&[1.0, 0.0], &m, &[-1.0, 0.0], &m).unwrap(), 2.0));
    }

    #[test]
    fn intersection_restricts_the_comparison() {
        let a = [1.0, 5.0, 0.0];
        let b = [1.0, 0.0, 7.0];
        let ma = Mask::from_bits(vec![true, true, false], 1);
        let mb = Mask::from_bits(vec![true, false, true], 1);
        assert_eq!(angular_distance(&a, &ma, &b, &mb).unwrap(), 0.0);
        let none = Mask::from_bits(vec![false, true, false], 1);
        assert!(matches!(angular_distance(&a, &none, &b, &mb), Err(Error::Degenerate(_))));
        assert_eq!(euclidean_distance(&a, &none, &b, &mb).unwrap(), 0.0);
    }

    fn oracle(metric: Metric, a: &[f32], b: &[f32], keep: &[bool]) -> f64 {
        let (mut dot, mut na, mut nb, mut sq) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
        for i in 0..a.len() {
            if !keep[i] {
                continue;
            }
            let (x, y) = (a[i] as f64, b[i] as f64);
            dot += x * y;
            na += x * x;
            nb += y * y;
            sq += (x - y).powi(2);
        }
        let cos = dot / (na.sqrt() * nb.sqrt());
        match metric {
            Metric::Angular => cos.clamp(-1.0, 1.0).acos() / std::f64::consts::FRAC_PI_2,
            Metric::Cosine => 1.0 - cos,
            Metric::Euclidean => sq.sqrt(),
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn metrics_match_scalar_oracle(
            pairs in proptest::collection::vec((-3.0f32..3.0, -3.0f32..3.0, any::<bool>(), any::<bool>()), 4..60)
        ) {
            let a: Vec<f32> = pairs.iter().map(|p| p.0).collect();
            let b: Vec<f32> = pairs.iter().map(|p| p.1).collect();
            let ma = Mask::from_bits(pairs.iter().map(|p| p.2).collect(), 1);
            let mb = Mask::from_bits(pairs.iter().map(|p| p.3).collect(), 1);
            let keep: Vec<bool> = pairs.iter().map(|p| p.2 && p.3).collect();
            for metric in [Metric::Angular, Metric::Cosine, Metric::Euclidean] {
                match distance(metric, &a, &ma, &b, &mb) {
                    Ok(d) => {
                        prop_assert!((d - oracle(metric, &a, &b, &keep)).abs() < 1e-6, "{metric}");
                        let back = distance(metric, &b, &mb, &a, &ma).unwrap();
                        prop_assert!((d - back).abs() < 1e-12);
                        prop_assert!(d >= 0.0);
                        if metric.is_bounded() {
                            prop_assert!(d <= 2.0 + 1e-12);
                        }
                    }
                    Err(Error::Degenerate(_)) => prop_assert!(metric.is_bounded()),
                    Err(e) => prop_assert!(false, "{e}"),
                }
            }
        }

        #[test]
        fn matrix_is_invariant_to_point_order(seed in any::<u64>()) {
            let mut rng = crate::rng::CounterRng::new(seed);
            let nets: Vec<Vec<f32>> = (0..5).map(|_| (0..12).map(|_| rng.normal() as f32).collect()).collect();
            let mask = full(12);
            let points = |order: &[usize]| -> Vec<Point<'_>> {
                order.iter().map(|&i| Point { label: i.to_string(), weights: &nets[i], mask: &mask }).collect()
            };
            let order = [3usize, 0, 4, 1, 2];
            let straight = distance_matrix_of(&points(&[0, 1, 2, 3, 4]), Metric::Angular).unwrap();
            let shuffled = distance_matrix_of(&points(&order), Metric::Angular).unwrap();
            for (i, &oi) in order.iter().enumerate() {
                for (j, &oj) in order.iter().enumerate() {
                    prop_assert_eq!(shuffled.get(i, j), straight.get(oi, oj));
                }
                prop_assert_eq!(shuffled.get(i, i), 0.0);
            }
        }
    }

    #[test]
    fn barrier_examples() {
        assert_eq!(barrier_of(&[0.1, 0.3, 0.1]), 0.3 - 0.1);
        assert_eq!(barrier_of(&[0.2; 20]), 0.0);
        assert_eq!(barrier_of(&[0.2, 0.1, 0.2]), 0.0);
        assert_eq!(barrier_of(&[]), 0.0);
        assert_eq!(alphas(2), vec![0.0, 1.0]);
        let a = alphas(DEFAULT_SAMPLES);
        assert_eq!((a[0], a[19], a.len()), (0.0, 1.0, 20));
        assert!(a.windows(2).all(|w| w[0] < w[1]));
    }

    fn blob_model() -> (Model, Dataset, Vec<f32>) {
        let data = synthetic_blobs_with(3, 30, 16, 6.0, 1.0, 5).unwrap().reshaped([1, 4, 4]).unwrap();
        let model = ModelSpec::new(Architecture::Lenet, [1, 4, 4], 3).build().unwrap();
        let init = model.init(9).into_flat();
        (model, data, init)
    }

    #[test]
    fn interpolation_endpoints_match_direct_evaluation() {
        let (model, data, a) = blob_model();
        let b: Vec<f32> = model.init(10).into_flat();
        let mask = full(a.len());
        let curve = interpolate_and_eval(&model, ("a", &a, &mask), ("b", &b, &mask), 5, &data).unwrap();
        assert_eq!(curve.errors[0], evaluate(&model, &a, &data).unwrap().error());
        assert_eq!(curve.errors[4], evaluate(&model, &b, &data).unwrap().error());
        let mid: Vec<f32> = a.iter().zip(&b).map(|(x, y)| ((*x as f64 + *y as f64) / 2.0) as f32).collect();
        assert_eq!(curve.errors[2], evaluate(&model, &mid, &data).unwrap().error());

        let flat = interpolate_and_eval(&model, ("a", &a, &mask), ("a", &a, &mask), 20, &data).unwrap();
        assert!(flat.errors.iter().all(|&e| e == flat.errors[0]));
        assert_eq!(error_barrier(&flat), 0.0);
    }

    #[test]
    fn interpolation_uses_the_nested_mask() {
        let (model, data, a) = blob_model();
        let b = model.init(11).into_flat();
        let n = a.len();
        let parent = Mask::from_bits((0..n).map(|i| i % 5 != 0).collect(), 1);
        let child = Mask::from_bits((0..n).map(|i| i % 5 != 0 && i % 3 != 0).collect(), 2);
        let one = interpolate_and_eval(&model, ("a", &a, &parent), ("b", &b, &child), 4, &data).unwrap();
        let both = interpolate_and_eval(&model, ("a", &a, &child), ("b", &b, &child), 4, &data).unwrap();
        assert_eq!(one.errors, both.errors);
        let other = Mask::from_bits((0..n).map(|i| i % 5 == 0).collect(), 2);
        let err = interpolate_and_eval(&model, ("a", &a, &parent), ("b", &b, &other), 4, &data);
        assert!(matches!(err, Err(Error::Contract(_))));
    }

    #[test]
    fn equal_seeds_give_zero_instability() {
        let (model, data, init) = blob_model();
        let mut cfg = TrainConfig::lenet();
        cfg.epochs = 2;
        cfg.batch_size = 16;
        cfg.eval_every_epoch = false;
        let mask = full(init.len());
        let job = |seeds| InstabilityJob {
            model: &model,
            rewind: &init,
            mask: &mask,
            train: &data,
            test: &data,
            config: &cfg,
            seeds,
            samples: 8,
        };
        let same = instability(&job((4, 4))).unwrap();
        assert_eq!(same.barrier, 0.0);
        let diff = instability(&job((4, 5))).unwrap();
        assert!(diff.barrier >= 0.0);
        assert_eq!(diff.curve.alphas.len(), 8);
    }

    #[test]
    fn histogram_counts_surviving_weights_only() {
        let theta = [0.5, -0.5, 0.0, 9.0, 0.25, 100.0];
        let mask = Mask::from_bits(vec![true, true, true, false, true, true], 1);
        let is_weight = [true, true, true, true, true, false];
        let h = weight_histogram(&theta, &mask, &is_weight, 5).unwrap();
        assert_eq!(h.total(), 4);
        assert_eq!(h.edges.len(), 6);
        assert_eq!((h.edges[0], h.edges[5]), (-0.5, 0.5));
        assert_eq!(h.counts, vec![1, 0, 1, 1, 1]);
        assert_eq!(h.zero_bin(), 2);

        let flat = weight_histogram(&[0.3; 4], &full(4), &[true; 4], 101).unwrap();
        assert_eq!(flat.counts.iter().filter(|&&c| c > 0).count(), 1);
        assert!(weight_histogram(&theta, &mask, &is_weight, 1).is_err());
        let none = Mask::from_bits(vec![false; 6], 1);
        assert!(matches!(weight_histogram(&theta, &none, &is_weight, 5), Err(Error::State(_))));
    }

    #[test]
    fn bimodal_histogram_has_a_non_modal_zero_bin() {
        let mut theta: Vec<f32> = (0..200).map(|i| 1.0 + (i % 7) as f32 * 0.01).collect();
        theta.extend((0..200).map(|i| -1.0 - (i % 5) as f32 * 0.01));
        theta.push(0.0);
        let n = theta.len();
        let h = weight_histogram(&theta, &full(n), &vec![true; n], DEFAULT_BINS).unwrap();
        assert!(!h.zero_bin_is_modal());
        let h = weight_histogram(&[0.0, 0.0, 0.1, -0.1], &full(4), &[true; 4], 3).unwrap();
        assert!(h.zero_bin_is_modal());
    }

    #[test]
    fn threshold_trace_skips_the_dense_round() {
        let rec = |round, threshold| RoundRecord {
            round,
            density: 1.0,
            surviving: 1,
            threshold,
            test_accuracy: 0.5,
            test_error: 0.5,
            test_loss: 1.0,
            checkpoint: String::new(),
            seed_init: 0,
            seed_data: 0,
            seed_reinit: 0,
            steps: 0,
            max_sq_cosine: None,
        };
        let a = threshold_trace(&[rec(0, None), rec(1, Some(0.1)), rec(2, Some(0.2))]);
        assert_eq!(a, vec![(1, 0.1), (2, 0.2)]);
        let p = pair_thresholds(&a, &[(2, 0.05), (3, 0.3)]);
        assert_eq!(p, vec![ThresholdPair { round: 2, first: 0.2, second: 0.05 }]);
    }

    #[test]
    fn csv_outputs_have_headers() {
        let tmp = tempfile::tempdir().unwrap();
        let (a, b) = ([1.0f32, 0.0], [0.0f32, 1.0]);
        let m = full(2);
        let pts = [
            Point { label: "0".into(), weights: &a, mask: &m },
            Point { label: "init".into(), weights: &b, mask: &m },
        ];
        let dm = distance_matrix_of(&pts, Metric::Angular).unwrap();
        let p = tmp.path().join("d.csv");
        dm.write_csv(&p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().next().unwrap(), "angular,0,init");
        assert_eq!(text.lines().count(), 3);
        assert!(dm.flagged().is_empty());
    }
}
