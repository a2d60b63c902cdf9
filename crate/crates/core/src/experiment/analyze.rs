//! Analyses over a finished (or, on request, partial) run directory.
//!
//! Outputs go to `<run>/analysis/`; training artifacts are never touched.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::{load_datasets, RunDir};
use crate::analysis::{self, InstabilityJob, Metric};
use crate::error::{Error, Result};
use crate::imp::Seeds;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Which {
    Distances,
    Barriers,
    Instability,
    Histograms,
    Thresholds,
}

impl Which {
    pub fn id(self) -> &'static str {
        match self {
            Which::Distances => "distances",
            Which::Barriers => "barriers",
            Which::Instability => "instability",
            Which::Histograms => "histograms",
            Which::Thresholds => "thresholds",
        }
    }
}

impl fmt::Display for Which {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Which {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Which::Distances, Which::Barriers, Which::Instability, Which::Histograms, Which::Thresholds]
            .into_iter()
            .find(|w| w.id() == s)
            .ok_or_else(|| {
                Error::Parameter(format!(
                    "unknown analysis {s:?}; expected distances|barriers|instability|histograms|thresholds"
                ))
            })
    }
}

#[derive(Clone, Debug)]
pub struct AnalyzeRequest {
    pub which: Which,
    pub metric: Metric,
    /// Histogram round, or the mask round for instability.
    pub round: Option<usize>,
    pub bins: usize,
    pub samples: usize,
    /// Second run for paired threshold traces.
    pub compare: Option<PathBuf>,
    pub partial: bool,
    /// Also interpolate on the training split.
    pub train_split: bool,
    pub data_seeds: Option<(u64, u64)>,
}

impl AnalyzeRequest {
    pub fn new(which: Which) -> Self {
        AnalyzeRequest {
            which,
            metric: Metric::Angular,
            round: None,
            bins: analysis::DEFAULT_BINS,
            samples: analysis::DEFAULT_SAMPLES,
            compare: None,
            partial: false,
            train_split: false,
            data_seeds: None,
        }
    }
}

/// Files written plus human-readable result lines.
#[derive(Clone, Debug, Default)]
pub struct AnalyzeReport {
    pub files: Vec<PathBuf>,
    pub lines: Vec<String>,
}

pub fn analyze(run_path: &Path, req: &AnalyzeRequest) -> Result<AnalyzeReport> {
    let run = RunDir::open(run_path)?;
    run.require_complete(req.partial)?;
    let out = run.analysis_dir()?;
    let mut report = AnalyzeReport::default();
    match req.which {
        Which::Distances => {
            let m = analysis::distance_matrix(&run, req.metric)?;
            let path = out.join(format!("distances_{}.csv", req.metric));
            m.write_csv(&path)?;
            let flagged = m.flagged();
            report.lines.push(format!("{}x{} {} matrix", m.size(), m.size(), req.metric));
            if !flagged.is_empty() {
                report.lines.push(format!("{} entries exceed 1 (anti-correlated pairs)", flagged.len()));
            }
            report.files.push(path);
        }
        Which::Barriers => {
            let model = run.manifest.model.build()?;
            let (train, test) = load_datasets(&run.manifest.config)?;
            let train = req.train_split.then_some(&train);
            let rows = analysis::successive_barriers(&run, &model, &test, train, req.samples)?;
            let (summary, curves) = (out.join("barriers.csv"), out.join("barrier_curves.csv"));
            analysis::write_barriers_csv(&rows, &summary, &curves)?;
            for r in &rows {
                report
                    .lines
                    .push(format!("{:>3} -> {:>3}  density {:.4}  barrier {:.4}", r.from, r.to, r.density, r.barrier));
            }
            report.files.extend([summary, curves]);
        }
        Which::Instability => {
            let round = req.round.unwrap_or(0);
            let model = run.manifest.model.build()?;
            let (train, test) = load_datasets(&run.manifest.config)?;
            let mask = run.load_round(round)?.mask;
            let rewind = crate::pruning::apply_mask(&run.load_init()?.weights, &mask)?;
            let seeds = run.manifest.seeds;
            let data_seeds = req.data_seeds.unwrap_or_else(|| {
                let other = Seeds {
                    data: seeds.data.wrapping_add(1),
                    ..seeds
                };
                (seeds.data_for_round(round), other.data_for_round(round))
            });
            let tc = run.manifest.config.train_config();
            let result = analysis::instability(&InstabilityJob {
                model: &model,
                rewind: &rewind,
                mask: &mask,
                train: &train,
                test: &test,
                config: &tc,
                seeds: data_seeds,
                samples: req.samples,
            })?;
            let path = out.join(format!("instability_round_{round:03}.csv"));
            analysis::write_curve_csv(&result.curve, &path)?;
            report.lines.push(format!(
                "instability at round {round} (data seeds {}, {}): {:.4}",
                data_seeds.0, data_seeds.1, result.barrier
            ));
            report.files.push(path);
        }
        Which::Histograms => {
            let rounds = run.rounds();
            let round = match req.round {
                Some(r) => r,
                None if rounds.contains(&10) => 10,
                None => *rounds.last().ok_or_else(|| Error::Manifest("run has no rounds".into()))?,
            };
            let ck = run.load_round(round)?;
            let model = run.manifest.model.build()?;
            let h = analysis::weight_histogram(&ck.weights, &ck.mask, &model.layout().weight_positions(), req.bins)?;
            let path = out.join(format!("histogram_round_{round:03}.csv"));
            h.write_csv(&path)?;
            report.lines.push(format!(
                "round {round}: {} weights in {} bins, zero bin {} modal",
                h.total(),
                req.bins,
                if h.zero_bin_is_modal() { "is" } else { "is not" }
            ));
            report.files.push(path);
        }
        Which::Thresholds => {
            let trace = analysis::threshold_trace(&run.records()?);
            let other = match &req.compare {
                Some(p) => {
                    let o = RunDir::open(p)?;
                    o.require_complete(req.partial)?;
                    Some(analysis::threshold_trace(&o.records()?))
                }
                None => None,
            };
            let path = out.join("thresholds.csv");
            analysis::write_thresholds_csv(&trace, other.as_deref(), &path)?;
            for (r, t) in &trace {
                report.lines.push(format!("{r:>3}  {t:.6}"));
            }
            report.files.push(path);
        }
    }
    Ok(report)
}
