use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use implab::analysis::Metric;
use implab::experiment::{self, AnalyzeRequest, ExperimentConfig, RunDir, SweepSpec, Which, LENET_IMP_CFG};

#[derive(Parser)]
#[command(name = "implab", version, about = "Iterative magnitude pruning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train an IMP run end to end
    Run(RunArgs),
    /// Compute diagnostics over a run directory into <run>/analysis/
    Analyze(AnalyzeArgs),
    /// One run per axis value and seed, with a summary CSV
    Sweep(SweepArgs),
    /// Print a run's manifest
    Inspect {
        run: PathBuf,
    },
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Experiment config (TOML); defaults to the bundled LeNet IMP config
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. --set training.epochs=3
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    seed_init: Option<u64>,
    #[arg(long)]
    seed_data: Option<u64>,
    #[arg(long)]
    seed_reinit: Option<u64>,
    /// Shorthand for --set imp.rounds=N
    #[arg(long)]
    rounds: Option<usize>,
}

impl ConfigArgs {
    fn overrides(&self) -> Vec<String> {
        let mut ov = self.set.clone();
        let seeds = [("init", self.seed_init), ("data", self.seed_data), ("reinit", self.seed_reinit)];
        for (k, v) in seeds {
            if let Some(v) = v {
                ov.push(format!("seeds.{k}={v}"));
            }
        }
        if let Some(r) = self.rounds {
            ov.push(format!("imp.rounds={r}"));
        }
        ov
    }

    fn load(&self) -> Result<ExperimentConfig> {
        let ov = self.overrides();
        let cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path, &ov)?,
            None => ExperimentConfig::parse(LENET_IMP_CFG, &ov)?,
        };
        Ok(cfg)
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Run directory; defaults to output.dir or runs/<arch>_<variant>_s<seed>
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replace an existing run directory
    #[arg(long)]
    overwrite: bool,
}

#[derive(Args)]
struct AnalyzeArgs {
    run: PathBuf,
    /// distances | barriers | instability | histograms | thresholds
    #[arg(long)]
    which: Which,
    /// angular | cosine | euclidean
    #[arg(long, default_value = "angular")]
    metric: Metric,
    /// Histogram round (default 10, else the last), or instability mask round (default 0)
    #[arg(long)]
    round: Option<usize>,
    #[arg(long, default_value_t = implab::analysis::DEFAULT_BINS)]
    bins: usize,
    /// Interpolation samples, endpoints included
    #[arg(long, default_value_t = implab::analysis::DEFAULT_SAMPLES)]
    samples: usize,
    /// Second run to pair threshold traces with
    #[arg(long)]
    compare: Option<PathBuf>,
    /// Analyze an incomplete or failed run
    #[arg(long)]
    partial: bool,
    /// Also record interpolation curves on the training split
    #[arg(long)]
    train_split: bool,
    /// Two data-order seeds for instability, e.g. 5,6
    #[arg(long, value_delimiter = ',', num_args = 2)]
    data_seeds: Option<Vec<u64>>,
}

#[derive(Args)]
struct SweepArgs {
    /// Base config (TOML); defaults to the bundled LeNet IMP config
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Config key to vary, e.g. training.batch_size
    #[arg(long)]
    axis: String,
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<String>,
    /// Each seed sets init, data and reinit seeds alike
    #[arg(long, value_delimiter = ',', required = true)]
    seeds: Vec<u64>,
    /// Also measure dense instability for every run
    #[arg(long)]
    instability: bool,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    overwrite: bool,
}

fn default_out(cfg: &ExperimentConfig) -> PathBuf {
    cfg.output.dir.clone().unwrap_or_else(|| {
        PathBuf::from("runs").join(format!(
            "{}_{}_s{}",
            cfg.model.arch.id(),
            cfg.imp.variant.id(),
            cfg.seeds.init.unwrap_or(0)
        ))
    })
}

fn cmd_run(args: &RunArgs) -> Result<()> {
    let cfg = args.config.load()?;
    let out = args.out.clone().unwrap_or_else(|| default_out(&cfg));
    let manifest = experiment::run_experiment(&cfg, &out, args.overwrite)
        .with_context(|| format!("run into {}", out.display()))?;
    println!("run complete: {}", out.display());
    println!("{:>5}  {:>8}  {:>8}", "round", "density", "accuracy");
    for c in &manifest.checkpoints {
        println!("{:>5}  {:>8.4}  {:>8.4}", c.round, c.density, c.test_accuracy);
    }
    Ok(())
}

fn cmd_analyze(args: &AnalyzeArgs) -> Result<()> {
    let req = AnalyzeRequest {
        which: args.which,
        metric: args.metric,
        round: args.round,
        bins: args.bins,
        samples: args.samples,
        compare: args.compare.clone(),
        partial: args.partial,
        train_split: args.train_split,
        data_seeds: args.data_seeds.as_ref().map(|s| (s[0], s[1])),
    };
    let report = experiment::analyze(&args.run, &req)?;
    for line in &report.lines {
        println!("{line}");
    }
    for f in &report.files {
        println!("wrote {}", f.display());
    }
    Ok(())
}

fn cmd_sweep(args: &SweepArgs) -> Result<()> {
    let base = match &args.config {
        Some(p) => std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
        None => LENET_IMP_CFG.to_string(),
    };
    let spec = SweepSpec {
        base: &base,
        overrides: &args.set,
        axis: &args.axis,
        values: &args.values,
        seeds: &args.seeds,
        instability: args.instability,
        overwrite: args.overwrite,
    };
    let rows = experiment::run_sweep(&spec, &args.out)?;
    let failed = rows.iter().filter(|r| r.status == "failed").count();
    println!("{} rows, {failed} failed runs", rows.len());
    println!("wrote {}", args.out.join(experiment::sweep::SUMMARY).display());
    Ok(())
}

fn cmd_inspect(run: &Path) -> Result<()> {
    let dir = RunDir::open(run)?;
    println!("{}", serde_json::to_string_pretty(&dir.manifest)?);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Analyze(a) => cmd_analyze(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Inspect { run } => cmd_inspect(run),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
