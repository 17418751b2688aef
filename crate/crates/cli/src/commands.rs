//! The five verbs: train, refine, eval, analyze, sweep.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use skiplab_core::cost::Convention;
use skiplab_core::data::{load_cifar10, load_idx, synthetic_make, ChannelStats, LabeledDataset, SyntheticKind};
use skiplab_core::network::{GateMode, SkipNet};
use skiplab_core::training::{
    evaluate, pretrain_supervised, refine_hybrid, DataSplits, EpochMetrics, EvalDecisions, EvalOptions, Evaluation,
    Objective, Trainer,
};

use crate::analysis::{self, quantile, Analysis};
use crate::checkpoint::{Checkpoint, Stage};
use crate::config::{DatasetKind, RunConfig};
use crate::error::{CliError, Result};
use crate::report::{write_csv, write_text};
use crate::svg;

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CONFIG_FILE: &str = "config.json";
pub const LOCK_FILE: &str = ".lock";
pub const CIFAR_ENV: &str = "SKIPLAB_CIFAR10_DIR";

/// Flags shared by every verb.
#[derive(Clone, Debug, Default)]
pub struct Globals {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub data: Option<PathBuf>,
}

impl Globals {
    /// `base` (or the `--config` file when given) with the flag overrides applied.
    pub fn resolve(&self, base: Option<RunConfig>) -> Result<RunConfig> {
        let mut cfg = match (&self.config, base) {
            (Some(p), _) => RunConfig::load(p)?,
            (None, Some(b)) => b,
            (None, None) => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.out_dir = o.clone();
        }
        if let Some(d) = &self.data {
            cfg.data_dir = Some(d.clone());
        }
        Ok(cfg)
    }
}

/// Exclusive use of an output directory for the lifetime of the value.
pub struct OutDir {
    path: PathBuf,
    lock: PathBuf,
}

impl OutDir {
    pub fn acquire(path: &Path) -> Result<Self> {
        std::fs::create_dir_all(path).map_err(|e| CliError::io(path, e))?;
        let lock = path.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&lock) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(OutDir { path: path.to_path_buf(), lock })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(CliError::Locked(path.to_path_buf())),
            Err(e) => Err(CliError::io(&lock, e)),
        }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }
}

impl Drop for OutDir {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.lock);
    }
}

pub struct Datasets {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
}

fn data_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = match (&cfg.data_dir, cfg.dataset) {
        (Some(d), _) => d.clone(),
        (None, DatasetKind::Cifar10) => std::env::var_os(CIFAR_ENV)
            .map(PathBuf::from)
            .ok_or_else(|| CliError::Usage(format!("CIFAR-10 needs --data DIR, data_dir in the config, or {CIFAR_ENV}")))?,
        (None, _) => return Err(CliError::Usage("this dataset needs --data DIR or data_dir in the config".into())),
    };
    if !dir.is_dir() {
        return Err(CliError::MissingData(dir));
    }
    Ok(dir)
}

fn truncate(ds: LabeledDataset, k: Option<usize>) -> LabeledDataset {
    match k {
        Some(k) if k < ds.len() => ds.select(&(0..k).collect::<Vec<_>>()),
        _ => ds,
    }
}

pub fn load_datasets(cfg: &RunConfig) -> Result<Datasets> {
    let (c, h, w) = cfg.input_geometry;
    let ds = match cfg.dataset {
        DatasetKind::Cifar10 => {
            let s = load_cifar10(&data_dir(cfg)?, cfg.train_subset, cfg.test_subset)?;
            Datasets { train: s.train, test: s.test }
        }
        DatasetKind::Idx => {
            let dir = data_dir(cfg)?;
            let file = |name: &str| -> Result<PathBuf> {
                let p = dir.join(name);
                if p.is_file() {
                    Ok(p)
                } else {
                    Err(CliError::MissingData(p))
                }
            };
            let train = load_idx(&file(&cfg.idx_train_images)?, &file(&cfg.idx_train_labels)?)?;
            let test = load_idx(&file(&cfg.idx_test_images)?, &file(&cfg.idx_test_labels)?)?;
            Datasets { train: truncate(train, cfg.train_subset), test: truncate(test, cfg.test_subset) }
        }
        DatasetKind::SyntheticSeparable | DatasetKind::SyntheticRedundant => {
            let kind = if cfg.dataset == DatasetKind::SyntheticSeparable {
                SyntheticKind::Separable
            } else {
                SyntheticKind::RedundantBlocks
            };
            if c != 3 || h != w {
                return Err(CliError::Usage(format!(
                    "synthetic data is square with 3 channels; input_geometry is {:?}",
                    cfg.input_geometry
                )));
            }
            let train = synthetic_make(kind, cfg.synthetic_train, cfg.num_classes, h, cfg.data_seed)?;
            let test = synthetic_make(kind, cfg.synthetic_test, cfg.num_classes, h, cfg.data_seed.wrapping_add(1))?;
            Datasets { train, test }
        }
    };
    for (name, d) in [("training", &ds.train), ("test", &ds.test)] {
        if d.shape() != cfg.input_geometry {
            return Err(CliError::Usage(format!(
                "{name} images are {:?} but input_geometry is {:?}",
                d.shape(),
                cfg.input_geometry
            )));
        }
        if d.num_classes() > cfg.num_classes {
            return Err(CliError::Usage(format!(
                "{name} data has {} classes but num_classes is {}",
                d.num_classes(),
                cfg.num_classes
            )));
        }
    }
    Ok(ds)
}

fn fit_stats(train: &LabeledDataset) -> Result<ChannelStats> {
    let s = ChannelStats::from_dataset(train)?;
    s.validate()?;
    Ok(s)
}

fn log_row(stage: &str, m: &EpochMetrics) {
    eprintln!(
        "[{stage}] {:>4}  loss {:.4}  train {:.4}  test {:.4}  blocks {:.2}  macs {:.4e}  {:.1}s",
        m.epoch, m.train_loss, m.train_acc, m.test_acc, m.mean_exec_blocks, m.mean_mac_cost, m.wall_seconds
    );
}

/// Writes rows to the metrics log, appending (without a header) when `append`.
fn write_metrics(path: &Path, rows: &[EpochMetrics], append: bool) -> Result<()> {
    if !append {
        return write_csv(path, rows);
    }
    let f = OpenOptions::new().append(true).open(path).map_err(|e| CliError::io(path, e))?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(f);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

fn metrics_svg(path: &Path, title: &str, xlabel: &str, rows: &[EpochMetrics]) -> Result<()> {
    let series = vec![
        ("train accuracy".to_string(), rows.iter().map(|m| (m.epoch as f64, m.train_acc)).collect()),
        ("test accuracy".to_string(), rows.iter().map(|m| (m.epoch as f64, m.test_acc)).collect()),
    ];
    write_text(path, &svg::line_plot(title, xlabel, "accuracy", &series))
}

fn echo_config(out: &OutDir, cfg: &RunConfig) -> Result<()> {
    write_text(&out.file(CONFIG_FILE), &(cfg.to_json() + "\n"))
}

fn check_architecture(cfg: &RunConfig, ck: &Checkpoint, path: &Path) -> Result<()> {
    let diff = cfg.architecture_diff(&ck.config);
    if diff.is_empty() {
        return Ok(());
    }
    Err(CliError::Usage(format!(
        "checkpoint {} has a different architecture than the config (config vs checkpoint): {}",
        path.display(),
        diff.join("; ")
    )))
}

/// Supervised pre-training, or the stochastic-depth baseline when `sdv_skip_ratio` is set.
pub fn train(g: &Globals, resume: bool) -> Result<Checkpoint> {
    let cfg = g.resolve(None)?;
    cfg.validate()?;
    let data = load_datasets(&cfg)?;
    let out = OutDir::acquire(&cfg.out_dir)?;
    let (objective, stage) = match cfg.sdv_skip_ratio {
        Some(p) => (Objective::Sdv { skip_ratio: p }, Stage::Sdv),
        None => (Objective::Supervised { gate_mode: cfg.gate_mode() }, Stage::Pretrain),
    };
    let (mut net, stats, mut trainer) = if resume {
        let path = out.file(CHECKPOINT_FILE);
        let ck = Checkpoint::load(&path)?;
        check_architecture(&cfg, &ck, &path)?;
        if ck.stage != stage || ck.config.seed != cfg.seed {
            return Err(CliError::Usage(format!(
                "{} holds a {:?} run with seed {}; cannot resume it as {stage:?} with seed {}",
                path.display(),
                ck.stage,
                ck.config.seed,
                cfg.seed
            )));
        }
        let state = ck.trainer.ok_or_else(|| CliError::Usage(format!("{} has no trainer state", path.display())))?;
        (ck.net, ck.stats, Trainer::restore(cfg.schedule(), objective, cfg.seed, state)?)
    } else {
        (SkipNet::<f64>::new(cfg.network(), cfg.seed)?, fit_stats(&data.train)?, Trainer::new(cfg.schedule(), objective, cfg.seed)?)
    };
    echo_config(&out, &cfg)?;
    let splits = DataSplits { train: &data.train, test: &data.test, stats: &stats };
    let label = if stage == Stage::Sdv { "sdv" } else { "train" };
    let rows = trainer.run_epochs(&mut net, splits, |m| log_row(label, m))?;
    write_metrics(&out.file(METRICS_FILE), &rows, resume)?;
    metrics_svg(&out.file("metrics.svg"), "Stage 1 accuracy", "epoch", &rows)?;
    let ck = Checkpoint { config: cfg, stats, stage, trainer: Some(trainer.state()), net };
    ck.save(&out.file(CHECKPOINT_FILE))?;
    Ok(ck)
}

pub struct RefineArgs {
    /// Checkpoint to start from; `None` trains from random initialization.
    pub from: Option<PathBuf>,
    pub alpha: Option<f64>,
    pub pure_rl: bool,
    pub resume: bool,
}

/// Hybrid policy-gradient refinement.
pub fn refine(g: &Globals, a: &RefineArgs) -> Result<Checkpoint> {
    let source = a.from.as_ref().map(|p| Checkpoint::load(p).map(|c| (p.clone(), c))).transpose()?;
    let inherited = g.config.is_none() && source.is_some();
    let mut cfg = g.resolve(source.as_ref().map(|(_, c)| c.config.clone()))?;
    if inherited && g.out.is_none() {
        cfg.out_dir = cfg.out_dir.join("refine");
    }
    if let Some(alpha) = a.alpha {
        cfg.alpha = alpha;
    }
    cfg.pure_rl |= a.pure_rl;
    cfg.validate()?;
    if !cfg.network().gate_kind.is_gated() {
        return Err(CliError::Usage("refinement needs a gated network (gate_kind is none or sdv_skip_ratio is set)".into()));
    }
    if let Some((p, c)) = &source {
        check_architecture(&cfg, c, p)?;
    }
    let data = load_datasets(&cfg)?;
    let out = OutDir::acquire(&cfg.out_dir)?;
    let objective = Objective::Hybrid(cfg.hybrid()?);
    let (mut net, stats, mut trainer) = if a.resume {
        let path = out.file(CHECKPOINT_FILE);
        let ck = Checkpoint::load(&path)?;
        check_architecture(&cfg, &ck, &path)?;
        if ck.stage != Stage::Refine || ck.config.seed != cfg.seed {
            return Err(CliError::Usage(format!(
                "{} holds a {:?} run with seed {}; cannot resume it as refinement with seed {}",
                path.display(),
                ck.stage,
                ck.config.seed,
                cfg.seed
            )));
        }
        let state = ck.trainer.ok_or_else(|| CliError::Usage(format!("{} has no trainer state", path.display())))?;
        (ck.net, ck.stats, Trainer::restore(cfg.schedule(), objective, cfg.seed, state)?)
    } else {
        let (net, stats) = match source {
            Some((_, c)) => (c.net, c.stats),
            None => (SkipNet::<f64>::new(cfg.network(), cfg.seed)?, fit_stats(&data.train)?),
        };
        (net, stats, Trainer::new(cfg.schedule(), objective, cfg.seed)?)
    };
    echo_config(&out, &cfg)?;
    let splits = DataSplits { train: &data.train, test: &data.test, stats: &stats };
    let rows = trainer.run_iterations(&mut net, splits, cfg.stage2_iterations, |m| log_row("refine", m))?;
    write_metrics(&out.file(METRICS_FILE), &rows, a.resume)?;
    metrics_svg(&out.file("metrics.svg"), "Stage 2 accuracy", "evaluation window", &rows)?;
    let ck = Checkpoint { config: cfg, stats, stage: Stage::Refine, trainer: Some(trainer.state()), net };
    ck.save(&out.file(CHECKPOINT_FILE))?;
    Ok(ck)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Force {
    ExecuteAll,
    SkipAll,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

pub struct EvalArgs {
    pub checkpoint: PathBuf,
    pub dense: bool,
    pub force: Option<Force>,
    pub convention: Convention,
    pub scale: f64,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MacSummary {
    pub mean: f64,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub checkpoint: PathBuf,
    pub stage: Stage,
    pub mode: &'static str,
    pub decisions: String,
    pub convention: Convention,
    pub scale: f64,
    pub samples: usize,
    pub accuracy: f64,
    pub mean_loss: f64,
    pub mean_exec_blocks: f64,
    pub macs: MacSummary,
    /// Ungated network executing every block.
    pub full_cost: u64,
    pub reduction: f64,
    /// Fraction of samples executing each block.
    pub gate_exec_rates: Vec<f64>,
}

/// Dataset fields come from `--config` when given; everything else from the checkpoint.
fn checkpoint_config(g: &Globals, ck: &Checkpoint) -> Result<RunConfig> {
    let mut cfg = ck.config.clone();
    if let Some(p) = &g.config {
        let d = RunConfig::load(p)?;
        cfg.dataset = d.dataset;
        cfg.data_dir = d.data_dir;
        cfg.train_subset = d.train_subset;
        cfg.test_subset = d.test_subset;
        cfg.synthetic_train = d.synthetic_train;
        cfg.synthetic_test = d.synthetic_test;
        cfg.idx_train_images = d.idx_train_images;
        cfg.idx_train_labels = d.idx_train_labels;
        cfg.idx_test_images = d.idx_test_images;
        cfg.idx_test_labels = d.idx_test_labels;
        cfg.data_seed = d.data_seed;
    }
    if let Some(d) = &g.data {
        cfg.data_dir = Some(d.clone());
    }
    if let Some(o) = &g.out {
        cfg.out_dir = o.clone();
    }
    Ok(cfg)
}

/// The checkpoint's own execution policy: learned gates, or random skipping for the baseline.
pub fn policy_decisions(ck: &Checkpoint) -> EvalDecisions {
    match ck.config.sdv_skip_ratio {
        Some(p) => EvalDecisions::Random { skip_ratio: p, seed: ck.config.seed },
        None => EvalDecisions::Policy,
    }
}

pub fn summarize(ev: &Evaluation, num_blocks: usize) -> (MacSummary, Vec<f64>) {
    let per: Vec<f64> = ev.cost.per_sample.iter().map(|&c| c as f64).collect();
    let macs = MacSummary {
        mean: ev.cost.mean,
        min: quantile(&per, 0.0),
        q1: quantile(&per, 0.25),
        median: quantile(&per, 0.5),
        q3: quantile(&per, 0.75),
        max: quantile(&per, 1.0),
    };
    let d = ev.trace.decisions.as_deref().unwrap_or(&[]);
    let rates = (0..num_blocks).map(|i| d.iter().filter(|r| r[i]).count() as f64 / d.len().max(1) as f64).collect();
    (macs, rates)
}

pub fn eval(g: &Globals, a: &EvalArgs) -> Result<EvalReport> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let cfg = checkpoint_config(g, &ck)?;
    let data = load_datasets(&cfg)?;
    let out = OutDir::acquire(&cfg.out_dir)?;
    let decisions = match a.force {
        Some(Force::ExecuteAll) => EvalDecisions::ExecuteAll,
        Some(Force::SkipAll) => EvalDecisions::SkipAll,
        None => policy_decisions(&ck),
    };
    let opts = EvalOptions {
        mode: if a.dense { GateMode::DenseHard } else { GateMode::Inference },
        decisions: decisions.clone(),
        batch_size: cfg.eval_batch_size,
        scale: a.scale,
        convention: a.convention,
    };
    let split = match a.split {
        Split::Train => &data.train,
        Split::Test => &data.test,
    };
    let ev = evaluate(&ck.net, split, &ck.stats, &opts)?;
    let (macs, gate_exec_rates) = summarize(&ev, ck.net.num_blocks());
    let report = EvalReport {
        checkpoint: a.checkpoint.clone(),
        stage: ck.stage,
        mode: if a.dense { "dense" } else { "inference" },
        decisions: format!("{decisions:?}"),
        convention: a.convention,
        scale: a.scale,
        samples: split.len(),
        accuracy: ev.accuracy,
        mean_loss: ev.mean_loss,
        mean_exec_blocks: ev.trace.mean_executed(),
        macs,
        full_cost: ev.cost.full_cost,
        reduction: ev.cost.reduction,
        gate_exec_rates,
    };
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    write_text(&out.file("eval.json"), &(json.clone() + "\n"))?;
    // A closed pipe on stdout (`| head`) is not an error; eval.json is already written.
    match writeln!(std::io::stdout().lock(), "{json}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => return Err(CliError::io(Path::new("<stdout>"), e)),
        _ => {}
    }
    Ok(report)
}

pub struct AnalyzeArgs {
    pub checkpoint: PathBuf,
    pub analyses: Vec<Analysis>,
    pub k: usize,
    pub dump_ppm: bool,
    pub scales: Vec<f64>,
}

pub fn analyze(g: &Globals, a: &AnalyzeArgs) -> Result<()> {
    if a.analyses.is_empty() {
        return Err(CliError::Usage("name at least one analysis".into()));
    }
    let ck = Checkpoint::load(&a.checkpoint)?;
    let cfg = checkpoint_config(g, &ck)?;
    let data = load_datasets(&cfg)?;
    let out = OutDir::acquire(&cfg.out_dir)?;
    let opts = EvalOptions { decisions: policy_decisions(&ck), batch_size: cfg.eval_batch_size, ..Default::default() };
    for &which in &a.analyses {
        analysis::run(which, &ck.net, &data.test, &ck.stats, &opts, out.path(), a.k, a.dump_ppm, &a.scales)?;
        eprintln!("[analyze] {}.csv written to {}", which.file_stem(), out.path().display());
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TradeoffRow {
    pub alpha: f64,
    pub seed: u64,
    pub accuracy: f64,
    pub mean_exec_blocks: f64,
    pub mean_macs: f64,
    pub reduction: f64,
}

/// Pre-trains once per seed, then refines a copy for every α.
pub fn sweep(g: &Globals, alphas: &[f64], seeds: &[u64]) -> Result<Vec<TradeoffRow>> {
    if alphas.is_empty() || seeds.is_empty() {
        return Err(CliError::Usage("--alphas and --seeds need at least one value each".into()));
    }
    let cfg = g.resolve(None)?;
    cfg.validate()?;
    if !cfg.network().gate_kind.is_gated() {
        return Err(CliError::Usage("a sweep needs a gated network".into()));
    }
    let data = load_datasets(&cfg)?;
    let stats = fit_stats(&data.train)?;
    let out = OutDir::acquire(&cfg.out_dir)?;
    echo_config(&out, &cfg)?;
    let splits = DataSplits { train: &data.train, test: &data.test, stats: &stats };
    let schedule = cfg.schedule();
    let opts = EvalOptions { batch_size: cfg.eval_batch_size, ..Default::default() };
    let mut rows = Vec::new();
    for &seed in seeds {
        let mut base = SkipNet::<f64>::new(cfg.network(), seed)?;
        pretrain_supervised(&mut base, splits, &schedule, cfg.gate_mode(), seed)?;
        for &alpha in alphas {
            let c = RunConfig { alpha, seed, ..cfg.clone() };
            let mut net = base.clone();
            refine_hybrid(&mut net, splits, &schedule, c.hybrid()?, seed)?;
            let ev = evaluate(&net, &data.test, &stats, &opts)?;
            let row = TradeoffRow {
                alpha,
                seed,
                accuracy: ev.accuracy,
                mean_exec_blocks: ev.trace.mean_executed(),
                mean_macs: ev.cost.mean,
                reduction: ev.cost.reduction,
            };
            eprintln!(
                "[sweep] alpha {alpha} seed {seed}: accuracy {:.4}, blocks {:.2}, reduction {:.3}",
                row.accuracy, row.mean_exec_blocks, row.reduction
            );
            rows.push(row);
        }
    }
    write_csv(&out.file("tradeoff.csv"), &rows)?;
    let pts: Vec<(f64, f64, String)> =
        rows.iter().map(|r| (r.mean_macs, r.accuracy, format!("a={} s={}", r.alpha, r.seed))).collect();
    write_text(&out.file("tradeoff.svg"), &svg::scatter_plot("Accuracy vs cost", "mean MACs", "test accuracy", &pts))?;
    Ok(rows)
}

/// Reads the worker cap; only 1 or more is accepted. Execution is single-threaded regardless.
pub fn thread_cap() -> Result<usize> {
    match std::env::var("SKIPLAB_THREADS") {
        Err(_) => Ok(1),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(CliError::Usage(format!("SKIPLAB_THREADS must be a positive integer, got {v:?}"))),
        },
    }
}

