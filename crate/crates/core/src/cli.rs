//! Command-line front end.
//!
//! Settings are resolved in three layers: built-in defaults, then an
//! optional TOML file (`--config`, flat keys named like the long flags with
//! `_` for `-`), then command-line flags.

use crate::bottleneck::{bottleneck_report, report_csv, PsiNormalize};
use crate::data::{load_csv, load_mnist, split_dataset, teacher_student_data, Dataset, DatasetSplits};
use crate::error::{Error, Result};
use crate::growth::GammaGrid;
use crate::metrics::{emit_metrics, emit_plotdata, load_summary, Phase, RunSummary, SCHEMA_VERSION};
use crate::netdag::{load_model, save_model, Activation, DagNetwork, LossKind};
use crate::strategy::{grow_from, BicVariant, GrowthConfig, RunResult, StrategyKind};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

/// Environment variable naming the MNIST directory when `--data-dir` is absent.
pub const DATA_ENV: &str = "DAG_GROW_DATA";

#[derive(Debug, Parser)]
#[command(name = "dag-grow", version, about = "Grow DAG-shaped networks from an empty graph")]
pub struct Cli {
    /// TOML file with default settings; flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Grow a network on one dataset.
    Run(RunArgs),
    /// Teacher-student benchmark over seeds and strategies.
    TeacherStudent(TeacherArgs),
    /// Grow a classifier on MNIST.
    Mnist(MnistArgs),
    /// Per-node bottleneck of a saved model on a dataset.
    BottleneckReport(ReportArgs),
    /// Compare JSON run summaries.
    Report(CompareArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct GrowthFlags {
    #[arg(long)]
    pub strategy: Option<StrategyKind>,
    /// Growth steps.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Inter-training epochs after each step.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Neurons added by each new-node or widening expansion.
    #[arg(long, alias = "neurons-per-step")]
    pub neurons: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Activation of new nodes: identity, selu or tanh.
    #[arg(long)]
    pub activation: Option<Activation>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub momentum: Option<f64>,
    /// Line-search grid as `J,gamma0`: 0 and ±gamma0·2^j for j = 0..=J.
    #[arg(long)]
    pub gamma_grid: Option<String>,
    /// Ridge relative to trace(S)/dim(S).
    #[arg(long)]
    pub ridge: Option<f64>,
    #[arg(long)]
    pub loss: Option<LossKind>,
    /// Compare psi as-is (none) or divided by sqrt(width).
    #[arg(long)]
    pub psi_normalize: Option<PsiNormalize>,
    /// loss (k ln n - 2 ln loss) or n-log-mse (k ln n + n ln mse).
    #[arg(long)]
    pub bic_variant: Option<BicVariant>,
    /// Also apply the projection's in-edge update, scaled by gamma.
    #[arg(long)]
    pub apply_dw_star: bool,
    #[arg(long)]
    pub max_node_width: Option<usize>,
    #[arg(long)]
    pub max_nodes: Option<usize>,
    /// Worker threads for candidate evaluation.
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct DataFlags {
    /// teacher, mnist or csv:PATH.
    #[arg(long)]
    pub data: Option<String>,
    /// Number of trailing CSV columns holding targets.
    #[arg(long)]
    pub target_cols: Option<usize>,
    /// Directory with the four uncompressed MNIST IDX files.
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    /// Keep only the first N training images.
    #[arg(long)]
    pub subset: Option<usize>,
    /// Teacher training samples (before the three-way split).
    #[arg(long)]
    pub n_train: Option<usize>,
    #[arg(long)]
    pub n_test: Option<usize>,
    /// Teacher inputs are uniform on [-bound, bound].
    #[arg(long)]
    pub input_bound: Option<f64>,
    /// Fraction of CSV rows held out as the test set.
    #[arg(long)]
    pub test_fraction: Option<f64>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct OutputFlags {
    /// CSV log path; the JSON summary goes next to it with a .json extension.
    #[arg(long)]
    pub metrics_out: Option<PathBuf>,
    #[arg(long)]
    pub save_model: Option<PathBuf>,
    /// Start growing from this model instead of the empty network.
    #[arg(long)]
    pub load_model: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub growth: GrowthFlags,
    #[command(flatten)]
    pub data: DataFlags,
    #[command(flatten)]
    pub output: OutputFlags,
}

#[derive(Debug, Args)]
pub struct TeacherArgs {
    #[command(flatten)]
    pub growth: GrowthFlags,
    #[command(flatten)]
    pub data: DataFlags,
    /// Run all three strategies.
    #[arg(long)]
    pub all_strategies: bool,
    /// Number of consecutive seeds starting at --seed.
    #[arg(long)]
    pub seeds: Option<usize>,
    /// Directory receiving one CSV and one JSON file per run plus comparison.json.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MnistArgs {
    #[command(flatten)]
    pub growth: GrowthFlags,
    #[command(flatten)]
    pub data: DataFlags,
    #[command(flatten)]
    pub output: OutputFlags,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub load_model: PathBuf,
    #[command(flatten)]
    pub data: DataFlags,
    #[command(flatten)]
    pub growth: GrowthFlags,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// JSON run summaries.
    #[arg(required = true)]
    pub paths: Vec<PathBuf>,
}

/// Flat configuration file; every key mirrors a long flag.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub strategy: Option<StrategyKind>,
    pub steps: Option<usize>,
    pub epochs: Option<usize>,
    pub neurons: Option<usize>,
    pub seed: Option<u64>,
    pub activation: Option<Activation>,
    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
    pub momentum: Option<f64>,
    pub gamma_grid: Option<String>,
    pub ridge: Option<f64>,
    pub loss: Option<LossKind>,
    pub psi_normalize: Option<PsiNormalize>,
    pub bic_variant: Option<BicVariant>,
    pub apply_dw_star: Option<bool>,
    pub max_node_width: Option<usize>,
    pub max_nodes: Option<usize>,
    pub jobs: Option<usize>,
    pub data: Option<String>,
    pub target_cols: Option<usize>,
    pub data_dir: Option<PathBuf>,
    pub subset: Option<usize>,
    pub n_train: Option<usize>,
    pub n_test: Option<usize>,
    pub input_bound: Option<f64>,
    pub test_fraction: Option<f64>,
    pub seeds: Option<usize>,
    pub all_strategies: Option<bool>,
}

impl FileConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }
}

pub fn parse_gamma_grid(s: &str) -> Result<GammaGrid> {
    let (j, g) = s
        .split_once(',')
        .ok_or_else(|| Error::Config(format!("gamma grid '{s}' is not of the form J,gamma0")))?;
    let steps = j
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("gamma grid steps '{j}' is not a count")))?;
    let base: f64 = g
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("gamma grid base '{g}' is not a number")))?;
    if !(base > 0.0) || !base.is_finite() {
        return Err(Error::Config(format!("gamma grid base must be positive, got {base}")));
    }
    Ok(GammaGrid { base, steps })
}

/// Where the data comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DataSource {
    Teacher,
    Mnist,
    Csv(PathBuf),
}

impl FromStr for DataSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "teacher" => Ok(DataSource::Teacher),
            "mnist" => Ok(DataSource::Mnist),
            _ => match s.strip_prefix("csv:") {
                Some(p) if !p.is_empty() => Ok(DataSource::Csv(PathBuf::from(p))),
                _ => Err(Error::Config(format!("unknown data source '{s}' (expected teacher, mnist or csv:PATH)"))),
            },
        }
    }
}

/// Fully resolved settings of one run; echoed into the JSON summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectiveConfig {
    pub growth: GrowthConfig,
    pub data: DataSource,
    pub target_cols: usize,
    pub data_dir: Option<PathBuf>,
    pub subset: Option<usize>,
    pub n_train: usize,
    pub n_test: usize,
    pub input_bound: f64,
    pub test_fraction: f64,
    pub load_model: Option<PathBuf>,
}

fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

/// Built-in defaults of the `mnist` command: a desk-scale schedule on a
/// 10000-image subset. The strong ridge keeps the 785-dimensional whitening
/// from amplifying rarely active pixels.
pub fn mnist_defaults() -> GrowthConfig {
    GrowthConfig {
        strategy: StrategyKind::WholeSearchSpace,
        max_growth_steps: 5,
        inter_train_epochs: 50,
        learning_rate: 1e-3,
        ridge: 10.0,
        loss: LossKind::SoftmaxCrossEntropy,
        ..GrowthConfig::default()
    }
}

/// Subset size used by the `mnist` command unless configured.
pub const MNIST_DEFAULT_SUBSET: usize = 10_000;

fn resolve(growth: &GrowthFlags, data: &DataFlags, file: &FileConfig, default_source: DataSource) -> Result<EffectiveConfig> {
    resolve_with(growth, data, file, default_source, &GrowthConfig::default(), None)
}

fn resolve_with(
    growth: &GrowthFlags,
    data: &DataFlags,
    file: &FileConfig,
    default_source: DataSource,
    d: &GrowthConfig,
    default_subset: Option<usize>,
) -> Result<EffectiveConfig> {
    let source = match data.data.clone().or(file.data.clone()) {
        Some(s) => s.parse()?,
        None => default_source,
    };
    let default_loss = if source == DataSource::Mnist {
        LossKind::SoftmaxCrossEntropy
    } else {
        d.loss
    };
    let gamma_grid = match growth.gamma_grid.as_ref().or(file.gamma_grid.as_ref()) {
        Some(s) => parse_gamma_grid(s)?,
        None => d.gamma_grid,
    };
    let activation = pick(growth.activation, file.activation, d.activation);
    if activation.slope_at_zero() == 0.0 {
        return Err(Error::Config(format!(
            "activation {activation} has zero slope at 0 and cannot seed new neurons"
        )));
    }
    let config = GrowthConfig {
        strategy: pick(growth.strategy, file.strategy, d.strategy),
        neurons_per_step: pick(growth.neurons, file.neurons, d.neurons_per_step),
        activation,
        inter_train_epochs: pick(growth.epochs, file.epochs, d.inter_train_epochs),
        max_growth_steps: pick(growth.steps, file.steps, d.max_growth_steps),
        batch_size: pick(growth.batch_size, file.batch_size, d.batch_size),
        learning_rate: pick(growth.learning_rate, file.learning_rate, d.learning_rate),
        momentum: pick(growth.momentum, file.momentum, d.momentum),
        gamma_grid,
        ridge: pick(growth.ridge, file.ridge, d.ridge),
        seed: pick(growth.seed, file.seed, d.seed),
        loss: pick(growth.loss, file.loss, default_loss),
        psi_normalize: pick(growth.psi_normalize, file.psi_normalize, d.psi_normalize),
        bic_variant: pick(growth.bic_variant, file.bic_variant, d.bic_variant),
        apply_dw_star: growth.apply_dw_star || file.apply_dw_star.unwrap_or(false),
        max_node_width: growth.max_node_width.or(file.max_node_width),
        max_nodes: growth.max_nodes.or(file.max_nodes),
    };
    config.validate()?;
    let test_fraction = pick(data.test_fraction, file.test_fraction, 0.2);
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::Config("test fraction must lie in [0, 1)".into()));
    }
    Ok(EffectiveConfig {
        growth: config,
        data: source,
        target_cols: pick(data.target_cols, file.target_cols, 1),
        data_dir: data.data_dir.clone().or(file.data_dir.clone()),
        subset: data.subset.or(file.subset).or(default_subset),
        n_train: pick(data.n_train, file.n_train, 3000),
        n_test: pick(data.n_test, file.n_test, 1000),
        input_bound: pick(data.input_bound, file.input_bound, 1.0),
        test_fraction,
        load_model: None,
    })
}

fn mnist_dir(configured: Option<&PathBuf>) -> Result<PathBuf> {
    configured
        .cloned()
        .or_else(|| std::env::var_os(DATA_ENV).map(PathBuf::from))
        .ok_or_else(|| {
            Error::MissingData(format!(
                "no MNIST directory: pass --data-dir or set {DATA_ENV} to a directory holding {}",
                crate::data::MnistFiles::ALL.join(", ")
            ))
        })
}

/// Training and test data for a resolved configuration.
pub fn load_data(cfg: &EffectiveConfig) -> Result<(Dataset, Dataset)> {
    match &cfg.data {
        DataSource::Teacher => {
            let (_, train, test) = teacher_student_data(cfg.growth.seed, cfg.n_train, cfg.n_test, cfg.input_bound)?;
            Ok((train, test))
        }
        DataSource::Mnist => load_mnist(&mnist_dir(cfg.data_dir.as_ref())?, cfg.subset),
        DataSource::Csv(path) => {
            let all = load_csv(path, cfg.target_cols)?;
            let n_test = (all.len() as f64 * cfg.test_fraction).round() as usize;
            let n_train = all.len() - n_test;
            let rows: Vec<usize> = (0..all.len()).collect();
            Ok((all.select(&rows[..n_train]), all.select(&rows[n_train..])))
        }
    }
}

pub fn make_splits(cfg: &EffectiveConfig) -> Result<DatasetSplits> {
    let (train, test) = load_data(cfg)?;
    split_dataset(&train, test, cfg.growth.seed)
}

/// Summary document for a finished run.
pub fn summarize(label: &str, cfg: &EffectiveConfig, run: &RunResult) -> Result<RunSummary> {
    let test = run
        .metrics
        .last("test")
        .ok_or(Error::EmptyDataset("no test evaluation was logged"))?;
    let gr = run
        .metrics
        .last("train_gr")
        .ok_or(Error::EmptyDataset("no train-gr evaluation was logged"))?;
    let flops_by_phase = Phase::ALL
        .iter()
        .map(|&p| (serde_json::to_value(p).expect("phase").as_str().expect("string").to_string(), run.flops.phase(p)))
        .collect();
    Ok(RunSummary {
        schema_version: SCHEMA_VERSION,
        label: label.to_string(),
        config: serde_json::to_value(cfg)?,
        final_params: run.net.param_count(),
        final_test_metric: test.accuracy.unwrap_or(test.loss),
        final_test_loss: test.loss,
        final_train_gr_loss: gr.loss,
        flops_total: run.flops.total(),
        flops_candidate_evaluation: run.flops.candidate_evaluation(),
        flops_by_phase,
        wall_s: run.metrics.rows.last().map_or(0.0, |r| r.wall_s),
        steps: run.metrics.steps.clone(),
    })
}

fn write_outputs(csv_path: &Path, summary: &RunSummary, run: &RunResult) -> Result<()> {
    if let Some(dir) = csv_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    emit_metrics(&run.metrics, csv_path)?;
    emit_plotdata(summary, &csv_path.with_extension("json"))
}

fn step_line(run: &RunResult) -> String {
    let mut out = String::new();
    for s in &run.metrics.steps {
        let _ = writeln!(
            out,
            "step {:>3}  {:<28} params {:>7}  candidates {:>4}",
            s.step,
            s.selected.as_deref().unwrap_or("saturated"),
            s.params,
            s.candidates
        );
    }
    out
}

fn run_single(cfg: EffectiveConfig, output: &OutputFlags, label: &str) -> Result<()> {
    let splits = make_splits(&cfg)?;
    let net = match &output.load_model {
        Some(p) => load_model(p)?,
        None => DagNetwork::empty(splits.train_opt.input_width(), splits.train_opt.output_width()),
    };
    let cfg = EffectiveConfig {
        load_model: output.load_model.clone(),
        ..cfg
    };
    let run = grow_from(net, &cfg.growth, &splits)?;
    let summary = summarize(label, &cfg, &run)?;
    print!("{}", step_line(&run));
    let metric = if cfg.growth.loss == LossKind::SoftmaxCrossEntropy {
        "test accuracy"
    } else {
        "test loss"
    };
    println!(
        "final params {}  {metric} {:.6}  train-gr loss {:.6}  flops {}",
        summary.final_params, summary.final_test_metric, summary.final_train_gr_loss, summary.flops_total
    );
    if let Some(p) = &output.metrics_out {
        write_outputs(p, &summary, &run)?;
    }
    if let Some(p) = &output.save_model {
        save_model(&run.net, p)?;
    }
    Ok(())
}

fn load_file_config(path: Option<&PathBuf>) -> Result<FileConfig> {
    path.map_or_else(|| Ok(FileConfig::default()), |p| FileConfig::load(p))
}

fn cmd_teacher_student(args: &TeacherArgs, file: &FileConfig) -> Result<()> {
    let base = resolve(&args.growth, &args.data, file, DataSource::Teacher)?;
    if base.data != DataSource::Teacher {
        return Err(Error::Config("teacher-student always uses teacher data".into()));
    }
    let strategies: Vec<StrategyKind> = if args.all_strategies || file.all_strategies.unwrap_or(false) {
        StrategyKind::ALL.to_vec()
    } else {
        vec![base.growth.strategy]
    };
    let seeds = args.seeds.or(file.seeds).unwrap_or(1);
    let out_dir = args.out_dir.clone().unwrap_or_else(|| PathBuf::from("runs"));
    fs::create_dir_all(&out_dir)?;
    let mut summaries = Vec::new();
    for i in 0..seeds {
        let seed = base.growth.seed + i as u64;
        for &strategy in &strategies {
            let mut cfg = base.clone();
            cfg.growth.seed = seed;
            cfg.growth.strategy = strategy;
            let splits = make_splits(&cfg)?;
            let run = grow_from(
                DagNetwork::empty(splits.train_opt.input_width(), splits.train_opt.output_width()),
                &cfg.growth,
                &splits,
            )?;
            let label = format!("{strategy}-seed{seed}");
            let summary = summarize(&label, &cfg, &run)?;
            write_outputs(&out_dir.join(format!("{label}.csv")), &summary, &run)?;
            println!(
                "{label:<20} params {:>6}  train-gr mse {:.6}  test mse {:.6}  candidate flops {}",
                summary.final_params,
                summary.final_train_gr_loss,
                summary.final_test_loss,
                summary.flops_candidate_evaluation
            );
            summaries.push(summary);
        }
    }
    let table = compare(&summaries)?;
    print!("{}", table.text);
    fs::write(out_dir.join("comparison.json"), serde_json::to_string_pretty(&table.groups)?)?;
    Ok(())
}

/// Aggregate of all runs sharing a strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyGroup {
    pub strategy: String,
    pub runs: usize,
    pub mean_test_loss: f64,
    pub std_test_loss: f64,
    pub mean_train_gr_loss: f64,
    pub median_params: f64,
    pub mean_flops_total: f64,
    pub mean_flops_candidate: f64,
    /// Candidate-evaluation FLOPs relative to the whole-space group, if present.
    pub candidate_flop_ratio: Option<f64>,
}

pub struct Comparison {
    pub groups: Vec<StrategyGroup>,
    pub text: String,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

/// Group summaries by strategy and tabulate them.
pub fn compare(summaries: &[RunSummary]) -> Result<Comparison> {
    let mut by: BTreeMap<String, Vec<&RunSummary>> = BTreeMap::new();
    for s in summaries {
        if s.schema_version != SCHEMA_VERSION {
            return Err(Error::VersionMismatch {
                found: s.schema_version,
                expected: SCHEMA_VERSION,
            });
        }
        let strategy = s
            .config
            .pointer("/growth/strategy")
            .and_then(|v| v.as_str())
            .unwrap_or("unknown")
            .to_string();
        by.entry(strategy).or_default().push(s);
    }
    let mut groups: Vec<StrategyGroup> = by
        .into_iter()
        .map(|(strategy, runs)| {
            let test: Vec<f64> = runs.iter().map(|r| r.final_test_loss).collect();
            let (mean_test_loss, std_test_loss) = mean_std(&test);
            let gr: Vec<f64> = runs.iter().map(|r| r.final_train_gr_loss).collect();
            let total: Vec<f64> = runs.iter().map(|r| r.flops_total as f64).collect();
            let cand: Vec<f64> = runs.iter().map(|r| r.flops_candidate_evaluation as f64).collect();
            StrategyGroup {
                strategy,
                runs: runs.len(),
                mean_test_loss,
                std_test_loss,
                mean_train_gr_loss: mean_std(&gr).0,
                median_params: median(runs.iter().map(|r| r.final_params as f64).collect()),
                mean_flops_total: mean_std(&total).0,
                mean_flops_candidate: mean_std(&cand).0,
                candidate_flop_ratio: None,
            }
        })
        .collect();
    let whole = groups
        .iter()
        .find(|g| g.strategy == StrategyKind::WholeSearchSpace.name())
        .map(|g| g.mean_flops_candidate);
    if let Some(w) = whole.filter(|&w| w > 0.0) {
        for g in &mut groups {
            g.candidate_flop_ratio = Some(g.mean_flops_candidate / w);
        }
    }
    let mut text = format!(
        "{:<11} {:>4} {:>13} {:>11} {:>13} {:>9} {:>14} {:>14} {:>9}\n",
        "strategy", "runs", "test loss", "std", "train-gr loss", "params", "flops total", "flops cand.", "vs whole"
    );
    for g in &groups {
        let _ = writeln!(
            text,
            "{:<11} {:>4} {:>13.6} {:>11.6} {:>13.6} {:>9.1} {:>14.4e} {:>14.4e} {:>9}",
            g.strategy,
            g.runs,
            g.mean_test_loss,
            g.std_test_loss,
            g.mean_train_gr_loss,
            g.median_params,
            g.mean_flops_total,
            g.mean_flops_candidate,
            g.candidate_flop_ratio.map_or("-".to_string(), |r| format!("{r:.3}"))
        );
    }
    Ok(Comparison { groups, text })
}

fn cmd_report(args: &CompareArgs) -> Result<()> {
    let summaries = args.paths.iter().map(|p| load_summary(p)).collect::<Result<Vec<_>>>()?;
    print!("{}", compare(&summaries)?.text);
    Ok(())
}

fn cmd_bottleneck_report(args: &ReportArgs, file: &FileConfig) -> Result<()> {
    let cfg = resolve(&args.growth, &args.data, file, DataSource::Teacher)?;
    let net = load_model(&args.load_model)?;
    let (train, _) = load_data(&cfg)?;
    if train.input_width() != net.input_width() || train.output_width() != net.output_width() {
        return Err(Error::MissingData(format!(
            "model maps {} -> {} but the data has {} inputs and {} targets",
            net.input_width(),
            net.output_width(),
            train.input_width(),
            train.output_width()
        )));
    }
    let report = bottleneck_report(&net, &train, cfg.growth.loss, cfg.growth.ridge, cfg.growth.psi_normalize)?;
    let text = report_csv(&net, &report);
    match &args.out {
        Some(p) => fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn set_jobs(jobs: Option<usize>) -> Result<()> {
    if let Some(j) = jobs {
        if j == 0 {
            return Err(Error::Config("--jobs must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    Ok(())
}

pub fn execute(cli: Cli) -> Result<()> {
    let file = load_file_config(cli.config.as_ref())?;
    match &cli.command {
        Command::Run(a) => {
            set_jobs(a.growth.jobs.or(file.jobs))?;
            let cfg = resolve(&a.growth, &a.data, &file, DataSource::Teacher)?;
            let label = format!("{}-seed{}", cfg.growth.strategy, cfg.growth.seed);
            run_single(cfg, &a.output, &label)
        }
        Command::Mnist(a) => {
            set_jobs(a.growth.jobs.or(file.jobs))?;
            let mut data = a.data.clone();
            if data.data.is_none() && file.data.is_none() {
                data.data = Some("mnist".into());
            }
            let cfg = resolve_with(
                &a.growth,
                &data,
                &file,
                DataSource::Mnist,
                &mnist_defaults(),
                Some(MNIST_DEFAULT_SUBSET),
            )?;
            if cfg.data != DataSource::Mnist {
                return Err(Error::Config("the mnist command only reads MNIST".into()));
            }
            let label = format!("mnist-{}-seed{}", cfg.growth.strategy, cfg.growth.seed);
            run_single(cfg, &a.output, &label)
        }
        Command::TeacherStudent(a) => {
            set_jobs(a.growth.jobs.or(file.jobs))?;
            cmd_teacher_student(a, &file)
        }
        Command::BottleneckReport(a) => cmd_bottleneck_report(a, &file),
        Command::Report(a) => cmd_report(a),
    }
}

/// Process exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Domain(_) => EXIT_USAGE,
        Error::MissingData(_)
        | Error::EmptyDataset(_)
        | Error::Idx(_)
        | Error::Csv(_)
        | Error::Io(_)
        | Error::Document(_)
        | Error::VersionMismatch { .. }
        | Error::InvalidNetwork(_)
        | Error::Shape(_) => EXIT_DATA,
        Error::NonFinite(_)
        | Error::SingularCovariance
        | Error::Numeric(_)
        | Error::UnsupportedActivation(_)
        | Error::UnknownNode(_)
        | Error::InvalidCandidate(_) => EXIT_NUMERIC,
    }
}

/// Parse the process arguments, run, and return the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
