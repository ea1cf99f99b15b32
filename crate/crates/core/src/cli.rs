//! Command-line surface: `gen`, `train`, `eval` and `bench`.
//!
//! Settings come from one TOML file (`--config`) with optional sections
//! `[gen]`, `[model]`, `[train]`, `[optimizer]`, `[eval]` and `[bench]`; flags
//! override the file. A top-level `seed` (or `--seed`) seeds both generation
//! and training.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{
    compute_metrics, linear_fit, metrics_csv, rank_all, timing_benchmark, timing_csv, two_stage_report, Metrics,
    DEFAULT_CHUNK, DEFAULT_REPETITIONS,
};
use crate::models::{ModelConfig, ModelParams, VariantSpec};
use crate::ndcore::Tensor;
use crate::rng::Streams;
use crate::synthdata::{load_split, Dataset, GenConfig, Split};
use crate::training::{train, OptimizerConfig, TrainConfig, TrainingData};
use crate::Model32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub chunk: usize,
    pub shortlist: Option<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { chunk: DEFAULT_CHUNK, shortlist: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub n_queries: Vec<usize>,
    pub repetitions: usize,
    pub chunk: usize,
    /// Catalogue size to time against; test articles are repeated cyclically
    /// to reach it. `None` uses the test split as is.
    pub articles: Option<usize>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self { n_queries: vec![100, 200, 400, 800], repetitions: DEFAULT_REPETITIONS, chunk: DEFAULT_CHUNK, articles: None }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    /// Dataset directory written by `gen` and read by the other subcommands.
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub gen: GenConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub optimizer: OptimizerConfig,
    pub eval: EvalConfig,
    pub bench: BenchConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(one_line(&e.to_string())))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Parser)]
#[command(name = "shopmatch", version, about = "Train and evaluate query-to-article matchers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset and print its oracle floor.
    Gen(Shared),
    /// Train one variant on the train split.
    Train(TrainArgs),
    /// Rank the test split and write metrics.
    Eval(EvalArgs),
    /// Time full-catalogue scoring over a sweep of query counts.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct Shared {
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, value_name = "U64")]
    pub seed: Option<u64>,
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub shared: Shared,
    #[arg(long, value_name = "NAME")]
    pub variant: String,
    #[arg(long, value_name = "N")]
    pub epochs: Option<usize>,
    #[arg(long, value_name = "F")]
    pub lr: Option<f64>,
    /// Dataset directory (default: `data` in the config, else `data`).
    #[arg(long, value_name = "DIR")]
    pub data: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub shared: Shared,
    #[arg(long, value_name = "NAME")]
    pub variant: String,
    /// Trained parameters. Without it, trainable variants are scored from a
    /// fresh initialization (the untrained baseline).
    #[arg(long, value_name = "PATH")]
    pub checkpoint: Option<PathBuf>,
    /// Prefilter with a linear model, rerank the shortlist with `--variant`.
    #[arg(long)]
    pub two_stage: bool,
    #[arg(long, value_name = "N")]
    pub shortlist: Option<usize>,
    /// Checkpoint of the linear prefilter used by `--two-stage`.
    #[arg(long, value_name = "PATH")]
    pub prefilter: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    pub data: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub shared: Shared,
    #[arg(long, value_name = "NAME")]
    pub variant: String,
    #[arg(long, value_name = "PATH")]
    pub checkpoint: Option<PathBuf>,
    /// Comma-separated query counts.
    #[arg(long, value_name = "N,N,...", value_delimiter = ',')]
    pub sweep: Option<Vec<usize>>,
    #[arg(long, value_name = "N")]
    pub repetitions: Option<usize>,
    #[arg(long, value_name = "N")]
    pub articles: Option<usize>,
    #[arg(long, value_name = "DIR")]
    pub data: Option<PathBuf>,
}

impl Shared {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed.or(cfg.seed) {
            cfg.seed = Some(seed);
            cfg.gen.seed = seed;
            cfg.optimizer.seed = seed;
        }
        if self.out.is_some() {
            cfg.out = self.out.clone();
        }
        Ok(cfg)
    }
}

fn out_dir(cfg: &RunConfig, default: &str) -> Result<PathBuf> {
    let dir = cfg.out.clone().unwrap_or_else(|| PathBuf::from(default));
    fs::create_dir_all(&dir).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", dir.display()))))?;
    Ok(dir)
}

fn data_dir(flag: &Option<PathBuf>, cfg: &RunConfig) -> Result<PathBuf> {
    let dir = flag.clone().or_else(|| cfg.data.clone()).unwrap_or_else(|| PathBuf::from("data"));
    if !dir.is_dir() {
        return Err(Error::Data(format!("dataset directory {} does not exist", dir.display())));
    }
    Ok(dir)
}

/// Loads a checkpoint for `variant`, or builds its parameters from the `init`
/// stream when no checkpoint is given.
fn model_for(variant: VariantSpec, checkpoint: &Option<PathBuf>, cfg: &RunConfig) -> Result<Model32> {
    match checkpoint {
        Some(path) => {
            let model = ModelParams::load(path)?;
            if model.variant.name != variant.name {
                return Err(Error::Config(format!(
                    "checkpoint {} holds variant {}, not {}",
                    path.display(),
                    model.variant.name,
                    variant.name
                )));
            }
            Ok(model)
        }
        None => ModelParams::init(variant, &cfg.model, &mut Streams::new(cfg.optimizer.seed).stream("init")),
    }
}

fn cmd_gen(args: &Shared, out: &mut dyn Write) -> Result<()> {
    let cfg = args.resolve()?;
    let dir = out_dir(&cfg, "data")?;
    let ds = Dataset::generate(&cfg.gen)?;
    let manifest = ds.write(&dir)?;
    let o = &ds.oracle;
    writeln!(
        out,
        "wrote {} ({} test articles, {} test pairs); oracle floor: median rank {}, mean rank {:.3}, top-20 {:.4}",
        manifest.display(),
        o.retrieval_size,
        o.pairs,
        o.median_rank,
        o.average_rank,
        o.top_k[3]
    )?;
    Ok(())
}

fn cmd_train(args: &TrainArgs, out: &mut dyn Write) -> Result<()> {
    let mut cfg = args.shared.resolve()?;
    let variant = VariantSpec::by_name(&args.variant)?;
    if !variant.is_trainable() {
        return Err(Error::Config(format!("variant {} has no trainable loss", variant.name)));
    }
    if let Some(e) = args.epochs {
        cfg.optimizer.epochs = e;
    }
    if let Some(lr) = args.lr {
        cfg.optimizer.learning_rate = lr;
    }
    let split = load_split(data_dir(&args.data, &cfg)?, "train")?;
    let dir = out_dir(&cfg, "runs")?;
    let data = TrainingData::<f32>::from_split(&split, &variant)?;
    let (model, report) = train(variant, &data, &cfg.model, &cfg.train, &cfg.optimizer)?;
    let ckpt = dir.join(format!("{}.ckpt", variant.name));
    let csv = dir.join(format!("{}_train.csv", variant.name));
    model.save(&ckpt)?;
    report.save_csv(&csv)?;
    writeln!(out, "wrote {} (best epoch {}) and {}", ckpt.display(), report.best_epoch, csv.display())?;
    Ok(())
}

fn cmd_eval(args: &EvalArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = args.shared.resolve()?;
    let variant = VariantSpec::by_name(&args.variant)?;
    let split = load_split(data_dir(&args.data, &cfg)?, "test")?;
    let model = model_for(variant, &args.checkpoint, &cfg)?;
    let dir = out_dir(&cfg, "runs")?;
    let chunk = cfg.eval.chunk;
    let m = split.fdna.len();
    let name = variant.name.as_str();

    let (label, report, metrics) = if args.two_stage {
        let s = args.shortlist.or(cfg.eval.shortlist).ok_or_else(|| Error::Config("--two-stage needs --shortlist".into()))?;
        let path = args.prefilter.as_ref().ok_or_else(|| Error::Config("--two-stage needs --prefilter".into()))?;
        let linear = ModelParams::load(path)?;
        let queries = split.query_inputs(model.variant.query_features);
        if linear.variant.query_features != model.variant.query_features {
            return Err(Error::Config(format!(
                "prefilter {} and rerank {} read different query inputs",
                linear.variant.name, model.variant.name
            )));
        }
        let articles = split.article_inputs(model.variant.article_features);
        let (report, recall) = two_stage_report(
            &linear,
            &model,
            queries.features(),
            queries.ids(),
            &split.positives()?,
            articles.features(),
            articles.ids(),
            s,
            chunk,
        )?;
        writeln!(out, "recall@{s}: {recall:.6}")?;
        let metrics = compute_metrics(&report, m)?;
        (format!("{name}-two-stage-{s}"), report, metrics)
    } else {
        let report = rank_all(&model, &split, chunk)?;
        let metrics = compute_metrics(&report, m)?;
        (name.to_string(), report, metrics)
    };

    let csv = dir.join(format!("{label}_metrics.csv"));
    let tsv = dir.join(format!("{label}_ranks.tsv"));
    let rows: Vec<(String, Metrics)> = vec![(label.clone(), metrics.clone())];
    fs::write(&csv, metrics_csv(&rows))?;
    report.save_tsv(&tsv)?;
    writeln!(
        out,
        "{label}: top-20 {:.4}, top-1% {:.4}, median rank {} of {m}; wrote {} and {}",
        metrics.top_k[3],
        metrics.top_1pct,
        metrics.median_rank,
        csv.display(),
        tsv.display()
    )?;
    Ok(())
}

/// Repeats the rows of `t` cyclically until it has `n` rows.
fn tile_rows(t: &Tensor<f32>, n: usize) -> Tensor<f32> {
    if t.rows() == 0 {
        return t.clone();
    }
    let rows: Vec<usize> = (0..n).map(|i| i % t.rows()).collect();
    t.select_rows(&rows)
}

fn bench_inputs(split: &Split, model: &Model32, articles: Option<usize>, max_queries: usize) -> (Tensor<f32>, Tensor<f32>) {
    let q = split.query_inputs(model.variant.query_features).features();
    let a = split.article_inputs(model.variant.article_features).features();
    let a = match articles {
        Some(n) => tile_rows(a, n),
        None => a.clone(),
    };
    (tile_rows(q, max_queries.max(q.rows())), a)
}

fn cmd_bench(args: &BenchArgs, out: &mut dyn Write) -> Result<()> {
    let mut cfg = args.shared.resolve()?;
    if let Some(s) = &args.sweep {
        cfg.bench.n_queries = s.clone();
    }
    if let Some(r) = args.repetitions {
        cfg.bench.repetitions = r;
    }
    if args.articles.is_some() {
        cfg.bench.articles = args.articles;
    }
    let variant = VariantSpec::by_name(&args.variant)?;
    let split = load_split(data_dir(&args.data, &cfg)?, "test")?;
    let model = model_for(variant, &args.checkpoint, &cfg)?;
    let dir = out_dir(&cfg, "runs")?;
    let b = &cfg.bench;
    let max_q = b.n_queries.iter().copied().max().unwrap_or(0);
    let (queries, articles) = bench_inputs(&split, &model, b.articles, max_q);
    let reports = timing_benchmark(&model, &b.n_queries, &queries, &articles, b.chunk, b.repetitions)?;
    let csv = dir.join(format!("{}_bench.csv", variant.name));
    fs::write(&csv, timing_csv(&reports))?;
    let x: Vec<f64> = reports.iter().map(|r| r.n_queries as f64).collect();
    let y: Vec<f64> = reports.iter().map(|r| r.mean_wall_s).collect();
    if reports.len() >= 2 {
        let (slope, _, r2) = linear_fit(&x, &y);
        writeln!(out, "{} articles: {:.4} ms per query, R² {r2:.4}; wrote {}", articles.rows(), 1e3 * slope, csv.display())?;
    } else {
        writeln!(out, "wrote {}", csv.display())?;
    }
    Ok(())
}

/// Parses `args` (including the program name) and runs the subcommand.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| Error::Config(one_line(&e.to_string())))?;
    execute(&cli, out)
}

pub fn execute(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    match &cli.command {
        Command::Gen(a) => cmd_gen(a, out),
        Command::Train(a) => cmd_train(a, out),
        Command::Eval(a) => cmd_eval(a, out),
        Command::Bench(a) => cmd_bench(a, out),
    }
}

/// Entry point for the binary; returns the process exit code.
pub fn main_with(args: Vec<OsString>) -> i32 {
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            eprintln!("error[usage]: {}", first.trim_start_matches("error: "));
            return 2;
        }
    };
    let stdout = std::io::stdout();
    match execute(&cli, &mut stdout.lock()) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error[{}]: {}", e.category(), one_line(&e.to_string()));
            1
        }
    }
}
