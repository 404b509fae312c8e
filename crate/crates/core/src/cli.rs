//! Command-line front end: `generate`, `cluster`, `train`, `predict`,
//! `evaluate` and `sweep`.
//!
//! Settings resolve as command-line flag, then the TOML file given with
//! `--config`, then the built-in default.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;
use serde::Deserialize;

use crate::clustering::{cluster, ClusteringMode, Similarity, DEFAULT_ROUTE_THRESHOLD};
use crate::evaluation::{
    grid_sweep, incremental_experiment, leave_one_out_cv, random_split_cv, shuffled_order,
    write_incremental_csv, write_outcomes_csv, write_sweep_csv, Corpus, EvalConfig, EvalReport,
    Protocol, SweepPlan, SweepRow,
};
use crate::markov_model::{ModelBundle, ModelSet, PiMode};
use crate::predictor::{priors_from_sizes, Predictor, PredictorConfig, PriorMode};
use crate::synthetic_gen::{generate_corpus, GenConfig};
use crate::trip_data::{parse_trips, write_trips, ClusterSet, History, SegmentId};

pub const DEFAULT_ALPHAS: [f64; 8] = [1e-4, 0.001, 0.1, 0.2, 0.25, 0.3, 0.35, 0.4];
pub const DEFAULT_EPSILONS: [f64; 6] = [1e-7, 1e-5, 0.001, 0.005, 0.01, 0.1];

#[derive(Debug, Parser)]
#[command(name = "trip-predict", version, about = "Online destination and route prediction of driving trips")]
pub struct Cli {
    /// TOML file with default settings; command-line flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic corpus (trips.jsonl, ground_truth.json) to a directory.
    Generate(GenerateArgs),
    /// Cluster a trip history and write clusters.json.
    Cluster(ClusterArgs),
    /// Train per-cluster Markov chains and write a model bundle.
    Train(TrainArgs),
    /// Read segments from standard input and stream posterior updates.
    Predict(PredictArgs),
    /// Cross-validate on a trip history.
    Evaluate(EvaluateArgs),
    /// Evaluate over a grid of alpha and epsilon values.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Output directory.
    #[arg(long, default_value = ".")]
    pub output: PathBuf,
    /// Generator seed [default: 0, or `seed` in the config file].
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ClusteringArgs {
    /// `od` or `route` [default: od].
    #[arg(long)]
    pub clustering: Option<ClusteringMode>,
    /// Similarity cut for route clustering [default: 0.3].
    #[arg(long)]
    pub route_threshold: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SmoothingArgs {
    /// Smoothing constant [default: 1e-6].
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Initial distribution: `ml`, `cluster-uniform` or `global-uniform` [default: global-uniform].
    #[arg(long)]
    pub pi: Option<PiMode>,
}

#[derive(Debug, Args)]
pub struct ProtocolArgs {
    /// `split`, `loo` or `incremental` [default: loo].
    #[arg(long)]
    pub protocol: Option<Protocol>,
    /// Number of random splits [default: 8].
    #[arg(long)]
    pub rounds: Option<usize>,
    /// Share of trips used for training in each split [default: 0.5].
    #[arg(long)]
    pub split_fraction: Option<f64>,
    /// Seed for splits and the incremental trip order [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ClusterArgs {
    /// Trip history (JSON lines).
    #[arg(long)]
    pub input: PathBuf,
    #[command(flatten)]
    pub clustering: ClusteringArgs,
    /// Output file.
    #[arg(long, default_value = "clusters.json")]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Trip history (JSON lines).
    #[arg(long)]
    pub input: PathBuf,
    /// Precomputed clusters.json; clusters are computed when absent.
    #[arg(long)]
    pub clusters: Option<PathBuf>,
    #[command(flatten)]
    pub clustering: ClusteringArgs,
    #[command(flatten)]
    pub smoothing: SmoothingArgs,
    /// Output file.
    #[arg(long, default_value = "model.json")]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Model bundle written by `train`.
    #[arg(long)]
    pub input: PathBuf,
    /// Decide once a posterior exceeds 1 - alpha [default: 0.1].
    #[arg(long)]
    pub alpha: Option<f64>,
    /// `uniform` or `proportional` to cluster size [default: uniform].
    #[arg(long)]
    pub prior: Option<PriorMode>,
    /// Re-smooth the bundle with this epsilon.
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Override the bundle's initial-probability mode.
    #[arg(long)]
    pub pi: Option<PiMode>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Trip history (JSON lines).
    #[arg(long)]
    pub input: PathBuf,
    /// Precomputed clusters.json; clusters are computed when absent.
    #[arg(long)]
    pub clusters: Option<PathBuf>,
    #[command(flatten)]
    pub clustering: ClusteringArgs,
    /// Decide once a posterior exceeds 1 - alpha [default: 0.1].
    #[arg(long)]
    pub alpha: Option<f64>,
    /// `uniform` or `proportional` to cluster size [default: uniform].
    #[arg(long)]
    pub prior: Option<PriorMode>,
    #[command(flatten)]
    pub smoothing: SmoothingArgs,
    #[command(flatten)]
    pub protocol: ProtocolArgs,
    /// Output directory.
    #[arg(long, default_value = ".")]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Trip history (JSON lines).
    #[arg(long)]
    pub input: PathBuf,
    /// Single clustering mode; both are swept when absent.
    #[command(flatten)]
    pub clustering: ClusteringArgs,
    /// Comma-separated alpha grid.
    #[arg(long, value_delimiter = ',')]
    pub alphas: Option<Vec<f64>>,
    /// Comma-separated epsilon grid.
    #[arg(long, value_delimiter = ',')]
    pub epsilons: Option<Vec<f64>>,
    /// `uniform` or `proportional` to cluster size [default: uniform].
    #[arg(long)]
    pub prior: Option<PriorMode>,
    /// Initial distribution: `ml`, `cluster-uniform` or `global-uniform` [default: global-uniform].
    #[arg(long)]
    pub pi: Option<PiMode>,
    #[command(flatten)]
    pub protocol: ProtocolArgs,
    /// Output file.
    #[arg(long, default_value = "sweep.csv")]
    pub output: PathBuf,
}

/// Contents of a `--config` file. Every key is optional.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct FileConfig {
    pub alpha: Option<f64>,
    pub epsilon: Option<f64>,
    pub prior: Option<PriorMode>,
    pub pi: Option<PiMode>,
    pub clustering: Option<ClusteringMode>,
    pub route_threshold: Option<f64>,
    pub seed: Option<u64>,
    pub protocol: Option<Protocol>,
    pub rounds: Option<usize>,
    pub split_fraction: Option<f64>,
    pub alphas: Option<Vec<f64>>,
    pub epsilons: Option<Vec<f64>>,
    pub generator: Option<GenConfig>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

/// Parses `args` (including the program name) and runs the command with the
/// given standard streams.
pub fn run<I, T>(args: I, stdin: impl BufRead, stdout: impl Write) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args)?;
    execute(cli, stdin, stdout)
}

pub fn execute(cli: Cli, stdin: impl BufRead, stdout: impl Write) -> Result<()> {
    let file = match &cli.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    match cli.command {
        Command::Generate(a) => generate(&a, &file),
        Command::Cluster(a) => cluster_cmd(&a, &file),
        Command::Train(a) => train(&a, &file),
        Command::Predict(a) => predict(&a, &file, stdin, stdout),
        Command::Evaluate(a) => evaluate(&a, &file, stdout),
        Command::Sweep(a) => sweep(&a, &file),
    }
}

fn read_history(path: &Path) -> Result<History> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    parse_trips(BufReader::new(f)).with_context(|| format!("reading trips from {}", path.display()))
}

fn read_clusters(path: &Path) -> Result<ClusterSet> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    ClusterSet::from_reader(BufReader::new(f)).with_context(|| format!("reading clusters from {}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn route_threshold(args: &ClusteringArgs, file: &FileConfig) -> f64 {
    args.route_threshold.or(file.route_threshold).unwrap_or(DEFAULT_ROUTE_THRESHOLD)
}

/// Clusters from `--clusters` when given, otherwise computed with the
/// resolved clustering mode. Returns the mode label used in reports.
fn resolve_clusters(
    history: &History,
    clusters: Option<&Path>,
    args: &ClusteringArgs,
    file: &FileConfig,
) -> Result<(ClusterSet, String)> {
    match clusters {
        Some(path) => {
            let set = read_clusters(path)?;
            set.check_partition(history)?;
            Ok((set, "file".to_string()))
        }
        None => {
            let mode = args.clustering.or(file.clustering).unwrap_or(ClusteringMode::Od);
            let set = cluster(history, mode, route_threshold(args, file), Similarity::Jaccard)?;
            info!("{} {mode} clusters", set.len());
            Ok((set, mode.to_string()))
        }
    }
}

fn generate(args: &GenerateArgs, file: &FileConfig) -> Result<()> {
    let mut config = file.generator.unwrap_or_default();
    if let Some(seed) = args.seed.or(file.seed) {
        config.seed = seed;
    }
    let (history, truth) = generate_corpus(&config)?;
    fs::create_dir_all(&args.output).with_context(|| format!("creating {}", args.output.display()))?;
    let mut w = create(&args.output.join("trips.jsonl"))?;
    write_trips(&history, &mut w)?;
    w.flush()?;
    write_json(&args.output.join("ground_truth.json"), &truth)?;
    info!("wrote {} trips over {} routes", history.len(), truth.routes.len());
    Ok(())
}

fn cluster_cmd(args: &ClusterArgs, file: &FileConfig) -> Result<()> {
    let history = read_history(&args.input)?;
    let (set, _) = resolve_clusters(&history, None, &args.clustering, file)?;
    write_json(&args.output, &set)
}

fn train(args: &TrainArgs, file: &FileConfig) -> Result<()> {
    let history = read_history(&args.input)?;
    let (set, _) = resolve_clusters(&history, args.clusters.as_deref(), &args.clustering, file)?;
    let epsilon = args.smoothing.epsilon.or(file.epsilon).unwrap_or(PredictorConfig::default().epsilon);
    let pi = args.smoothing.pi.or(file.pi).unwrap_or_default();
    let labels = set.labels(&history)?;
    let dedup = history.deduplicated();
    let trips: Vec<_> = dedup.trips().iter().collect();
    let models = ModelSet::train(&trips, &labels, &set.ids(), epsilon, pi)?;
    write_json(&args.output, &models.to_bundle())
}

fn predict(args: &PredictArgs, file: &FileConfig, stdin: impl BufRead, mut stdout: impl Write) -> Result<()> {
    let f = File::open(&args.input).with_context(|| format!("opening {}", args.input.display()))?;
    let bundle: ModelBundle = serde_json::from_reader(BufReader::new(f))
        .with_context(|| format!("reading model bundle {}", args.input.display()))?;
    let mut models = ModelSet::from_bundle(bundle)?;
    let epsilon = args.epsilon.or(file.epsilon);
    let pi = args.pi.or(file.pi);
    if epsilon.is_some() || pi.is_some() {
        let current = &models.models()[0];
        let (e, p) = (
            epsilon.unwrap_or(current.smoothing().epsilon),
            pi.unwrap_or(current.pi_mode()),
        );
        models.reconfigure(e, p)?;
    }
    let config = PredictorConfig {
        alpha: args.alpha.or(file.alpha).unwrap_or(PredictorConfig::default().alpha),
        prior_mode: args.prior.or(file.prior).unwrap_or_default(),
        epsilon: models.models()[0].smoothing().epsilon,
        ..Default::default()
    };
    let sizes: Vec<usize> = models.models().iter().map(|m| m.trips_in_cluster() as usize).collect();
    let priors = priors_from_sizes(&sizes, config.prior_mode)?;
    let predictor = Predictor::new(&models, &priors, &config)?;

    let mut session = None;
    for line in stdin.lines() {
        let line = line.context("reading standard input")?;
        let name = line.trim();
        if name.is_empty() {
            continue;
        }
        let seg = SegmentId::new(name)?;
        let s = match session.as_mut() {
            None => session.insert(predictor.start_segment(&seg)?),
            Some(s) => {
                s.observe_segment(&seg)?;
                s
            }
        };
        serde_json::to_writer(&mut stdout, &s.update())?;
        writeln!(stdout)?;
        stdout.flush()?;
        if s.decided().is_some() {
            break;
        }
    }
    Ok(())
}

fn eval_config(alpha: Option<f64>, prior: Option<PriorMode>, smoothing: &SmoothingArgs, file: &FileConfig) -> EvalConfig {
    let d = PredictorConfig::default();
    EvalConfig {
        predictor: PredictorConfig {
            alpha: alpha.or(file.alpha).unwrap_or(d.alpha),
            prior_mode: prior.or(file.prior).unwrap_or_default(),
            epsilon: smoothing.epsilon.or(file.epsilon).unwrap_or(d.epsilon),
            ..d
        },
        pi_mode: smoothing.pi.or(file.pi).unwrap_or_default(),
    }
}

fn sweep_plan(args: &ProtocolArgs, file: &FileConfig) -> SweepPlan {
    let d = SweepPlan::default();
    SweepPlan {
        protocol: args.protocol.or(file.protocol).unwrap_or(Protocol::Loo),
        rounds: args.rounds.or(file.rounds).unwrap_or(d.rounds),
        split: args.split_fraction.or(file.split_fraction).unwrap_or(d.split),
        seed: args.seed.or(file.seed).unwrap_or(d.seed),
    }
}

fn evaluate(args: &EvaluateArgs, file: &FileConfig, mut stdout: impl Write) -> Result<()> {
    let history = read_history(&args.input)?;
    let (set, mode) = resolve_clusters(&history, args.clusters.as_deref(), &args.clustering, file)?;
    let corpus = Corpus::new(&history, &set)?;
    let config = eval_config(args.alpha, args.prior, &args.smoothing, file);
    let plan = sweep_plan(&args.protocol, file);
    fs::create_dir_all(&args.output).with_context(|| format!("creating {}", args.output.display()))?;

    let reports: Vec<EvalReport> = match plan.protocol {
        Protocol::Incremental => {
            let order = shuffled_order(corpus.len(), plan.seed);
            let steps: Vec<usize> = (1..corpus.len()).collect();
            let series = incremental_experiment(&corpus, &config, &order, &steps)?;
            let path = args.output.join("incremental.csv");
            let mut w = create(&path)?;
            write_incremental_csv(&series, &mut w)?;
            w.flush()?;
            info!("wrote {}", path.display());
            return Ok(());
        }
        Protocol::Loo => vec![leave_one_out_cv(&corpus, &config)?],
        Protocol::Split => random_split_cv(&corpus, &config, plan.rounds, plan.split, plan.seed)?,
    };
    let mut w = create(&args.output.join("outcomes.csv"))?;
    write_outcomes_csv(&reports, &mut w)?;
    w.flush()?;

    let pooled = EvalReport::pool(&reports)?;
    let summary = [SweepRow {
        alpha: config.predictor.alpha,
        epsilon: config.predictor.epsilon,
        clustering_mode: mode,
        protocol: plan.protocol,
        failure_rate: pooled.failure_rate,
        mean_fraction_used: pooled.mean_fraction_used,
        n_trips: pooled.n_trips,
    }];
    let mut w = create(&args.output.join("summary.csv"))?;
    write_sweep_csv(&summary, &mut w)?;
    w.flush()?;
    write_sweep_csv(&summary, &mut stdout)?;
    Ok(())
}

fn sweep(args: &SweepArgs, file: &FileConfig) -> Result<()> {
    let history = read_history(&args.input)?;
    let alphas = args.alphas.clone().or_else(|| file.alphas.clone()).unwrap_or(DEFAULT_ALPHAS.to_vec());
    let epsilons = args.epsilons.clone().or_else(|| file.epsilons.clone()).unwrap_or(DEFAULT_EPSILONS.to_vec());
    let none = SmoothingArgs { epsilon: None, pi: args.pi };
    let base = eval_config(None, args.prior, &none, file);
    let plan = sweep_plan(&args.protocol, file);
    if plan.protocol == Protocol::Incremental {
        bail!("sweep supports the split and loo protocols");
    }
    let modes = match args.clustering.clustering.or(file.clustering) {
        Some(m) => vec![m],
        None => vec![ClusteringMode::Od, ClusteringMode::Route],
    };
    let mut rows = Vec::new();
    for mode in modes {
        let set = cluster(&history, mode, route_threshold(&args.clustering, file), Similarity::Jaccard)?;
        info!("{} {mode} clusters", set.len());
        let corpus = Corpus::new(&history, &set)?;
        rows.extend(grid_sweep(&corpus, &mode.to_string(), &alphas, &epsilons, &plan, &base)?);
    }
    let mut w = create(&args.output)?;
    write_sweep_csv(&rows, &mut w)?;
    w.flush()?;
    Ok(())
}
