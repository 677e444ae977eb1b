//! `fsgraph` command-line front end.
//!
//! Exit codes: 0 on success, 1 on invalid arguments or input, 2 on I/O
//! failure.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::classifier::TrainConfig;
use crate::episodes::{sample_episode, EpisodeSpec, PoolSize, Sampling};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, evaluate_imbalance, sweep, EvalOptions, HyperParams, SweepGrid};
use crate::feature_io::{
    generate_synthetic, load_feature_set, save_feature_set, FeatureFormat, FeatureSet,
    SyntheticConfig,
};
use crate::graph::{build_episode_graph, embedding_csv, laplacian_embedding, PropagationParams};
use crate::report::{reports_to_csv, to_json, ReportFormat};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_IO: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "fsgraph",
    version,
    about = "Transductive few-shot classification by graph feature interpolation",
    long_about = "Builds a cosine k-NN graph over the support and query features of each \
                  few-shot episode, diffuses features with (alpha*I + E)^kappa, trains a \
                  softmax classifier on the labeled vertices and scores the unlabeled ones."
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic rectified-Gaussian feature set.
    Synth(SynthArgs),
    /// Evaluate one configuration over many random episodes.
    Eval(EvalArgs),
    /// Evaluate a grid of k / kappa / alpha values on paired episodes.
    Sweep(SweepArgs),
    /// Two-way accuracy with q1 queries in one class and total-q1 in the other.
    Imbalance(ImbalanceArgs),
    /// Export a Laplacian embedding of one episode graph as CSV.
    Embed(EmbedArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Number of classes (>= 2).
    #[arg(long, default_value_t = 20)]
    pub classes: usize,
    /// Samples per class (>= 2).
    #[arg(long, default_value_t = 600)]
    pub per_class: usize,
    /// Feature dimension (>= 2).
    #[arg(long, default_value_t = 64)]
    pub dim: usize,
    /// Class-center entries are uniform in [0, center-scale].
    #[arg(long, default_value_t = 1.0)]
    pub center_scale: f64,
    /// Within-class standard deviation (> 0).
    #[arg(long, default_value_t = 0.3)]
    pub noise: f64,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Output feature file.
    #[arg(long)]
    pub out: PathBuf,
    /// binary (FSET1) or csv; inferred from the extension when omitted.
    #[arg(long)]
    pub format: Option<FeatureFormat>,
}

#[derive(Debug, Args)]
pub struct InputArgs {
    /// Feature file (FSET1 binary, or CSV when the name ends in .csv).
    #[arg(long)]
    pub features: PathBuf,
    /// Override the feature file format: binary or csv.
    #[arg(long)]
    pub input_format: Option<FeatureFormat>,
}

#[derive(Debug, Args)]
pub struct TaskArgs {
    /// Classes per episode, K_n >= 2.
    #[arg(long, default_value_t = 5)]
    pub ways: usize,
    /// Labeled samples per class, s >= 1.
    #[arg(long, default_value_t = 1)]
    pub shots: usize,
    /// Total unlabeled queries per episode, Q >= 1.
    #[arg(long, default_value_t = 75)]
    pub queries: usize,
    /// uniform (queries drawn from an equal per-class pool) or balanced (Q/ways per class).
    #[arg(long, default_value = "uniform")]
    pub sampling: Sampling,
    /// Per-class pool for uniform sampling: a count or "all".
    #[arg(long, default_value = "all")]
    pub pool: PoolSize,
}

impl TaskArgs {
    fn spec(&self) -> Result<EpisodeSpec> {
        let spec = EpisodeSpec {
            ways: self.ways,
            shots: self.shots,
            queries: self.queries,
            sampling: self.sampling,
            pool_per_class: self.pool,
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Args)]
pub struct PropagationArgs {
    /// Neighbors kept per vertex, 1 <= k < s*K_n + Q (larger values are clamped).
    /// Default 10 for s < 5, 15 for s >= 5.
    #[arg(long)]
    pub k: Option<usize>,
    /// Power of the diffusion matrix, kappa >= 1 (0 disables propagation).
    /// Default 3 for s < 5, 1 for s >= 5.
    #[arg(long)]
    pub kappa: Option<u32>,
    /// Strength of self-representations, 0 <= alpha <= 1.
    /// Default 0.5 for s < 5, 0.75 for s >= 5.
    #[arg(long)]
    pub alpha: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Logistic-regression epochs (>= 1).
    #[arg(long, default_value_t = 1000)]
    pub epochs: usize,
    /// Adam learning rate (> 0).
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    /// L2 weight decay (>= 0).
    #[arg(long, default_value_t = 5e-6)]
    pub weight_decay: f64,
}

impl TrainArgs {
    fn config(&self) -> Result<TrainConfig> {
        let cfg = TrainConfig {
            epochs: self.epochs,
            learning_rate: self.lr,
            weight_decay: self.weight_decay,
            ..TrainConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn propagation_params(shots: usize, prop: &PropagationArgs) -> Result<PropagationParams> {
    let defaults = HyperParams::for_shots(shots).propagation;
    let params = PropagationParams {
        k: prop.k.unwrap_or(defaults.k),
        kappa: prop.kappa.unwrap_or(defaults.kappa),
        alpha: prop.alpha.unwrap_or(defaults.alpha),
    };
    params.validate()?;
    Ok(params)
}

fn hyperparams(shots: usize, prop: &PropagationArgs, train: &TrainArgs) -> Result<HyperParams> {
    Ok(HyperParams {
        propagation: propagation_params(shots, prop)?,
        train: train.config()?,
    })
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Number of random episodes (>= 1).
    #[arg(long, default_value_t = 500)]
    pub runs: u64,
    /// Seed for every random draw.
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Worker threads (0 = one per core). Does not change results.
    #[arg(long, default_value_t = 0)]
    pub workers: usize,
    /// Include per-run accuracies in JSON output.
    #[arg(long)]
    pub keep_runs: bool,
}

impl RunArgs {
    fn options(&self) -> Result<EvalOptions> {
        if self.runs < 1 {
            return Err(Error::validation("--runs must be at least 1"));
        }
        Ok(EvalOptions {
            workers: self.workers,
            keep_runs: self.keep_runs,
        })
    }
}

#[derive(Debug, Args)]
pub struct OutputArgs {
    /// Report destination; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// json or csv.
    #[arg(long, default_value = "json")]
    pub format: ReportFormat,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub task: TaskArgs,
    #[command(flatten)]
    pub propagation: PropagationArgs,
    #[command(flatten)]
    pub train: TrainArgs,
    #[command(flatten)]
    pub run: RunArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub task: TaskArgs,
    /// Comma-separated k values, each 1 <= k < s*K_n + Q.
    #[arg(long, value_delimiter = ',', default_value = "5,10,15,20")]
    pub ks: Vec<usize>,
    /// Comma-separated kappa values (0 = no propagation).
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
    pub kappas: Vec<u32>,
    /// Comma-separated alpha values in [0, 1].
    #[arg(long, value_delimiter = ',', default_value = "0,0.25,0.5,0.75,1")]
    pub alphas: Vec<f64>,
    #[command(flatten)]
    pub train: TrainArgs,
    #[command(flatten)]
    pub run: RunArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct ImbalanceArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Comma-separated query counts for the first class, each in [1, total-1].
    #[arg(long, value_delimiter = ',', default_value = "1,10,20,30,40,50")]
    pub q1: Vec<usize>,
    /// Total queries per episode.
    #[arg(long, default_value_t = 100)]
    pub total: usize,
    /// Labeled samples per class, s >= 1.
    #[arg(long, default_value_t = 1)]
    pub shots: usize,
    #[command(flatten)]
    pub propagation: PropagationArgs,
    #[command(flatten)]
    pub train: TrainArgs,
    #[command(flatten)]
    pub run: RunArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub task: TaskArgs,
    #[command(flatten)]
    pub propagation: PropagationArgs,
    /// Embedding dimensions (>= 1).
    #[arg(long, default_value_t = 2)]
    pub dims: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Which episode of the seeded stream to draw.
    #[arg(long, default_value_t = 0)]
    pub run_index: u64,
    /// CSV destination (`vertex,label,x0,...`); stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn load(input: &InputArgs) -> Result<FeatureSet> {
    let format = input
        .input_format
        .unwrap_or_else(|| FeatureFormat::from_path(&input.features));
    load_feature_set(&input.features, format)
}

fn emit(out: Option<&Path>, content: &str) -> Result<()> {
    match out {
        Some(path) => fs::write(path, content).map_err(|e| Error::io(path, e)),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(content.as_bytes())
                .and_then(|_| stdout.flush())
                .map_err(|e| Error::io("<stdout>", e))
        }
    }
}

fn run_synth(args: &SynthArgs) -> Result<()> {
    let config = SyntheticConfig {
        class_count: args.classes,
        per_class: args.per_class,
        dim: args.dim,
        center_scale: args.center_scale,
        noise_sigma: args.noise,
        seed: args.seed,
    };
    let set = generate_synthetic(&config)?;
    let format = args.format.unwrap_or_else(|| FeatureFormat::from_path(&args.out));
    save_feature_set(&set, &args.out, format)?;
    eprintln!(
        "wrote {} rows x {} dims, {} classes to {}",
        set.len(),
        set.dim(),
        set.class_count(),
        args.out.display()
    );
    Ok(())
}

fn run_eval(args: &EvalArgs) -> Result<()> {
    let spec = args.task.spec()?;
    let hp = hyperparams(spec.shots, &args.propagation, &args.train)?;
    let options = args.run.options()?;
    let set = load(&args.input)?;
    let report = evaluate(&set, &spec, &hp, args.run.runs, args.run.seed, &options)?;
    let t = report.timings;
    eprintln!(
        "accuracy {:.2}% +- {:.2}% over {} runs (mean per episode: graph {:?}, propagate {:?}, train {:?}, predict {:?})",
        100.0 * report.mean_accuracy,
        100.0 * report.ci95,
        report.runs,
        t.graph,
        t.propagate,
        t.train,
        t.predict
    );
    let body = match args.output.format {
        ReportFormat::Json => to_json(&report)?,
        ReportFormat::Csv => reports_to_csv([&report])?,
    };
    emit(args.output.out.as_deref(), &body)
}

fn run_sweep(args: &SweepArgs) -> Result<()> {
    let spec = args.task.spec()?;
    let train = args.train.config()?;
    let options = args.run.options()?;
    let grid = SweepGrid {
        ks: args.ks.clone(),
        kappas: args.kappas.clone(),
        alphas: args.alphas.clone(),
    };
    for p in grid.points() {
        p.validate()?;
    }
    let set = load(&args.input)?;
    let report = sweep(&set, &spec, &grid, &train, args.run.runs, args.run.seed, &options)?;
    let body = match args.output.format {
        ReportFormat::Json => to_json(&report)?,
        ReportFormat::Csv => reports_to_csv(&report.rows)?,
    };
    emit(args.output.out.as_deref(), &body)
}

fn run_imbalance(args: &ImbalanceArgs) -> Result<()> {
    let hp = hyperparams(args.shots, &args.propagation, &args.train)?;
    let options = args.run.options()?;
    if let Some(&bad) = args.q1.iter().find(|&&q| q < 1 || q + 1 > args.total) {
        return Err(Error::validation(format!(
            "--q1 {bad} must lie in [1, {}]",
            args.total.saturating_sub(1)
        )));
    }
    let set = load(&args.input)?;
    let rows = evaluate_imbalance(
        &set,
        &args.q1,
        args.total,
        args.shots,
        &hp,
        args.run.runs,
        args.run.seed,
        &options,
    )?;
    let reports: Vec<_> = rows.into_iter().map(|(_, r)| r).collect();
    let body = match args.output.format {
        ReportFormat::Json => to_json(&serde_json::json!({ "rows": reports }))?,
        ReportFormat::Csv => reports_to_csv(&reports)?,
    };
    emit(args.output.out.as_deref(), &body)
}

fn run_embed(args: &EmbedArgs) -> Result<()> {
    let spec = args.task.spec()?;
    let prop = propagation_params(spec.shots, &args.propagation)?;
    if args.dims < 1 {
        return Err(Error::validation("--dims must be at least 1"));
    }
    let set = load(&args.input)?;
    let ep = sample_episode(&set, &spec, args.seed, args.run_index)?;
    let stacked = ndarray::concatenate(
        ndarray::Axis(0),
        &[ep.support_features.view(), ep.query_features.view()],
    )
    .map_err(|e| Error::Shape(e.to_string()))?;
    let (_, adjacency) = build_episode_graph(stacked.view(), &prop)?;
    let embedding = laplacian_embedding(&adjacency, args.dims)?;
    let labels: Vec<usize> = ep
        .support_labels
        .iter()
        .chain(&ep.query_truth)
        .map(|&y| ep.class_map[y])
        .collect();
    emit(
        args.out.as_deref(),
        &embedding_csv(embedding.coords.view(), &labels)?,
    )
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Synth(a) => run_synth(a),
        Command::Eval(a) => run_eval(a),
        Command::Sweep(a) => run_sweep(a),
        Command::Imbalance(a) => run_imbalance(a),
        Command::Embed(a) => run_embed(a),
    }
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code.
pub fn main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp
                | ErrorKind::DisplayVersion
                | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
                    let _ = e.print();
                    if e.kind() == ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand {
                        EXIT_INVALID
                    } else {
                        EXIT_OK
                    }
                }
                _ => {
                    let rendered = e.to_string();
                    let first = rendered.lines().next().unwrap_or("invalid arguments");
                    eprintln!("{first} (try --help)");
                    EXIT_INVALID
                }
            };
        }
    };
    match run(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_io() {
                EXIT_IO
            } else {
                EXIT_INVALID
            }
        }
    }
}
