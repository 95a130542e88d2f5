//! `bmvr`: train, evaluate and benchmark the place recognition system.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 configuration error.

mod config;

use std::fmt;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use bmvr::{
    augment_pipeline, bench_inference, data::write_pgm, evaluate, load_system, load_traversal,
    save_system, synthetic_traversal, train_system, Rng,
};
use config::RunConfig;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Runtime(String),
}

impl CliError {
    fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    fn code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<bmvr::Error> for CliError {
    fn from(e: bmvr::Error) -> Self {
        match e {
            bmvr::Error::Config(_) => CliError::Config(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(name = "bmvr", version, about = "Lightweight visual place recognition")]
struct Cli {
    /// Cap the worker thread pool (default: one worker per core).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a system from one traversal directory and write a model file.
    Train(TrainArgs),
    /// Evaluate a model: precision-recall curve, AUC and accuracy.
    Eval(EvalArgs),
    /// Measure single-query inference latency and model size.
    Bench(BenchArgs),
    /// Write before/after augmentation image pairs for inspection.
    AugmentPreview(PreviewArgs),
    /// Generate a synthetic traversal of filtered-noise frames.
    Synth(SynthArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Key/value config file; flags below override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory with the training traversal images.
    #[arg(long)]
    train_dir: Option<PathBuf>,
    /// Output model file path.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Directory for the training report files.
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// First-layer neuron count.
    #[arg(long)]
    neurons: Option<usize>,
    #[arg(long)]
    baseline_dropout: Option<f64>,
    #[arg(long)]
    baseline_epochs: Option<usize>,
    /// Number of baseline classifiers.
    #[arg(long)]
    models: Option<usize>,
    /// Merger convolution width.
    #[arg(long)]
    kernel_width: Option<usize>,
    #[arg(long)]
    merger_dropout: Option<f64>,
    #[arg(long)]
    merger_epochs: Option<usize>,
    /// Augmented copies per frame in the merger training set.
    #[arg(long)]
    copies_per_frame: Option<usize>,
    /// Master seed; all randomness derives from it.
    #[arg(long)]
    seed: Option<u64>,
    /// Keep latent weights in the model file for resumable training.
    #[arg(long)]
    save_latents: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum DatasetProfile {
    /// Aligned train rides; +-1 frame counts as correct.
    Nordland,
    /// Handheld campus footage; +-2 frames.
    Gardens,
    /// Car traversals; +-10 frames.
    Robotcar,
}

impl DatasetProfile {
    fn tolerance(self) -> usize {
        match self {
            DatasetProfile::Nordland => 1,
            DatasetProfile::Gardens => 2,
            DatasetProfile::Robotcar => 10,
        }
    }
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Model file to evaluate.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Reference traversal (the one the model was trained on).
    #[arg(long, value_name = "DIR")]
    r#ref: Option<PathBuf>,
    /// Query traversal, aligned frame-for-frame with the reference.
    #[arg(long, value_name = "DIR")]
    query: Option<PathBuf>,
    /// Ground-truth tolerance in frames; overrides the profile.
    #[arg(long)]
    tolerance: Option<usize>,
    /// Dataset profile supplying the customary tolerance.
    #[arg(long, value_enum)]
    profile: Option<DatasetProfile>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    model: PathBuf,
    /// Traversal directory supplying query images.
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value_t = 1000)]
    iters: usize,
    #[arg(long, default_value_t = 100)]
    warmup: usize,
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Args)]
struct PreviewArgs {
    /// Traversal directory to draw frames from.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output_dir: PathBuf,
    /// Number of before/after pairs to write.
    #[arg(long, default_value_t = 8)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    output_dir: PathBuf,
    #[arg(long, default_value_t = 20)]
    frames: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.code());
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(threads) = cli.threads {
        if threads == 0 {
            return Err(CliError::config("--threads must be >= 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| CliError::Runtime(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Bench(args) => cmd_bench(args),
        Command::AugmentPreview(args) => cmd_augment_preview(args),
        Command::Synth(args) => cmd_synth(args),
    }
}

fn load_config(path: &Option<PathBuf>) -> Result<RunConfig, CliError> {
    match path {
        Some(p) => RunConfig::from_file(p),
        None => Ok(RunConfig::default()),
    }
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))
}

fn write_file(path: &Path, content: &str) -> Result<(), CliError> {
    std::fs::write(path, content)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

fn cmd_train(args: TrainArgs) -> Result<(), CliError> {
    let flags = RunConfig {
        train_dir: args.train_dir,
        model_path: args.model,
        output_dir: args.output_dir,
        neurons: args.neurons,
        baseline_dropout: args.baseline_dropout,
        baseline_epochs: args.baseline_epochs,
        models: args.models,
        kernel_width: args.kernel_width,
        merger_dropout: args.merger_dropout,
        merger_epochs: args.merger_epochs,
        copies_per_frame: args.copies_per_frame,
        seed: args.seed,
        save_latents: args.save_latents.then_some(true),
        ..RunConfig::default()
    };
    let cfg = load_config(&args.config)?.overridden_by(flags);
    let train_dir = cfg.require("train_dir")?;
    let out_dir = cfg.output_dir();
    ensure_dir(&out_dir)?;
    let model_path = cfg
        .model_path
        .clone()
        .unwrap_or_else(|| out_dir.join("model.bmvr"));

    let traversal = load_traversal(&train_dir)?;
    println!(
        "training on {} ({} frames)",
        traversal.name(),
        traversal.len()
    );
    let (system, report) = train_system(&traversal, &cfg.system_config())?;
    let bytes = save_system(&system, &model_path)?;

    write_file(&out_dir.join("report.kv"), &report.to_kv())?;
    write_file(&out_dir.join("report.txt"), &report.to_table())?;
    print!("{}", report.to_table());
    if report.merger_training_degenerate {
        eprintln!("warning: merger training degenerate (no disagreement in the augmented set)");
    }
    println!("model written to {} ({bytes} bytes)", model_path.display());
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<(), CliError> {
    let flags = RunConfig {
        model_path: args.model,
        ref_dir: args.r#ref,
        query_dir: args.query,
        tolerance: args.tolerance,
        output_dir: args.output_dir,
        ..RunConfig::default()
    };
    let cfg = load_config(&args.config)?.overridden_by(flags);
    let model_path = cfg.require("model_path")?;
    let ref_dir = cfg.require("ref_dir")?;
    let query_dir = cfg.require("query_dir")?;
    let tolerance = cfg
        .tolerance
        .or(args.profile.map(DatasetProfile::tolerance))
        .unwrap_or(1);
    let out_dir = cfg.output_dir();
    ensure_dir(&out_dir)?;

    let system = load_system(&model_path)?;
    let reference = load_traversal(&ref_dir)?;
    let query = load_traversal(&query_dir)?;
    let eval = evaluate(&system, &reference, &query, tolerance)?;

    write_file(&out_dir.join("pr.csv"), &eval.pr.to_csv())?;
    write_file(&out_dir.join("summary.kv"), &eval.to_kv(tolerance))?;
    println!(
        "queries: {}  tolerance: {tolerance}  accuracy: {:.4}  auc: {:.4}{}",
        eval.results.len(),
        eval.accuracy,
        eval.pr.auc,
        if eval.pr.degenerate { "  (degenerate: no correct match)" } else { "" }
    );
    Ok(())
}

fn cmd_bench(args: BenchArgs) -> Result<(), CliError> {
    let system = load_system(&args.model)?;
    let traversal = load_traversal(&args.dataset)?;
    let report = bench_inference(&system, traversal.frames(), args.warmup, args.iters)?;
    print!("{}", report.to_table());
    let out_dir = args.output_dir.unwrap_or_else(|| PathBuf::from("."));
    ensure_dir(&out_dir)?;
    write_file(&out_dir.join("bench.kv"), &report.to_kv())?;
    Ok(())
}

fn cmd_augment_preview(args: PreviewArgs) -> Result<(), CliError> {
    let traversal = load_traversal(&args.input)?;
    ensure_dir(&args.output_dir)?;
    let mut rng = Rng::new(args.seed);
    for i in 0..args.count {
        let frame = traversal.frame(i % traversal.len());
        let augmented = augment_pipeline(frame, &mut rng);
        write_pgm(&args.output_dir.join(format!("{i:03}_before.pgm")), frame)?;
        write_pgm(&args.output_dir.join(format!("{i:03}_after.pgm")), &augmented)?;
    }
    println!(
        "wrote {} before/after pairs to {}",
        args.count,
        args.output_dir.display()
    );
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> Result<(), CliError> {
    if args.frames == 0 {
        return Err(CliError::config("--frames must be >= 1"));
    }
    ensure_dir(&args.output_dir)?;
    let traversal = synthetic_traversal(args.frames, args.seed);
    for (i, frame) in traversal.frames().iter().enumerate() {
        write_pgm(&args.output_dir.join(format!("frame_{i:04}.pgm")), frame)?;
    }
    println!(
        "wrote {} synthetic frames to {}",
        args.frames,
        args.output_dir.display()
    );
    Ok(())
}
