//! `hqmm`: train, evaluate, sample and compare hidden quantum Markov models.
//!
//! Exit codes: 0 on success, 1 on a runtime or numerical failure (including a
//! failed gradient check), 2 on a usage or input error.

mod commands;
mod failure;
mod input;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use failure::Failure;

#[derive(Debug, Parser)]
#[command(
    name = "hqmm",
    version,
    about = "Learn hidden quantum Markov models on the Stiefel manifold"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit a model to a dataset and write it as a model file.
    Train(TrainArgs),
    /// Report per-sequence description accuracy of a saved model.
    Eval(EvalArgs),
    /// Classify labeled sequences with one model per label.
    Classify(ClassifyArgs),
    /// Compare the analytic loss gradient with finite differences.
    Gradcheck(GradcheckArgs),
    /// Draw sequences from a saved model.
    Sample(SampleArgs),
    /// Draw a random ground-truth model and sample a dataset from it.
    Generate(GenerateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Kind {
    Hqmm,
    Hmm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DataFormat {
    /// NDJSON if the first record starts with `{`, splice otherwise.
    Auto,
    /// One `{"label"?, "symbols"}` record per line.
    Ndjson,
    /// UCI or KEEL splice-junction file.
    Splice,
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Dataset file.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value_t = DataFormat::Auto)]
    format: DataFormat,
    /// For splice files: delete ambiguous bases instead of dropping the record.
    #[arg(long)]
    strip_ambiguous: bool,
}

/// Model and optimizer settings shared by `train` and `classify --folds`.
#[derive(Debug, Args)]
struct ModelArgs {
    #[arg(long, value_enum, default_value_t = Kind::Hqmm)]
    kind: Kind,
    /// Hidden-state (system) dimension.
    #[arg(long)]
    n: Option<usize>,
    /// Environment dimension of each Kraus block [default: 1].
    #[arg(long)]
    w: Option<usize>,
    /// Initial step size [default: 0.75].
    #[arg(long)]
    tau: Option<f64>,
    /// Step decay per epoch [default: 0.92].
    #[arg(long)]
    alpha: Option<f64>,
    /// Momentum [default: 0.9].
    #[arg(long)]
    beta: Option<f64>,
    /// Minibatches per epoch [default: 7].
    #[arg(long, conflicts_with = "batch_size")]
    batches: Option<usize>,
    /// Sequences per minibatch; sets the number of batches.
    #[arg(long)]
    batch_size: Option<usize>,
    /// Training epochs [default: 60].
    #[arg(long)]
    epochs: Option<usize>,
    /// Baum–Welch iteration cap for `--kind hmm`.
    #[arg(long, default_value_t = 200)]
    max_iter: usize,
    /// Cut training sequences into non-overlapping windows of this length.
    #[arg(long)]
    window: Option<usize>,
    /// Leading symbols of each sequence that are not scored.
    #[arg(long, default_value_t = 0)]
    burn_in: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Independent initializations [default: 1 for hqmm, 5 for hmm].
    #[arg(long)]
    restarts: Option<usize>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    /// Alphabet size [default: the dataset's].
    #[arg(long)]
    s: Option<usize>,
    /// Train only on sequences with this label (name or index).
    #[arg(long)]
    label: Option<String>,
    /// Fraction of sequences held out for validation.
    #[arg(long, default_value_t = 0.0)]
    val_split: f64,
    /// Model file to write.
    #[arg(long)]
    out: PathBuf,
    /// History CSV [default: <out>.history.csv].
    #[arg(long)]
    history: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 0)]
    burn_in: usize,
    /// Cut sequences into windows of this length before scoring.
    #[arg(long)]
    window: Option<usize>,
    /// Write per-sequence log-likelihood and DA to this CSV file.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ClassifyArgs {
    #[command(flatten)]
    data: DataArgs,
    /// One model file per label, in label order.
    #[arg(long, num_args = 1.., value_delimiter = ',', conflicts_with = "folds", required_unless_present = "folds")]
    models: Vec<PathBuf>,
    /// Stratified cross-validation: train one model per label in each fold.
    #[arg(long, value_parser = clap::value_parser!(u64).range(2..))]
    folds: Option<u64>,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u64).range(1..))]
    n: u64,
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u64).range(1..))]
    s: u64,
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u64).range(1..))]
    w: u64,
    /// Length of each sampled sequence.
    #[arg(long, default_value_t = 8, value_parser = clap::value_parser!(u64).range(1..))]
    len: u64,
    #[arg(long, default_value_t = 25, value_parser = clap::value_parser!(u64).range(1..))]
    trials: u64,
    /// Finite-difference step.
    #[arg(long, default_value_t = 1e-5, value_parser = positive_float)]
    h: f64,
    #[arg(long, default_value_t = 0)]
    burn_in: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Pass iff every trial's relative error is below this.
    #[arg(long, default_value_t = 1e-5, value_parser = positive_float)]
    tolerance: f64,
    /// Perturb the analytic gradient (negative control for tests).
    #[arg(long, hide = true)]
    sabotage: bool,
}

#[derive(Debug, Args)]
struct SampleArgs {
    #[arg(long)]
    model: PathBuf,
    /// Number of sequences.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    num: u64,
    /// Length of each sequence.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    len: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Dataset file to write (NDJSON plus a .meta.json sidecar).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct GenerateArgs {
    #[arg(long, value_enum)]
    kind: Kind,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    n: u64,
    #[arg(long, value_parser = clap::value_parser!(u64).range(2..))]
    s: u64,
    /// Environment dimension (hqmm only).
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    w: u64,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    num: u64,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    len: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Dirichlet concentration of HMM columns.
    #[arg(long, default_value_t = 0.5, value_parser = positive_float)]
    concentration: f64,
    /// Dataset file to write.
    #[arg(long)]
    out: PathBuf,
    /// Also save the generating model here.
    #[arg(long)]
    model_out: Option<PathBuf>,
}

fn positive_float(text: &str) -> Result<f64, String> {
    match text.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(v),
        Ok(v) => Err(format!("must be a positive finite number, got {v}")),
        Err(e) => Err(e.to_string()),
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Train(args) => commands::train(args),
        Command::Eval(args) => commands::eval(args),
        Command::Classify(args) => commands::classify(args),
        Command::Gradcheck(args) => commands::gradcheck(args),
        Command::Sample(args) => commands::sample(args),
        Command::Generate(args) => commands::generate(args),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {}", failure.message);
            ExitCode::from(failure.code)
        }
    }
}
