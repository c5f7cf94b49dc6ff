mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::Arm;

/// Cox mixtures with heterogeneous effects.
///
/// Log verbosity is read from the CMHE_LOG environment variable
/// (e.g. `CMHE_LOG=info`); the default is `warn`.
#[derive(Parser, Debug)]
#[command(name = "cmhe", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic benchmark with its ground truth.
    Simulate(SimulateArgs),
    /// Fit a model by stochastic EM.
    Train(TrainArgs),
    /// Time-dependent concordance, Brier scores and mean survival curves.
    Evaluate(EvaluateArgs),
    /// Rank phenogroups on a training split and report their effects on a test split.
    Phenotype(PhenotypeArgs),
    /// Per-sample survival probabilities.
    Predict(PredictArgs),
}

#[derive(Args, Debug, Default)]
pub struct ColumnArgs {
    #[arg(long)]
    time_col: Option<String>,
    #[arg(long)]
    event_col: Option<String>,
    #[arg(long)]
    treatment_col: Option<String>,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// JSON config (or a manifest from an earlier run); flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    effect_magnitude: Option<f64>,
    #[arg(long)]
    p_event: Option<f64>,
    /// Also write train/test files, with this fraction in the training split.
    #[arg(long)]
    train_fraction: Option<f64>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[command(flatten)]
    columns: ColumnArgs,
    /// Where to write the model JSON.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Per-epoch CSV log.
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    /// Comma-separated hidden widths; `none` for a linear encoder.
    #[arg(long)]
    hidden: Option<String>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    /// Fixed spline penalty instead of selecting it by GCV.
    #[arg(long)]
    smoothing: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    validation_fraction: Option<f64>,
    #[arg(long)]
    no_standardize: bool,
    #[arg(long)]
    freeze_omega: bool,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[command(flatten)]
    columns: ColumnArgs,
    /// Comma-separated horizons; default is the event-time quartiles.
    #[arg(long, value_delimiter = ',')]
    horizons: Option<Vec<f64>>,
    /// Where to write the metrics JSON.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Where to write the per-arm mean survival curves.
    #[arg(long)]
    curves: Option<PathBuf>,
    #[arg(long)]
    curve_points: Option<usize>,
    /// Also estimate the RMST average treatment effect up to this time.
    #[arg(long)]
    ate_horizon: Option<f64>,
    #[arg(long)]
    bootstrap: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct PhenotypeArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    /// Split used to rank the phenogroups.
    #[arg(long)]
    train: Option<PathBuf>,
    /// Split on which the effects are reported.
    #[arg(long)]
    test: Option<PathBuf>,
    #[command(flatten)]
    columns: ColumnArgs,
    #[arg(long)]
    target_fraction: Option<f64>,
    /// RMST restriction time; default is the 0.75 quantile of training event times.
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long)]
    bootstrap: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Manifest from `simulate`; switches to the oracle counterfactual curves.
    #[arg(long, requires_all = ["train_truth", "test_truth"])]
    oracle_manifest: Option<PathBuf>,
    #[arg(long)]
    train_truth: Option<PathBuf>,
    #[arg(long)]
    test_truth: Option<PathBuf>,
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    assignments: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[command(flatten)]
    columns: ColumnArgs,
    #[arg(long, value_enum)]
    arm: Option<Arm>,
    /// Comma-separated ascending times.
    #[arg(long, value_delimiter = ',')]
    times: Option<Vec<f64>>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CMHE_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => commands::simulate(a),
        Command::Train(a) => commands::train(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Phenotype(a) => commands::phenotype(a),
        Command::Predict(a) => commands::predict(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
