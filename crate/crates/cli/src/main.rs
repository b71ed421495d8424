//! Command-line pipeline for sparse variational GP classification: data
//! preparation, training, evaluation, kernel × M sweeps and the oracle
//! verification suite.

mod commands;
mod verify;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "svgp", version, about = "Sparse variational GP classifier for imbalanced tabular data")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a model: load CSV, standardize, split, pick inducing points by
    /// K-means over the inverse dataset, optimize the ELBO.
    Train(TrainArgs),
    /// Evaluate a saved model on the test split of a dataset.
    Eval(EvalArgs),
    /// Train and evaluate every kernel × M combination into sweep.tsv.
    Sweep(SweepArgs),
    /// Run the oracle equivalence suite (bounds, gradients, KL identities).
    Verify,
}

fn parse_positive_m(s: &str) -> Result<usize, String> {
    let m: usize = s.parse().map_err(|_| format!("{s:?} is not an integer"))?;
    if m == 0 {
        return Err("number of inducing points must be at least 1".to_string());
    }
    Ok(m)
}

#[derive(Args, Clone)]
struct DataArgs {
    /// Path to the CSV file (header row, numeric features, 0/1 label column)
    #[arg(long)]
    data: PathBuf,
    /// Name of the label column
    #[arg(long, default_value = "Class")]
    label_column: String,
    /// Fraction of each class assigned to the training split
    #[arg(long, default_value_t = 0.8)]
    train_fraction: f64,
    /// Fraud fraction of the rebalanced test set
    #[arg(long, default_value_t = 0.15)]
    test_fraud_ratio: f64,
}

#[derive(Args, Clone)]
struct ModelArgs {
    /// Kernel family
    #[arg(long, default_value = "rbf", value_parser = ["rbf", "matern32", "matern32+white"])]
    kernel: String,
    /// Kernel lengthscale
    #[arg(long, default_value_t = 1.0)]
    lengthscale: f64,
    /// Kernel signal variance
    #[arg(long, default_value_t = 2.0)]
    signal_variance: f64,
    /// White-kernel variance (matern32+white only)
    #[arg(long, default_value_t = 1.0)]
    white_variance: f64,
}

#[derive(Args, Clone)]
struct OptArgs {
    /// Minibatch size
    #[arg(long, default_value_t = 100)]
    batch_size: usize,
    /// Number of passes over the training set
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    /// Optimizer
    #[arg(long, default_value = "adam", value_parser = ["adam", "sgd"])]
    optimizer: String,
    /// Learning rate (default: 0.01 for adam, 0.001 for sgd)
    #[arg(long)]
    lr: Option<f64>,
    /// Seed for the split, the inverse dataset, K-means and minibatching
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Keep the inducing inputs at their K-means initialization
    #[arg(long)]
    freeze_z: bool,
    /// Also optimize kernel / likelihood log-hyperparameters
    #[arg(long)]
    train_hyperparams: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    /// Number of inducing points
    #[arg(long, value_parser = parse_positive_m)]
    m: usize,
    #[command(flatten)]
    opt: OptArgs,
    /// Output directory for model.gpc and trace.tsv
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Path to a model.gpc written by `svgp train`
    #[arg(long, default_value = "model.gpc")]
    model: PathBuf,
    /// Path to the CSV file
    #[arg(long)]
    data: PathBuf,
    /// Label column (default: the one stored in the model)
    #[arg(long)]
    label_column: Option<String>,
    /// Train fraction (default: the one stored in the model)
    #[arg(long)]
    train_fraction: Option<f64>,
    /// Test fraud ratio (default: the one stored in the model)
    #[arg(long)]
    test_fraud_ratio: Option<f64>,
    /// Split seed (default: the one stored in the model)
    #[arg(long)]
    seed: Option<u64>,
    /// Decision threshold on the predictive probability
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    /// Output directory for report.tsv
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Comma-separated kernel list
    #[arg(long, default_value = "rbf,matern32,matern32+white")]
    kernel: String,
    /// Kernel lengthscale
    #[arg(long, default_value_t = 1.0)]
    lengthscale: f64,
    /// Kernel signal variance
    #[arg(long, default_value_t = 2.0)]
    signal_variance: f64,
    /// White-kernel variance (matern32+white only)
    #[arg(long, default_value_t = 1.0)]
    white_variance: f64,
    /// Comma-separated list of inducing-point counts
    #[arg(long, default_value = "50,100,150")]
    m: String,
    #[command(flatten)]
    opt: OptArgs,
    /// Decision threshold on the predictive probability
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    /// Output directory for sweep.tsv
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Number of sweep cells to train concurrently
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Train(args) => commands::cmd_train(&args),
        Cmd::Eval(args) => commands::cmd_eval(&args),
        Cmd::Sweep(args) => commands::cmd_sweep(&args),
        Cmd::Verify => return verify::cmd_verify(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
