//! `rnnmotion` command-line entry point.
//!
//! Exit codes: 0 success, 1 validation or usage error, 2 numerical failure
//! (NaN, divergence, failed gradient check), 3 I/O failure.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rnnmotion::CellKind;

#[derive(Parser, Debug)]
#[command(name = "rnnmotion", version, about = "Tanh-RNN / GRU experiments: gradient checks, delayed-sum benchmark, motion generation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Compare BPTT gradients with central finite differences on a random model.
    Gradcheck(GradcheckArgs),
    /// Train one cell on the delayed-sum benchmark.
    TrainToy(ToyArgs),
    /// Train GRU and Tanh on the delayed-sum benchmark under identical settings.
    CompareCells(CompareArgs),
    /// Train next-frame prediction on motion data (CSV or synthetic).
    TrainMotion(MotionArgs),
    /// Seed a trained motion model with real frames, then let it free-run.
    Generate(GenerateArgs),
    /// Render columns of a CSV file as an SVG line chart.
    Plot(PlotArgs),
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    #[arg(long, default_value = "gru")]
    pub cell: CellKind,
    #[arg(long, default_value_t = 3)]
    pub d_in: usize,
    #[arg(long, default_value_t = 6)]
    pub hidden: usize,
    #[arg(long, default_value_t = 2)]
    pub d_out: usize,
    #[arg(long, default_value_t = 7)]
    pub t_len: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-5)]
    pub eps: f64,
}

/// Optimizer flags shared by the training commands.
#[derive(Args, Debug, Clone)]
pub struct OptimArgs {
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Global-norm clipping threshold.
    #[arg(long)]
    pub clip: Option<f64>,
    /// Uniform init bound; defaults to 1/sqrt(hidden).
    #[arg(long)]
    pub init_scale: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub log_every: usize,
    /// Include wall-clock time in JSON reports (makes them non-reproducible).
    #[arg(long)]
    pub timing: bool,
}

#[derive(Args, Debug)]
pub struct ToyDataArgs {
    #[arg(long, default_value_t = 100)]
    pub n_seq: usize,
    #[arg(long, default_value_t = 20)]
    pub t_len: usize,
    #[arg(long, default_value_t = 7)]
    pub hidden: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long, default_value = "out")]
    pub out_dir: PathBuf,
}

#[derive(Args, Debug)]
pub struct ToyArgs {
    #[arg(long, default_value = "gru")]
    pub cell: CellKind,
    #[command(flatten)]
    pub data: ToyDataArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
}

#[derive(Args, Debug)]
pub struct CompareArgs {
    #[command(flatten)]
    pub data: ToyDataArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
}

#[derive(Args, Debug)]
pub struct MotionArgs {
    /// Training data: T×D numeric CSV, optional header row.
    #[arg(long, conflicts_with = "synthetic", required_unless_present = "synthetic")]
    pub input_csv: Option<PathBuf>,
    /// Train on the built-in synthetic quasi-periodic dataset.
    #[arg(long)]
    pub synthetic: bool,
    #[arg(long, default_value_t = 375)]
    pub frames: usize,
    #[arg(long, default_value_t = 49)]
    pub features: usize,
    #[arg(long, default_value_t = 120)]
    pub hidden: usize,
    #[arg(long, default_value_t = 3)]
    pub seed: u64,
    #[arg(long, default_value = "motion_checkpoint.json")]
    pub checkpoint_out: PathBuf,
    #[command(flatten)]
    pub optim: OptimArgs,
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Frames to seed the model with (raw units, same columns as training).
    #[arg(long, conflicts_with = "use_training_prefix", required_unless_present = "use_training_prefix")]
    pub seed_csv: Option<PathBuf>,
    /// Seed with the first frames of the training data saved next to the checkpoint.
    #[arg(long)]
    pub use_training_prefix: bool,
    /// Training data CSV; defaults to `<checkpoint stem>.train.csv`.
    #[arg(long)]
    pub training_csv: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    pub seed_frames: usize,
    #[arg(long, default_value_t = 300)]
    pub gen_len: usize,
    /// Ground truth to overlay on the generated average trace.
    #[arg(long)]
    pub reference_csv: Option<PathBuf>,
    /// Recorded for provenance; generation itself is deterministic.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "generated")]
    pub out_prefix: PathBuf,
}

#[derive(Args, Debug)]
pub struct PlotArgs {
    #[arg(long)]
    pub csv: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Comma-separated column names (header) or 0-based indices; default all.
    #[arg(long, value_delimiter = ',')]
    pub columns: Vec<String>,
    /// Plot the per-row mean across the selected columns instead.
    #[arg(long)]
    pub average: bool,
    #[arg(long)]
    pub log_y: bool,
    #[arg(long, default_value = "")]
    pub title: String,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();

    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };

    let result = match cli.command {
        Command::Gradcheck(a) => commands::gradcheck(&a),
        Command::TrainToy(a) => commands::train_toy(&a),
        Command::CompareCells(a) => commands::compare(&a),
        Command::TrainMotion(a) => commands::train_motion(&a),
        Command::Generate(a) => commands::generate(&a),
        Command::Plot(a) => commands::plot(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(e.exit_code())
        }
    }
}
