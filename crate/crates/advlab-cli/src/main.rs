//! `advlab` — attack generation, purification-defense training, and the
//! evaluation protocols, glued over run directories.

mod commands;
mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "advlab",
    about = "Adversarial attacks, a GAN purification defense, and a reproducible evaluation harness",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every command.
#[derive(Args, Debug, Clone, serde::Serialize, serde::Deserialize)]
struct Common {
    /// Run directory; outputs and the effective config land here.
    #[arg(long)]
    run_dir: Option<PathBuf>,
    /// Reuse a non-empty run directory.
    #[arg(long, default_value_t = false)]
    #[serde(default)]
    overwrite: bool,
    /// Optional JSON config file; explicit flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Root directory holding dataset files (or set ADVLAB_DATA_ROOT).
    #[arg(long)]
    data_root: Option<PathBuf>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a reference classifier and record its clean test accuracy.
    TrainClassifier(commands::TrainClassifierArgs),
    /// Attack a dataset split and persist (adversarial, clean) pairs.
    Attack(commands::AttackArgs),
    /// Train the purification defense on saved adversarial pairs.
    TrainDefense(commands::TrainDefenseArgs),
    /// Run a tensor file through a defense checkpoint.
    Reconstruct(commands::ReconstructArgs),
    /// Defense table: clean / attacked / defended rows per attack.
    Evaluate(commands::EvaluateArgs),
    /// Robustness sweep over attack iterations and epsilon.
    Sweep(commands::SweepArgs),
    /// Apply a defense trained on one model to other target models.
    Transfer(commands::TransferArgs),
    /// Generalizability matrix of per-attack defense models.
    Matrix(commands::MatrixArgs),
    /// Residual-block ablation arms under a fixed budget.
    Ablate(commands::AblateArgs),
    /// Export a tensor file as 8-bit PNGs (quantized, non-default path).
    ExportPng(commands::ExportPngArgs),
    /// Chain the desk-scale table, matrix, metric, and sweep protocols.
    MakePaperFigures(commands::MakePaperFiguresArgs),
}

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match cli.command {
        Command::TrainClassifier(args) => commands::train_classifier(args),
        Command::Attack(args) => commands::attack(args),
        Command::TrainDefense(args) => commands::train_defense(args),
        Command::Reconstruct(args) => commands::reconstruct(args),
        Command::Evaluate(args) => commands::evaluate(args),
        Command::Sweep(args) => commands::sweep(args),
        Command::Transfer(args) => commands::transfer(args),
        Command::Matrix(args) => commands::matrix(args),
        Command::Ablate(args) => commands::ablate(args),
        Command::ExportPng(args) => commands::export_png(args),
        Command::MakePaperFigures(args) => commands::make_paper_figures(args),
    }
}
