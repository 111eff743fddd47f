//! `bridge`: train and evaluate the geospatially-aware land-cover
//! classifier, run leave-one-region-out and ablation protocols, and export
//! embeddings.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage/validation error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "bridge",
    about = "Dual-branch geospatial land-cover classifier: training, evaluation protocols and exports",
    long_about = "Trains a dual-branch MLP that fuses sinusoidal lat/lon positional encodings\n\
                  with tabular features and disentangles region-specific from region-invariant\n\
                  information via a supervised contrastive loss.\n\n\
                  Configuration: built-in defaults (the published EU-scale settings: 500 epochs,\n\
                  learning rate 1e-4, batch size 256, AdamW, 128-dimensional positional encoding,\n\
                  256-wide encoders, dropout 0.5) < `--config` file (`key = value` lines,\n\
                  `#` comments) < command-line flags. Any key is reachable through `--set`.",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train under the extrapolation protocol (seeded random 75/25 split)
    /// and write checkpoint, split plan, history and report to a run directory.
    Train(RunArgs),
    /// Evaluate a checkpoint on a dataset CSV and emit the metrics report.
    Evaluate(EvaluateArgs),
    /// Leave-one-region-out: train once per region fold, report per-region
    /// metrics and their unweighted mean.
    Loro(RunArgs),
    /// Run the six-row ablation grid over the three geospatial switches
    /// (lat-lon input, learned positional encoding, region supervision).
    Ablate(AblateArgs),
    /// Export per-sample vectors (invariant/specific embeddings, positional
    /// representations, or the PCA RGB view of the positional space).
    #[command(name = "export-embeddings")]
    ExportEmbeddings(ExportArgs),
    /// Generate a synthetic region-shift dataset CSV for desk-scale checks.
    Synth(SynthArgs),
}

#[derive(Args, Clone)]
struct SettingsArgs {
    /// Config file with `key = value` lines (see --help for precedence).
    #[arg(long)]
    config: Option<PathBuf>,

    /// Override any config key, repeatable: --set epochs=10 --set w_con=0.5
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// Training epochs (default: 500).
    #[arg(long)]
    epochs: Option<usize>,

    /// Mini-batch size (default: 256).
    #[arg(long)]
    batch_size: Option<usize>,

    /// AdamW learning rate (default: 1e-4).
    #[arg(long, alias = "lr")]
    learning_rate: Option<f64>,

    /// Decoupled weight decay (default: 0.01).
    #[arg(long)]
    weight_decay: Option<f64>,

    /// Contrastive temperature (default: 0.07).
    #[arg(long)]
    temperature: Option<f64>,

    /// Per-coordinate encoding length d; the full encoding is 2d
    /// (default: 64, i.e. a 128-dimensional encoding).
    #[arg(long)]
    pe_dim: Option<usize>,

    /// Multiplier applied to raw degrees before the sinusoids (default: 1).
    #[arg(long)]
    coord_scale: Option<f64>,

    /// Branch-encoder and embedding width D (default: 256).
    #[arg(long)]
    embed_dim: Option<usize>,

    /// Feed lat/lon positional information to the encoders (default: true).
    #[arg(long)]
    use_latlon: Option<bool>,

    /// Post-process the fixed encoding with the trainable MLP head
    /// (default: true).
    #[arg(long)]
    learned_pe: Option<bool>,

    /// Train the region branch and region-aware contrastive categories
    /// (default: true).
    #[arg(long)]
    use_region: Option<bool>,

    /// Class scheme: level1 (7 land-cover classes), level2 (19 crop
    /// classes) or a comma-separated name list (default: level1).
    #[arg(long)]
    classes: Option<String>,

    /// Region scheme: europe (the 8 biogeographical regions) or a
    /// comma-separated name list (default: europe).
    #[arg(long)]
    regions: Option<String>,

    /// RNG seed for splits, initialization and dropout (default: 0).
    #[arg(long)]
    seed: Option<u64>,

    /// Train fraction of the extrapolation split (default: 0.75).
    #[arg(long)]
    extrap_ratio: Option<f64>,

    /// Stratify the extrapolation split by class (default: false).
    #[arg(long)]
    stratified: Option<bool>,
}

#[derive(Args)]
struct RunArgs {
    /// Dataset CSV: header id,lat,lon,region,label,f0,...,f{F-1}.
    #[arg(long)]
    dataset: PathBuf,

    /// Parent directory for the content-addressed run directory.
    #[arg(long, default_value = "runs")]
    out: PathBuf,

    #[command(flatten)]
    settings: SettingsArgs,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Model checkpoint written by `train`.
    #[arg(long)]
    checkpoint: PathBuf,

    /// Dataset CSV to evaluate (schemes come from the checkpoint).
    #[arg(long)]
    dataset: PathBuf,

    /// Where to write the report JSON (stdout always gets a summary).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    /// Dataset CSV.
    #[arg(long)]
    dataset: PathBuf,

    /// Parent directory for the run directory.
    #[arg(long, default_value = "runs")]
    out: PathBuf,

    /// Protocol for every grid row: extrap or loro.
    #[arg(long, default_value = "extrap")]
    scenario: String,

    #[command(flatten)]
    settings: SettingsArgs,
}

#[derive(Args)]
struct ExportArgs {
    /// Model checkpoint written by `train`.
    #[arg(long)]
    checkpoint: PathBuf,

    /// Dataset CSV (schemes come from the checkpoint).
    #[arg(long)]
    dataset: PathBuf,

    /// Vector kind: invariant | specific | positional | positional-rgb.
    #[arg(long, default_value = "invariant")]
    kind: String,

    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,

    /// Number of classes (default: 3).
    #[arg(long, default_value_t = 3)]
    classes: usize,

    /// Number of regions, at most 8 (default: 2).
    #[arg(long, default_value_t = 2)]
    regions: usize,

    /// Feature width F (default: 10).
    #[arg(long, default_value_t = 10)]
    features: usize,

    /// Samples per (class, region) cell (default: 100).
    #[arg(long, default_value_t = 100)]
    per_cell: usize,

    /// Distance between adjacent class means (default: 4).
    #[arg(long, default_value_t = 4.0)]
    separation: f64,

    /// Gaussian noise standard deviation (default: 0.4).
    #[arg(long, default_value_t = 0.4)]
    noise: f64,

    /// RNG seed (default: 0).
    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Confound classes with regions: both shift the same feature axis, so
    /// several (class, region) cells collide unless geography is used.
    #[arg(long, default_value_t = false)]
    confounded: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Train(args) => commands::cmd_train(&args),
        Command::Evaluate(args) => commands::cmd_evaluate(&args),
        Command::Loro(args) => commands::cmd_loro(&args),
        Command::Ablate(args) => commands::cmd_ablate(&args),
        Command::ExportEmbeddings(args) => commands::cmd_export(&args),
        Command::Synth(args) => commands::cmd_synth(&args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(commands::CmdError::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(commands::CmdError::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
