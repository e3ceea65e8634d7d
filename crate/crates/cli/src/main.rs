//! `pcsr`: generate shifted datasets, pretrain a source model, adapt it to an
//! unlabeled target, and run parameter sweeps.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "pcsr",
    version,
    about = "Source-free domain adaptation with polycentric pseudo-labels"
)]
struct Cli {
    /// Flat key=value run configuration.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Main output file (directory for `gen`).
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,
    /// JSON-lines metrics file written by `adapt`.
    #[arg(long, global = true, value_name = "PATH")]
    metrics: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a source/target pair of feature files.
    Gen(GenArgs),
    /// Train a source model on labeled source features.
    Pretrain(DataArgs),
    /// Adapt a source model to unlabeled target features.
    Adapt(AdaptArgs),
    /// Pseudo-label a feature file with a model and dump the class centers.
    Pseudolabel(PseudolabelArgs),
    /// Score a model on labeled features.
    Eval(DataArgs),
    /// Pretrain and adapt once per seed for each value of one parameter.
    Sweep(SweepArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TaskArg {
    TwoMoons,
    Blobs,
    /// The six-class blobs benchmark with its fixed shift and imbalance.
    Benchmark,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, value_enum)]
    task: TaskArg,
    #[arg(long, allow_negative_numbers = true)]
    rotation: Option<f64>,
    /// Target translation in the rotation plane, `x,y`.
    #[arg(long, value_delimiter = ',', num_args = 2, allow_negative_numbers = true)]
    translation: Option<Vec<f64>>,
    #[arg(long)]
    noise: Option<f64>,
    /// Target class proportions; also sets the class count for blobs.
    #[arg(long, value_delimiter = ',')]
    proportions: Option<Vec<f64>>,
    #[arg(long)]
    classes: Option<usize>,
    /// Input dimension for blobs.
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    n_source: Option<usize>,
    #[arg(long)]
    n_target: Option<usize>,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Feature file; overrides `source` (pretrain) or `target` (eval).
    #[arg(long, value_name = "PATH")]
    data: Option<PathBuf>,
    /// Checkpoint; overrides `model`.
    #[arg(long, value_name = "PATH")]
    model: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AdaptArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Loss terms to keep, e.g. `im,pcc`; the rest are switched off.
    #[arg(long, value_name = "TERMS")]
    ablate: Option<String>,
}

#[derive(Debug, Args)]
pub struct PseudolabelArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Centers per class; overrides `centers_per_class`.
    #[arg(short = 'P', long)]
    centers: Option<usize>,
    /// Top-M selection ratio; overrides `ratio`.
    #[arg(short = 'r', long)]
    ratio: Option<f64>,
    /// Where to write the centers; defaults to `<out>.centers`.
    #[arg(long, value_name = "PATH")]
    centers_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ParamArg {
    #[value(name = "P")]
    P,
    Beta,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long, value_enum)]
    param: ParamArg,
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<f64>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
