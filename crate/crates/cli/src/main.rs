//! `flowgan`: trains and evaluates flow models under likelihood, adversarial
//! and hybrid objectives from a `key = value` experiment file.

mod commands;
mod plot;
mod report;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::commands::{CliResult, Context};

#[derive(Parser)]
#[command(name = "flowgan", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration file.
    #[arg(long, short)]
    config: PathBuf,
    /// Overrides `out_dir` from the configuration.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct WithModel {
    #[command(flatten)]
    common: Common,
    /// Checkpoint to evaluate; defaults to `checkpoint` from the
    /// configuration, then `<out_dir>/final.ckpt`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model, writing metrics.csv and checkpoints.
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Exact negative log-likelihood on each split.
    EvalNll(WithModel),
    /// Gaussian mixture baseline centered on the training set.
    EvalGmm(Common),
    /// Kernel density estimate from model samples, next to the exact value.
    EvalKde(WithModel),
    /// Annealed importance sampling estimates next to the exact values.
    EvalAis(WithModel),
    /// Singular values of the generator Jacobian.
    Spectral(WithModel),
    /// Draw samples from the model.
    Sample(WithModel),
    /// Mode and inception scores of model samples.
    Score(WithModel),
    /// Overlay report CSVs of one kind in an SVG chart.
    Plot {
        /// metrics.csv, spectral.csv, kde.csv, gmm.csv or ais.csv files.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, short)]
        output: PathBuf,
        /// Column to plot instead of the default for the report kind.
        #[arg(long)]
        y: Option<String>,
        #[arg(long)]
        title: Option<String>,
    },
}

fn with_model(args: WithModel, f: fn(&Context) -> CliResult) -> CliResult {
    f(&Context::load(
        &args.common.config,
        args.common.out_dir,
        args.checkpoint,
    )?)
}

fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::Train { common, resume } => {
            commands::train(&Context::load(&common.config, common.out_dir, None)?, resume.as_deref())
        }
        Command::EvalNll(a) => with_model(a, commands::eval_nll),
        Command::EvalGmm(c) => commands::eval_gmm(&Context::load(&c.config, c.out_dir, None)?),
        Command::EvalKde(a) => with_model(a, commands::eval_kde),
        Command::EvalAis(a) => with_model(a, commands::eval_ais),
        Command::Spectral(a) => with_model(a, commands::spectral),
        Command::Sample(a) => with_model(a, commands::sample),
        Command::Score(a) => with_model(a, commands::score),
        Command::Plot {
            inputs,
            output,
            y,
            title,
        } => plot::plot(&inputs, &output, y.as_deref(), title.as_deref()),
    }
}

/// Sizes the rayon pool from `FLOWGAN_THREADS`; 0 or unset lets rayon choose.
fn init_threads() -> CliResult {
    let n = match std::env::var("FLOWGAN_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map_err(|_| format!("FLOWGAN_THREADS must be a non-negative integer, got {v:?}"))?,
        Err(_) => 0,
    };
    if n > 0 {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match init_threads().and_then(|()| run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("flowgan: error: {e}");
            ExitCode::FAILURE
        }
    }
}
