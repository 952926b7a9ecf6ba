//! Command line for masked-graph pretraining: pretrain, probe, ablate,
//! sweep, plot-embeddings, plus dataset utilities.
//!
//! Exit codes: 0 success, 2 usage/config error, 3 runtime/numerical error.

mod commands;
mod dataset;
mod manifest;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "magpie",
    about = "Self-supervised graph pretraining by masked reconstruction",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Training config (JSON, TrainConfig schema; unknown keys are errors).
    #[arg(long)]
    config: PathBuf,
    /// Dataset name (`sbm`) or path to a directory in the native format.
    #[arg(long, default_value = "sbm")]
    dataset: String,
    /// Output directory (one manifest per run).
    #[arg(long)]
    out: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overwrite an existing run directory instead of refusing.
    #[arg(long)]
    force: bool,
    /// Treat the dataset's edge list as directed arcs.
    #[arg(long)]
    directed: bool,
    /// Replace file features with one-hot degrees capped at this value.
    #[arg(long, value_name = "MAX_DEGREE")]
    degree_features: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Pretrain on a dataset; writes checkpoint.bin and metrics.csv.
    Pretrain(RunArgs),
    /// Linear-probe a checkpoint on a labeled dataset.
    Probe {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "sbm")]
        dataset: String,
        #[arg(long)]
        out: PathBuf,
        /// Number of probe repetitions.
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        #[arg(long)]
        force: bool,
        #[arg(long)]
        directed: bool,
        #[arg(long, value_name = "MAX_DEGREE")]
        degree_features: Option<usize>,
    },
    /// Component ablations: pretrain+probe per removed component.
    Ablate {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated subset of AM,SR,BS,CA.
        #[arg(long, value_delimiter = ',')]
        components: Vec<String>,
    },
    /// Mask-rate sweep with per-value pretrain+probe and a curve plot.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// Swept parameter: p_f or p_s.
        #[arg(long)]
        param: String,
        /// Comma-separated rate values.
        #[arg(long, value_delimiter = ',')]
        values: Vec<f64>,
    },
    /// Project checkpoint embeddings to 2D, colored by class.
    PlotEmbeddings {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "sbm")]
        dataset: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
        #[arg(long)]
        directed: bool,
        #[arg(long, value_name = "MAX_DEGREE")]
        degree_features: Option<usize>,
    },
    /// Materialize a synthetic block-model dataset in the native format.
    GenSbm {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 3)]
        blocks: usize,
        #[arg(long, default_value_t = 100)]
        nodes_per_block: usize,
        #[arg(long, default_value_t = 0.10)]
        p_in: f64,
        #[arg(long, default_value_t = 0.01)]
        p_out: f64,
        #[arg(long, default_value_t = 16)]
        feature_dim: usize,
        #[arg(long, default_value_t = 1.0)]
        separation: f64,
        #[arg(long, default_value_t = 1.0)]
        noise: f64,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        force: bool,
    },
    /// Convert a public citation-network distribution to the native format.
    ConvertCora {
        #[arg(long)]
        content: PathBuf,
        #[arg(long)]
        cites: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
}

/// Failure carrying its exit class.
pub enum CliError {
    /// Bad invocation, config, or input data: exit 2.
    Usage(String),
    /// Failure during a run: exit 3.
    Runtime(String),
}

impl CliError {
    fn usage(e: impl std::fmt::Display) -> Self {
        CliError::Usage(e.to_string())
    }

    fn runtime(e: impl std::fmt::Display) -> Self {
        CliError::Runtime(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Pretrain(args) => commands::pretrain(&args),
        Command::Probe {
            checkpoint,
            dataset,
            out,
            seeds,
            force,
            directed,
            degree_features,
        } => commands::probe(
            &checkpoint,
            &dataset,
            &out,
            seeds,
            force,
            directed,
            degree_features,
        ),
        Command::Ablate { run, components } => commands::ablate(&run, &components),
        Command::Sweep { run, param, values } => commands::sweep(&run, &param, &values),
        Command::PlotEmbeddings {
            checkpoint,
            dataset,
            out,
            force,
            directed,
            degree_features,
        } => commands::plot_embeddings(
            &checkpoint,
            &dataset,
            &out,
            force,
            directed,
            degree_features,
        ),
        Command::GenSbm {
            out,
            blocks,
            nodes_per_block,
            p_in,
            p_out,
            feature_dim,
            separation,
            noise,
            seed,
            force,
        } => commands::gen_sbm(
            &out,
            magpie::datasets::SbmParams {
                blocks,
                nodes_per_block,
                p_in,
                p_out,
                feature_dim,
                class_mean_separation: separation,
                feature_noise_std: noise,
                seed,
            },
            force,
        ),
        Command::ConvertCora {
            content,
            cites,
            out,
            force,
        } => commands::convert_cora(&content, &cites, &out, force),
    };

    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}
