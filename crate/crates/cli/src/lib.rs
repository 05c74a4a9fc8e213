//! Command-line driver: site generation, tree build, training, inference,
//! evaluation and rasterization, all driven by one JSON config.
//!
//! Exit codes: 0 success, 2 configuration error, 3 stage failure.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use thiserror::Error;

pub mod commands;
pub mod config;
pub mod manifest;

pub use commands::{
    cmd_build, cmd_eval, cmd_gen, cmd_infer, cmd_pipeline, cmd_raster, cmd_sweep, cmd_train, Run,
    SweepParam, SweepRow,
};
pub use config::{load, RunConfig, Seeds};
pub use manifest::{Manifest, Status};

#[derive(Debug, Error)]
pub enum StageError {
    #[error(transparent)]
    Core(#[from] envfield_core::Error),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{0}")]
    Missing(String),
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("stage `{stage}` failed: {source}")]
    Stage { stage: String, source: StageError },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Stage { .. } => 3,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "envfield",
    version,
    about = "Hierarchical neural nearest-site fields"
)]
pub struct Cli {
    /// JSON run configuration; defaults are used for missing keys.
    #[arg(short, long, global = true)]
    pub config: Option<PathBuf>,
    /// Override a config key, e.g. `--set train.epochs=20`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub sets: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate sites.json.
    Gen,
    /// Build tree.json from sites.json.
    Build,
    /// Sample datasets and train every node model.
    Train,
    /// Predict the nearest site for each row of a CSV file.
    Infer {
        #[arg(long)]
        input: PathBuf,
        /// Defaults to stdout.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Defaults to eval.beam.
        #[arg(long)]
        beam: Option<usize>,
    },
    /// Evaluate the trained tree against the exact oracle.
    Eval,
    /// Render label, error and envelope images.
    Raster,
    /// gen, build, sample, train, eval and raster in one go.
    Pipeline,
    /// Run the pipeline once per parameter value and tabulate the results.
    Sweep {
        #[arg(long, value_enum)]
        param: SweepParam,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
}

fn dispatch(cli: &Cli) -> Result<(), CliError> {
    let cfg = load(cli.config.as_deref(), &cli.sets)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| CliError::Config(format!("threads: {e}")))?;
    pool.install(|| match &cli.command {
        Command::Gen => cmd_gen(&cfg).map(drop),
        Command::Build => cmd_build(&cfg).map(drop),
        Command::Train => cmd_train(&cfg).map(drop),
        Command::Infer {
            input,
            output,
            beam,
        } => cmd_infer(&cfg, input, output.as_deref(), *beam).map(drop),
        Command::Eval => cmd_eval(&cfg).map(drop),
        Command::Raster => cmd_raster(&cfg),
        Command::Pipeline => cmd_pipeline(&cfg).map(drop),
        Command::Sweep { param, values } => cmd_sweep(&cfg, *param, values).map(drop),
    })
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
