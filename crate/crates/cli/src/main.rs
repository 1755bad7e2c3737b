//! `lchf`: render synthetic data, train forests, detect, evaluate and sweep.

mod config;
mod detect;
mod draw;
mod evaluate;
mod experiment;
mod hypotheses;
mod render;
mod source;
mod train;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags, config or spec files. Exit code 2.
    #[error("{0}")]
    Usage(String),
    /// Anything that failed while running the pipeline. Exit code 1.
    #[error(transparent)]
    Pipeline(lchf::Error),
}

impl From<lchf::Error> for CliError {
    fn from(e: lchf::Error) -> Self {
        match e {
            lchf::Error::Config(msg) => CliError::Usage(msg),
            other => CliError::Pipeline(other),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Pipeline(_) => 1,
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "lchf", version, about = "Latent-class Hough forest detection")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Random seed; required here or in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render training views and test scenes into frame archives.
    Render {
        /// Render spec (TOML).
        #[arg(long)]
        spec: PathBuf,
    },
    /// Train a forest on an archive of isolated object renders.
    Train {
        /// Frame archive, one isolated instance per frame.
        #[arg(long)]
        archive: PathBuf,
        /// Number of trees; overrides the config.
        #[arg(long)]
        trees: Option<usize>,
        /// Patch side as a fraction of the object's bounding box.
        #[arg(long)]
        patch_fraction: Option<f64>,
    },
    /// Detect the model's object in every frame of an archive.
    Detect {
        /// Frame archive to detect in.
        #[arg(long)]
        archive: PathBuf,
        /// Model file written by `train`.
        #[arg(long)]
        model: PathBuf,
        /// Leaf update rounds; 0 is one-shot detection.
        #[arg(long)]
        iterations: Option<usize>,
        /// Hypotheses kept per frame.
        #[arg(long)]
        top_n: Option<usize>,
    },
    /// Score detections against an archive's ground truth.
    Evaluate {
        /// Output directory of `detect`.
        #[arg(long)]
        detections: PathBuf,
        /// Frame archive holding the ground truth.
        #[arg(long)]
        archive: PathBuf,
    },
    /// Train and evaluate over a range of one parameter.
    Experiment {
        /// `<parameter>=<v1>,<v2>,...` with parameter one of patch_size_fraction,
        /// tree_count, iterations, bag_size.
        #[arg(long)]
        sweep: String,
        /// Archive of isolated training renders.
        #[arg(long)]
        training: PathBuf,
        /// Archive of test scenes.
        #[arg(long)]
        scenes: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = RunConfig::resolve(cli.config.as_deref(), cli.seed, cli.jobs)?;
    if let Some(j) = cfg.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot start {j} workers: {e}")))?;
    }
    let out = config::require_out(cli.out.as_ref())?.to_path_buf();
    cfg.set_path("out", &out);
    match cli.command {
        Command::Render { spec } => render::run(&mut cfg, &spec, &out),
        Command::Train {
            archive,
            trees,
            patch_fraction,
        } => {
            if let Some(t) = trees {
                cfg.train.tree_count = t;
            }
            if let Some(f) = patch_fraction {
                cfg.train.patch_size_fraction = f;
            }
            train::run(&mut cfg, &archive, &out)
        }
        Command::Detect {
            archive,
            model,
            iterations,
            top_n,
        } => {
            if let Some(i) = iterations {
                cfg.infer.iterations = i;
            }
            if let Some(n) = top_n {
                cfg.infer.top_n = n;
            }
            detect::run(&mut cfg, &archive, &model, &out)
        }
        Command::Evaluate { detections, archive } => evaluate::run(&mut cfg, &detections, &archive, &out),
        Command::Experiment {
            sweep,
            training,
            scenes,
        } => experiment::run(&mut cfg, &sweep, &training, &scenes, &out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
