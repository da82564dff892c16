//! Command-line front end for `hamgnn`.

pub mod checks;
pub mod commands;
pub mod config;
pub mod error;

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use hamgnn::graphdata::Split;
use hamgnn::train::Task;

use crate::config::RunConfig;
use crate::error::{config_error, Failure, Phase};

/// Environment variable capping the worker threads.
pub const THREADS_ENV: &str = "HAMGNN_THREADS";

#[derive(Debug, Parser)]
#[command(name = "hamgnn", version, about = "Hamiltonian graph node embeddings")]
pub struct Cli {
    /// Worker threads; overrides HAMGNN_THREADS.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum TaskArg {
    Classification,
    Link,
}

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::Classification => Task::Classification,
            TaskArg::Link => Task::Link,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum DeltaModeArg {
    Exact,
    Sampled,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model; writes the checkpoint, metrics.json and history.csv.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Dot-path override such as `train.lr=0.005`; repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Re-evaluate a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset directory; defaults to the one the checkpoint was trained on.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, value_enum)]
        task: Option<TaskArg>,
        #[arg(long)]
        out: PathBuf,
        /// Also write embeddings.csv, one row per node.
        #[arg(long)]
        embeddings: bool,
    },
    /// Train once per layer count and tabulate the results.
    SweepLayers {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated layer counts.
        #[arg(long, value_delimiter = ',', required = true)]
        layers: Vec<usize>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Gromov delta-hyperbolicity of a dataset's graph.
    Hyperbolicity {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_enum, default_value = "exact")]
        mode: DeltaModeArg,
        /// Quadruples drawn in sampled mode.
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Directory for delta.json and delta_histogram.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Disjoint union of two datasets with fresh 60/20/20 masks.
    Mix {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Numerical checks of one field variant; exits 0 iff all pass.
    Gradcheck {
        #[arg(long)]
        variant: String,
        #[arg(long = "dim", short = 'd', default_value_t = 8)]
        dim: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write a synthetic dataset, e.g. `--spec '{"kind":"tree","depth":3,"branching":2}'`.
    Synth {
        #[arg(long)]
        spec: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Thread count from the flag, then the environment.
pub fn thread_count(flag: Option<usize>) -> Result<Option<usize>, Failure> {
    let n = match flag {
        Some(n) => Some(n),
        None => match std::env::var(THREADS_ENV) {
            Ok(v) => Some(
                v.trim()
                    .parse::<usize>()
                    .map_err(|_| config_error(format!("{THREADS_ENV}={v:?} is not a thread count")))?,
            ),
            Err(_) => None,
        },
    };
    if n == Some(0) {
        return Err(config_error("thread count must be positive"));
    }
    Ok(n)
}

pub fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(n) = thread_count(cli.threads)? {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().setup()?;
    }
    match cli.command {
        Command::Train { config, overrides } => {
            let cfg = RunConfig::load(&config, &overrides).setup()?;
            commands::train(&cfg)
        }
        Command::Eval {
            checkpoint,
            dataset,
            task,
            out,
            embeddings,
        } => commands::eval(&commands::EvalArgs {
            checkpoint,
            dataset,
            task: task.map(Task::from),
            out,
            embeddings,
        }),
        Command::SweepLayers {
            config,
            layers,
            overrides,
        } => {
            let cfg = RunConfig::load(&config, &overrides).setup()?;
            commands::sweep_layers(&cfg, &layers)
        }
        Command::Hyperbolicity {
            dataset,
            mode,
            samples,
            seed,
            out,
        } => commands::hyperbolicity(&commands::HyperbolicityArgs {
            dataset,
            sampled: match mode {
                DeltaModeArg::Exact => None,
                DeltaModeArg::Sampled => Some((samples, seed)),
            },
            out,
        }),
        Command::Mix { a, b, out, seed } => commands::mix(&a, &b, &out, seed, Split::default()),
        Command::Gradcheck { variant, dim, seed } => commands::gradcheck(&variant, dim, seed),
        Command::Synth { spec, seed, out } => commands::synth(&spec, seed, &out),
    }
}
