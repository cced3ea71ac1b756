//! The `vstg` command: synthetic data generation, training, evaluation and
//! benchmark tables.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use vstg_core::{GridSpec, HyperParams, Selection, SynFamily};

pub mod benchmark;
pub mod config;
mod evaluate;
mod generate;
mod train;

pub use benchmark::{format_table, run_benchmark, BenchmarkOptions, BenchmarkRow, Method};

#[derive(Debug, Parser)]
#[command(name = "vstg", version, about = "Sparse low-rank multi-task learning")]
pub struct Cli {
    /// Worker threads for grid search and per-task updates (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset and its ground truth.
    Generate(GenerateArgs),
    /// Fit a model on a dataset directory.
    Train(TrainArgs),
    /// Score a saved model on a dataset directory.
    Eval(EvalArgs),
    /// Repeat the synthetic experiments over several seeds and summarize.
    Benchmark(BenchmarkArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FamilyArg {
    Syn1,
    Syn2,
    Syn3,
    Syn4,
}

impl From<FamilyArg> for SynFamily {
    fn from(f: FamilyArg) -> Self {
        match f {
            FamilyArg::Syn1 => SynFamily::Syn1,
            FamilyArg::Syn2 => SynFamily::Syn2,
            FamilyArg::Syn3 => SynFamily::Syn3,
            FamilyArg::Syn4 => SynFamily::Syn4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GridArg {
    Full,
    Reduced,
}

impl GridArg {
    pub fn spec(self) -> GridSpec {
        match self {
            GridArg::Full => GridSpec::full(),
            GridArg::Reduced => GridSpec::reduced(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CvArg {
    /// 10-fold per-task stratified cross-validation.
    Kfold,
    /// One validation split holding out 20% of each task.
    Holdout,
}

impl CvArg {
    pub fn selection(self) -> Selection {
        match self {
            CvArg::Kfold => Selection::KFold { folds: 10 },
            CvArg::Holdout => Selection::Holdout { fraction: 0.2 },
        }
    }
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, value_enum)]
    pub family: FamilyArg,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Standard deviation of the output noise.
    #[arg(long, default_value_t = 1.0)]
    pub noise_std: f64,
}

/// Hyperparameter flags; each overrides the config file.
#[derive(Debug, Args, Default, Clone)]
pub struct HyperArgs {
    /// Entrywise l1 weight on U.
    #[arg(long)]
    pub gamma1: Option<f64>,
    /// Row-wise l1,inf weight on U.
    #[arg(long)]
    pub gamma2: Option<f64>,
    /// Squared k-support weight on each column of V.
    #[arg(long)]
    pub mu: Option<f64>,
    /// Number of latent bases.
    #[arg(long = "K")]
    pub rank: Option<usize>,
    /// k-support parameter.
    #[arg(long = "k")]
    pub k: Option<usize>,
    /// ADMM penalty parameter.
    #[arg(long)]
    pub rho: Option<f64>,
}

impl HyperArgs {
    pub fn apply(&self, mut hp: HyperParams) -> HyperParams {
        if let Some(v) = self.gamma1 {
            hp.gamma1 = v;
        }
        if let Some(v) = self.gamma2 {
            hp.gamma2 = v;
        }
        if let Some(v) = self.mu {
            hp.mu = v;
        }
        if let Some(v) = self.rank {
            hp.rank = v;
        }
        if let Some(v) = self.k {
            hp.k = v;
        }
        if let Some(v) = self.rho {
            hp.rho = v;
        }
        hp
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for the model.
    #[arg(long)]
    pub out: PathBuf,
    /// TOML file with `[hyperparams]` and `[grid]` tables.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub hyper: HyperArgs,
    /// Choose hyperparameters by grid search before the final fit.
    #[arg(long, value_enum)]
    pub grid: Option<GridArg>,
    #[arg(long, value_enum)]
    pub cv: Option<CvArg>,
    /// Seed for fold assignment.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Scale each input variable by its maximum absolute training value.
    #[arg(long)]
    pub normalize: bool,
    /// Append a constant input for an intercept.
    #[arg(long)]
    pub add_bias: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PartArg {
    Train,
    Test,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Model directory written by `train`.
    #[arg(long)]
    pub model: PathBuf,
    /// Dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Which split to score.
    #[arg(long, value_enum, default_value = "test")]
    pub part: PartArg,
    /// Also write the metrics JSON here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    /// Families to run; repeat the flag for several (default: all four).
    #[arg(long, value_enum)]
    pub family: Vec<FamilyArg>,
    /// Number of repetitions.
    #[arg(long, default_value_t = 10)]
    pub seeds: u64,
    /// First seed; repetitions use consecutive seeds.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "reduced")]
    pub grid: GridArg,
    #[arg(long, value_enum)]
    pub cv: Option<CvArg>,
    /// TOML file with a `[grid]` table replacing the named grid.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Write the summary table here as well as to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write one row per family, method and seed here.
    #[arg(long)]
    pub details: Option<PathBuf>,
}

/// Failure of a command, carrying its exit status.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config or paths: exit code 2.
    Usage(String),
    /// Failure while computing or reading data: exit code 1.
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Usage(_) => ExitCode::from(2),
            CliError::Runtime(_) => ExitCode::from(1),
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Runtime(e) => write!(f, "{e:#}"),
        }
    }
}

impl From<vstg_core::Error> for CliError {
    fn from(e: vstg_core::Error) -> Self {
        match e {
            vstg_core::Error::Parameter(_) => CliError::Usage(e.to_string()),
            other => CliError::Runtime(other.into()),
        }
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

pub(crate) fn require_dir(path: &Path, what: &str) -> CliResult<()> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("{what} {} does not exist", path.display())))
    }
}

pub fn run(cli: Cli) -> CliResult<()> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| CliError::Runtime(anyhow::anyhow!("thread pool: {e}")))?;
    pool.install(|| match cli.command {
        Command::Generate(a) => generate::run(&a),
        Command::Train(a) => train::run(&a),
        Command::Eval(a) => evaluate::run(&a),
        Command::Benchmark(a) => benchmark::run(&a),
    })
}
