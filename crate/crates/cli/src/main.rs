mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "gridshield",
    version,
    about = "Synthetic SCADA streams, FDI attacks and hybrid detection"
)]
pub struct Cli {
    /// JSON run configuration (case, scenario, detectors, evaluation, seeds).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output file, or directory for `eval`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads; defaults to the available hardware parallelism.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// error, warn, info, debug or trace.
    #[arg(long, global = true, default_value = "info")]
    pub log_level: log::LevelFilter,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a drifting-load measurement dataset, with attacks per the config.
    Generate(GenerateArgs),
    /// Inject an attack campaign into a clean dataset.
    Attack(AttackArgs),
    /// Score a dataset with one detector.
    Detect(DetectArgs),
    /// Fuse SE and ECD scores on the test rows of one split.
    Fuse(FuseArgs),
    /// Repeated-split ROC evaluation of several methods.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// MATPOWER case file; overrides the config.
    #[arg(long)]
    pub case: Option<PathBuf>,
    #[arg(long)]
    pub samples: Option<usize>,
    /// Derives the load, noise and attack seeds as S, S+1 and S+2.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct AttackArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Attack campaign seed; overrides the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the configured attack fraction.
    #[arg(long)]
    pub fraction: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DetectMethod {
    Se,
    Ecd,
    Corrdet,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    #[arg(long, value_enum)]
    pub method: DetectMethod,
    #[arg(long)]
    pub dataset: PathBuf,
    /// MATPOWER case for `se`; defaults to the config, then to the bundled
    /// case named in the dataset.
    #[arg(long)]
    pub case: Option<PathBuf>,
    /// Split seed; overrides the config.
    #[arg(long)]
    pub split_seed: Option<u64>,
    /// Score every row instead of the test rows (`se` only).
    #[arg(long)]
    pub all_rows: bool,
    /// Also write the fitted model as JSON (`ecd` and `corrdet`).
    #[arg(long)]
    pub model: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FuseArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub case: Option<PathBuf>,
    #[arg(long)]
    pub split_seed: Option<u64>,
    /// All-row SE scores from `detect --method se --all-rows`, instead of
    /// recomputing them.
    #[arg(long)]
    pub se_scores: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub case: Option<PathBuf>,
    /// Comma-separated subset of se, ecd, corrdet, fusion.
    #[arg(long, value_delimiter = ',', default_value = "se,ecd,corrdet,fusion")]
    pub methods: Vec<String>,
    #[arg(long)]
    pub repeats: Option<usize>,
    /// Split seed; overrides the config.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub se_scores: Option<PathBuf>,
}

/// How a command failed, which decides the exit code.
#[derive(Debug)]
pub enum Failure {
    /// Bad flags, configuration or missing inputs.
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<gridshield::Error> for Failure {
    fn from(e: gridshield::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

pub trait UsageContext<T> {
    fn usage(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> UsageContext<T> for Result<T, E> {
    fn usage(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Usage(e.into()))
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
    env_logger::Builder::new()
        .filter_level(cli.log_level)
        .format_timestamp(None)
        .init();
    if let Some(n) = cli.workers {
        if n == 0 {
            eprintln!("error: --workers must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
